import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tripkg.errors import ConfigError, DataError
from tripkg.evaluation import (
    DistributionH,
    DistributionU,
    aggregate_U,
    concentration_degree,
    confusion_degree,
    evaluate,
    individual_H,
    pooled_recall,
    spearman_rho,
    value_ranks,
)
from tripkg.ranking import RankingTable
from tripkg.trip_data import IndividualProfile


def profile(vid, future):
    return IndividualProfile(vid, 1, {1000: 1}, frozenset(future))


def table(vid, ranks):
    return RankingTable(vid, dict(ranks), "test")


def brute_rho(y):
    """Pearson correlation of average ranks, computed by hand."""
    n = len(y)
    ry = []
    for v in y:
        less = sum(1 for u in y if u < v)
        eq = sum(1 for u in y if u == v)
        ry.append(less + (eq + 1) / 2)
    rx = list(range(1, n + 1))
    mx, my = sum(rx) / n, sum(ry) / n
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    den = (sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry)) ** 0.5
    return 0.0 if den == 0 else num / den


def brute_df(p):
    idx = list(range(1, len(p) + 1))
    order = sorted(idx, key=lambda i: (-p[i - 1], i))
    iprime = {i: pos + 1 for pos, i in enumerate(order)}
    return sum(abs(iprime[i] - i) for i in idx)


def test_aggregate_counting():
    tables = {"a": table("a", {10: 2, 11: 1}), "b": table("b", {10: 2, 12: 4, 13: 1, 14: 3})}
    profiles = {"a": profile("a", {10}), "b": profile("b", {10, 12})}
    U = aggregate_U(tables, profiles, 4)
    assert U.mass[1] == pytest.approx(2 / 3)
    assert U.mass[3] == pytest.approx(1 / 3)
    assert U.min_candidates == 2


def test_aggregate_empty():
    U = aggregate_U({"a": table("a", {10: 1})}, {"a": profile("a", set())}, 3)
    assert U.empty


def test_h_examples():
    t = {"a": table("a", {1: 2, 2: 44, 3: 134, 4: 1})}
    H = individual_H(t, {"a": profile("a", {1, 2, 3})})
    assert H.means == {"a": 60.0}
    H = individual_H({"a": table("a", {1: 7})}, {"a": profile("a", {1})})
    assert H.means == {"a": 7.0}
    H = DistributionH({"a": 10.0, "b": 20.0}, 2.0)
    assert H.histogram() == [(9.0, 1), (19.0, 1)]


def test_rho_examples():
    assert spearman_rho(DistributionU.from_mass([0.5, 0.3, 0.2])) == pytest.approx(-1.0)
    assert spearman_rho(DistributionU.from_mass([0.1, 0.3, 0.6])) == pytest.approx(1.0)
    assert spearman_rho(DistributionU.from_mass([0.5, 0.2, 0.3])) == pytest.approx(-0.5)
    assert spearman_rho(DistributionU.from_mass([0.25] * 4)) == 0.0
    with pytest.raises(DataError):
        spearman_rho(DistributionU.from_mass([1.0]))


@given(st.lists(st.integers(0, 6), min_size=2, max_size=15))
def test_rho_matches_bruteforce(counts):
    U = DistributionU(np.array(counts))
    if sum(counts) == 0:
        return
    assert spearman_rho(U) == pytest.approx(brute_rho([c / sum(counts) for c in counts]), abs=1e-12)


def test_rho_common_support():
    U = DistributionU(np.array([5, 4, 3, 0, 0]), min_candidates=3)
    assert spearman_rho(U, "common") == pytest.approx(-1.0)
    assert spearman_rho(U, "nonzero") == pytest.approx(-1.0)
    with pytest.raises(ConfigError):
        spearman_rho(U, "bogus")


def test_df_examples():
    assert confusion_degree(DistributionU.from_mass([0.5, 0.3, 0.2])) == 0
    assert confusion_degree(DistributionU.from_mass([0.2, 0.3, 0.5])) == 4
    assert list(value_ranks(DistributionU.from_mass([0.2, 0.3, 0.5]))) == [3, 2, 1]
    # ties resolved by ascending rank: no confusion
    assert confusion_degree(DistributionU.from_mass([0.25, 0.25, 0.25, 0.25])) == 0


def test_df_random_permutations():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = rng.permutation(10) + 1.0
        U = DistributionU.from_mass(p)
        assert confusion_degree(U) == brute_df(list(U.mass))


@given(st.lists(st.integers(0, 5), min_size=1, max_size=12), st.floats(0.01, 100))
def test_df_scale_invariant(counts, scale):
    if sum(counts) == 0:
        return
    a = DistributionU(np.array(counts, dtype=float))
    b = DistributionU.from_mass(np.array(counts, dtype=float) * scale)
    assert confusion_degree(a) == confusion_degree(b) == brute_df(counts)


@given(st.lists(st.integers(0, 5), min_size=1, max_size=12))
def test_df_zero_iff_non_increasing(counts):
    if sum(counts) == 0:
        return
    non_inc = all(a >= b for a, b in zip(counts, counts[1:]))
    assert (confusion_degree(DistributionU(np.array(counts))) == 0) == non_inc


def test_dc_examples():
    U = DistributionU.from_mass([0.5, 0.3, 0.2])
    assert concentration_degree(U, 2) == pytest.approx(0.8)
    assert concentration_degree(U, 3) == 1.0
    with pytest.raises(ConfigError):
        concentration_degree(U, 0)
    with pytest.raises(ConfigError):
        concentration_degree(U, 4)


@given(st.lists(st.integers(0, 5), min_size=1, max_size=12))
def test_dc_monotone(counts):
    if sum(counts) == 0:
        return
    U = DistributionU(np.array(counts))
    vals = [concentration_degree(U, k) for k in range(1, len(counts) + 1)]
    assert all(0 <= v <= 1 for v in vals)
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    assert vals[-1] == 1.0


def test_dc_one_is_top1_recall():
    tables = {"a": table("a", {1: 1, 2: 2}), "b": table("b", {1: 2, 2: 1, 3: 3})}
    profiles = {"a": profile("a", {1}), "b": profile("b", {1, 3})}
    U = aggregate_U(tables, profiles, 3)
    assert concentration_degree(U, 1) == pooled_recall(tables, profiles, 1) == pytest.approx(1 / 3)


def test_evaluate_report_keys():
    tables = {"a": table("a", {1: 1, 2: 2, 3: 3})}
    report, U, H = evaluate(tables, {"a": profile("a", {1, 2})}, 3, ks=(1, 2, 9), method="x")
    assert set(report.concentration) == {1, 2}
    assert report.counts["pairs"] == 2
    assert '"method": "x"' in report.to_json()
    empty, _, _ = evaluate(tables, {"a": profile("a", set())}, 3)
    assert empty.spearman_rho is None and empty.rho_degenerate


def test_permutation_table_fills_support():
    zones = list(range(5))
    t = {"a": table("a", dict(zip(zones, [3, 1, 5, 2, 4])))}
    U = aggregate_U(t, {"a": profile("a", set(zones))}, 5)
    assert list(U.counts) == [1] * 5
