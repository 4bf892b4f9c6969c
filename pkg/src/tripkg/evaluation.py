"""Aggregate predicted ranks of held-out new destinations and score them.

``U`` pools the predicted ranks of every traveler's potential destinations
into a normalized histogram over ranks 1..R. ``H`` is the histogram of each
traveler's mean predicted rank.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, TextIO

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, DataError
from .ranking import RankingTable
from .trip_data import IndividualProfile

log = logging.getLogger(__name__)

RHO_SUPPORTS = ("common", "full", "nonzero")


@dataclass
class DistributionU:
    counts: np.ndarray  # counts[i - 1] = pairs predicted at rank i
    min_candidates: int = 0  # smallest candidate-set size among contributing travelers

    @property
    def support(self) -> int:
        return len(self.counts)

    @property
    def sample_count(self) -> int:
        return int(self.counts.sum())

    @property
    def mass(self) -> np.ndarray:
        n = self.counts.sum()
        if n == 0:
            return np.zeros(len(self.counts))
        return self.counts / n

    @property
    def empty(self) -> bool:
        return self.sample_count == 0

    @classmethod
    def from_ranks(cls, ranks: Iterable[int], support: int, min_candidates: int | None = None) -> "DistributionU":
        counts = np.zeros(support, dtype=np.int64)
        for r in ranks:
            if not 1 <= r <= support:
                raise DataError(f"rank {r} outside support 1..{support}")
            counts[r - 1] += 1
        return cls(counts, support if min_candidates is None else min_candidates)

    @classmethod
    def from_mass(cls, mass) -> "DistributionU":
        """Build from an explicit mass vector (scaled to integer-free counts)."""
        m = np.asarray(mass, dtype=float)
        if np.any(m < 0):
            raise DataError("mass must be nonnegative")
        return cls(m, len(m))


def potential_ranks(tables: Mapping[str, RankingTable], profiles: Mapping[str, IndividualProfile]) -> dict[str, list[int]]:
    """Predicted ranks of each traveler's potential destinations (travelers without any are omitted)."""
    out = {}
    for vid, prof in profiles.items():
        pot = sorted(prof.potential_destinations)
        if not pot:
            continue
        table = tables.get(vid)
        if table is None:
            raise DataError(f"no ranking table for traveler {vid!r}")
        try:
            out[vid] = [table.entries[z] for z in pot]
        except KeyError as exc:
            raise DataError(f"ranking for {vid!r} lacks potential destination {exc}") from None
    return out


def aggregate_U(tables: Mapping[str, RankingTable], profiles: Mapping[str, IndividualProfile],
                support: int) -> DistributionU:
    per = potential_ranks(tables, profiles)
    ranks = [r for rs in per.values() for r in rs]
    cands = [len(tables[v].entries) for v in per]
    return DistributionU.from_ranks(ranks, support, min(cands) if cands else 0)


@dataclass
class DistributionH:
    means: dict[str, float]
    bin_width: float = 2.0

    def histogram(self) -> list[tuple[float, int]]:
        """``(bin lower edge, count)`` pairs, bins anchored at rank 1."""
        if not self.means:
            return []
        w = self.bin_width
        bins: dict[int, int] = {}
        for m in self.means.values():
            b = int(math.floor((m - 1.0) / w + 1e-12))
            bins[b] = bins.get(b, 0) + 1
        return [(1.0 + b * w, bins[b]) for b in sorted(bins)]

    def summary(self) -> dict:
        if not self.means:
            return {"individuals": 0, "mean": None, "std": None}
        v = np.array(list(self.means.values()))
        return {"individuals": len(v), "mean": float(v.mean()), "std": float(v.std())}


def individual_H(tables: Mapping[str, RankingTable], profiles: Mapping[str, IndividualProfile],
                 bin_width: float = 2.0) -> DistributionH:
    if bin_width <= 0:
        raise ConfigError("bin width must be positive")
    per = potential_ranks(tables, profiles)
    return DistributionH({v: float(np.mean(rs)) for v, rs in per.items()}, bin_width)


def _rho_values(U: DistributionU, support: str) -> np.ndarray:
    if support not in RHO_SUPPORTS:
        raise ConfigError(f"rho support must be one of {RHO_SUPPORTS}")
    m = U.mass
    if support == "common":
        return m[: max(U.min_candidates, 0)]
    if support == "nonzero":
        return m[m > 0]
    return m


def spearman_rho(U: DistributionU, support: str = "full") -> float:
    """Rank correlation between rank position and mass (average ranks for ties).

    ``support``: ``full`` uses ranks 1..R; ``nonzero`` keeps only ranks with
    mass; ``common`` keeps ranks 1..m where m is the smallest candidate-set
    size among contributing travelers, so every traveler could have produced
    every kept rank. Returns 0.0 when the mass is constant.
    """
    y = _rho_values(U, support)
    if len(y) < 2:
        raise DataError("rank correlation needs at least two ranks")
    ry = rankdata(y)
    rx = np.arange(1, len(y) + 1, dtype=float)
    ry = ry - ry.mean()
    rx = rx - rx.mean()
    denom = math.sqrt(float(np.dot(rx, rx)) * float(np.dot(ry, ry)))
    if denom == 0.0:
        log.warning("rank correlation is degenerate (constant mass); reporting 0")
        return 0.0
    return float(np.clip(np.dot(rx, ry) / denom, -1.0, 1.0))


def rho_is_degenerate(U: DistributionU, support: str = "full") -> bool:
    y = _rho_values(U, support)
    return len(y) < 2 or bool(np.all(y == y[0]))


def value_ranks(U: DistributionU) -> np.ndarray:
    """i' for every rank i: position of p(i) in descending order, ties by ascending i."""
    m = U.mass
    order = np.lexsort((np.arange(len(m)), -m))
    iprime = np.empty(len(m), dtype=np.int64)
    iprime[order] = np.arange(1, len(m) + 1)
    return iprime


def confusion_degree(U: DistributionU) -> int:
    i = np.arange(1, U.support + 1)
    return int(np.abs(value_ranks(U) - i).sum())


def concentration_degree(U: DistributionU, k: int) -> float:
    if not 1 <= k <= U.support:
        raise ConfigError(f"k={k} outside 1..{U.support}")
    total = U.counts.sum()
    if total == 0:
        raise DataError("concentration degree is undefined for an empty distribution")
    if k == U.support:
        return 1.0
    return float(U.counts[:k].sum() / total)


def pooled_recall(tables: Mapping[str, RankingTable], profiles: Mapping[str, IndividualProfile], k: int) -> float:
    """Share of (traveler, potential destination) pairs predicted within the top k."""
    hit = total = 0
    for vid, prof in profiles.items():
        for z in prof.potential_destinations:
            total += 1
            hit += tables[vid].entries[z] <= k
    if total == 0:
        raise DataError("no potential destinations")
    return hit / total


@dataclass
class EvalReport:
    method: str
    spearman_rho: float | None
    rho_support: str
    rho_degenerate: bool
    confusion_degree: int | None
    concentration: dict[int, float]
    counts: dict
    H: dict
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        body = {
            "method": self.method,
            "spearman_rho": self.spearman_rho,
            "rho_support": self.rho_support,
            "rho_degenerate": self.rho_degenerate,
            "confusion_degree": self.confusion_degree,
            "concentration": {str(k): v for k, v in sorted(self.concentration.items())},
            "counts": self.counts,
            "H": self.H,
            "config": self.config,
        }
        return json.dumps(body, indent=2, sort_keys=True) + "\n"


def evaluate(tables: Mapping[str, RankingTable], profiles: Mapping[str, IndividualProfile], support: int,
             ks: Iterable[int] = (1, 5, 10, 20), rho_support: str = "common", bin_width: float = 2.0,
             method: str = "", config: dict | None = None) -> tuple[EvalReport, DistributionU, DistributionH]:
    U = aggregate_U(tables, profiles, support)
    H = individual_H(tables, profiles, bin_width)
    counts = {
        "individuals": len(profiles),
        "individuals_with_potential": len(H.means),
        "pairs": U.sample_count,
        "support": U.support,
        "min_candidates": U.min_candidates,
    }
    if U.empty:
        report = EvalReport(method, None, rho_support, True, None, {}, counts, H.summary(), config or {})
        return report, U, H
    ks = sorted({k for k in ks if 1 <= k <= support})
    try:
        rho = spearman_rho(U, rho_support)
        degenerate = rho_is_degenerate(U, rho_support)
    except DataError:
        rho, degenerate = None, True
    report = EvalReport(method, rho, rho_support, degenerate, confusion_degree(U),
                        {k: concentration_degree(U, k) for k in ks}, counts, H.summary(), config or {})
    return report, U, H


def write_U(U: DistributionU, stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["rank", "mass"])
    for i, m in enumerate(U.mass, 1):
        w.writerow([i, repr(float(m))])


def write_H(H: DistributionH, stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["bin", "count"])
    for b, c in H.histogram():
        w.writerow([repr(b), c])


def write_iprime(U: DistributionU, stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["rank", "value_rank"])
    for i, ip in enumerate(value_ranks(U), 1):
        w.writerow([i, int(ip)])
