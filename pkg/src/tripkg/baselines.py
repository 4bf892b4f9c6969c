"""Reference rankers sharing the RankingTable contract: random choice,
matrix-decomposition imputation, collaborative filtering and the
jump-size (EPR/PEPR style) location models."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np
import scipy.linalg

from .errors import ConfigError, DataError, DecompositionError
from .ranking import HotnessTable, RankingTable, combine_ranks, order_ranks
from .trip_data import TripRecord

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_008.8


@dataclass
class VisitMatrix:
    vehicles: list[str]
    zones: list[int]
    counts: np.ndarray  # (len(vehicles), len(zones)) trip counts

    def row(self, vehicle_id: str) -> np.ndarray:
        return self.counts[self.vehicles.index(vehicle_id)]

    def unobserved(self, i: int) -> list[int]:
        return [z for z, c in zip(self.zones, self.counts[i]) if c == 0]


def visit_matrix(observed: Iterable[TripRecord], vehicles: Sequence[str], zones: Sequence[int]) -> VisitMatrix:
    vehicles, zones = list(vehicles), sorted(zones)
    vi = {v: i for i, v in enumerate(vehicles)}
    zi = {z: j for j, z in enumerate(zones)}
    m = np.zeros((len(vehicles), len(zones)))
    for r in observed:
        if r.vehicle_id in vi:
            m[vi[r.vehicle_id], zi[r.tzone]] += 1
    return VisitMatrix(vehicles, zones, m)


def _tables_from_scores(matrix: VisitMatrix, scores: np.ndarray, kind: str,
                        fallback: np.ndarray | None = None) -> dict[str, RankingTable]:
    out = {}
    for i, vid in enumerate(matrix.vehicles):
        mask = matrix.counts[i] == 0
        cand = {z: float(s) for z, s, m in zip(matrix.zones, scores[i], mask) if m}
        out[vid] = RankingTable(vid, order_ranks(cand, descending=True), kind,
                                bool(fallback[i]) if fallback is not None else False)
    return out


def random_ranking(vehicle_id: str, zones: Iterable[int], seed: int) -> RankingTable:
    """Uniform random permutation of the candidate zones.

    The stream is keyed by (seed, vehicle id) so a traveler's table does not
    depend on which other travelers are ranked.
    """
    zones = sorted(zones)
    key = int.from_bytes(vehicle_id.encode("utf-8"), "little") % (2**63)
    rng = np.random.default_rng([seed, key])
    perm = rng.permutation(len(zones)) + 1
    return RankingTable(vehicle_id, dict(zip(zones, perm.tolist())), "random")


# -- matrix decomposition -------------------------------------------------

MD_METHODS = ("UV", "QR", "SVD")


def reconstruct(a: np.ndarray, method: str, rank: int, seed: int = 0, iterations: int = 100,
                reg: float = 0.0) -> np.ndarray:
    """Rank-``rank`` reconstruction of ``a`` by the named decomposition."""
    method = method.upper()
    if method not in MD_METHODS:
        raise ConfigError(f"unknown decomposition {method!r}; expected one of {MD_METHODS}")
    if a.size == 0:
        raise DecompositionError(method, "matrix is empty")
    kmax = min(a.shape)
    if not 1 <= rank <= kmax:
        raise DecompositionError(method, f"rank {rank} outside 1..{kmax}")
    try:
        if method == "SVD":
            u, s, vt = np.linalg.svd(a, full_matrices=False)
            out = (u[:, :rank] * s[:rank]) @ vt[:rank]
        elif method == "QR":
            q, r, piv = scipy.linalg.qr(a, mode="economic", pivoting=True)
            approx = q[:, :rank] @ r[:rank]
            out = np.empty_like(approx)
            out[:, piv] = approx
        else:
            out = _als(a, rank, seed, iterations, reg)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise DecompositionError(method, str(exc)) from None
    if not np.isfinite(out).all():
        raise DecompositionError(method, "non-finite reconstruction")
    return out


def _als(a, rank, seed, iterations, reg):
    """Alternating least squares for ``a ~ U V^T``."""
    rng = np.random.default_rng(seed)
    n, m = a.shape
    v = rng.normal(scale=1.0 / math.sqrt(rank), size=(m, rank))
    eye = reg * np.eye(rank)
    u = np.zeros((n, rank))
    for _ in range(iterations):
        u = np.linalg.lstsq(v.T @ v + eye, v.T @ a.T, rcond=None)[0].T
        v = np.linalg.lstsq(u.T @ u + eye, u.T @ a, rcond=None)[0].T
    return u @ v.T


def md_ranking(matrix: VisitMatrix, method: str = "SVD", rank: int = 10, seed: int = 0) -> dict[str, RankingTable]:
    rank = min(rank, min(matrix.counts.shape))
    filled = reconstruct(matrix.counts, method, rank, seed)
    return _tables_from_scores(matrix, filled, f"md_{method.lower()}")


# -- collaborative filtering ----------------------------------------------


def _cosine(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=1)
    safe = np.where(n > 0, n, 1.0)
    y = x / safe[:, None]
    s = y @ y.T
    s[n == 0, :] = 0.0
    s[:, n == 0] = 0.0
    return s


def _top_k_mask(sim: np.ndarray, k: int) -> np.ndarray:
    """Per row, keep the k most similar positive entries (ties by index)."""
    mask = np.zeros_like(sim, dtype=bool)
    for i in range(sim.shape[0]):
        row = sim[i]
        cand = np.flatnonzero(row > 0)
        if len(cand) == 0:
            continue
        order = cand[np.lexsort((cand, -row[cand]))]
        mask[i, order[:k]] = True
    return mask


def cf_ranking(matrix: VisitMatrix, mode: str = "user", k_neighbors: int = 20) -> dict[str, RankingTable]:
    """Cosine neighborhood scoring over the trip-count matrix."""
    if k_neighbors < 1:
        raise ConfigError("k_neighbors must be at least 1")
    if mode not in ("user", "item"):
        raise ConfigError(f"mode must be 'user' or 'item', got {mode!r}")
    a = matrix.counts
    if a.size == 0:
        raise DataError("visit matrix is empty")
    if mode == "user":
        sim = _cosine(a)
        np.fill_diagonal(sim, 0.0)
        w = np.where(_top_k_mask(sim, k_neighbors), sim, 0.0)
        norm = w.sum(axis=1, keepdims=True)
        scores = (w @ a) / np.where(norm > 0, norm, 1.0)
    else:
        sim = _cosine(a.T)
        np.fill_diagonal(sim, 0.0)
        w = np.where(_top_k_mask(sim, k_neighbors), sim, 0.0)  # row j: neighbors of item j
        norm = w.sum(axis=1)
        scores = (a @ w.T) / np.where(norm > 0, norm, 1.0)[None, :]
    empty = a.sum(axis=1) == 0
    if empty.any():
        log.warning("%d travelers without trips fall back to zone-id order", int(empty.sum()))
        scores[empty] = 0.0
    return _tables_from_scores(matrix, scores, f"cf_{mode}", fallback=empty)


# -- jump-size models -------------------------------------------------------


def read_coords(stream: TextIO | str) -> dict[int, tuple[float, float]]:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or [h.strip().lower() for h in header[:3]] != ["zone_id", "lat", "lon"]:
        raise DataError("coordinate header must be zone_id,lat,lon")
    out = {}
    for row in reader:
        if not row:
            continue
        try:
            out[int(row[0])] = (float(row[1]), float(row[2]))
        except (ValueError, IndexError):
            raise DataError(f"coordinate line {reader.line_num}: malformed row {row!r}") from None
    return out


def haversine_m(a: tuple[float, float], b: tuple[float, float]) -> float:
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def _coord(coords, z):
    try:
        return coords[z]
    except KeyError:
        raise DataError(f"no coordinates for zone {z}") from None


@dataclass
class JumpSizeDistribution:
    bin_width: float
    mass: dict[int, float]  # bin index -> probability; bin k covers [(k - 1/2) w, (k + 1/2) w)

    def bin_of(self, distance: float) -> int:
        return int(math.floor(distance / self.bin_width + 0.5))

    def prob(self, distance: float) -> float:
        return self.mass.get(self.bin_of(distance), 0.0)


def jump_size_distribution(observed: Iterable[TripRecord], coords: Mapping[int, tuple[float, float]],
                           bin_width: float = 500.0) -> JumpSizeDistribution:
    """Empirical distribution of origin-to-destination center distances."""
    if bin_width <= 0:
        raise ConfigError("bin_width must be positive")
    counts: dict[int, int] = {}
    total = 0
    probe = JumpSizeDistribution(bin_width, {})
    for r in observed:
        d = haversine_m(_coord(coords, r.fzone), _coord(coords, r.tzone))
        b = probe.bin_of(d)
        counts[b] = counts.get(b, 0) + 1
        total += 1
    if total == 0:
        raise DataError("no trips to build the jump-size distribution from")
    return JumpSizeDistribution(bin_width, {b: c / total for b, c in sorted(counts.items())})


def epr_ranking(vehicle_id: str, present_zone: int, candidates: Iterable[int], J: JumpSizeDistribution,
                coords: Mapping[int, tuple[float, float]]) -> RankingTable:
    origin = _coord(coords, present_zone)
    scores = {z: J.prob(haversine_m(origin, _coord(coords, z))) for z in candidates}
    return RankingTable(vehicle_id, order_ranks(scores, descending=True), "epr")


def pepr_ranking(epr: RankingTable, hotness: HotnessTable | Mapping[int, int]) -> RankingTable:
    hot = hotness.ranks if isinstance(hotness, HotnessTable) else hotness
    missing = set(epr.entries) - set(hot)
    if missing:
        raise DataError(f"hotness table lacks zones {sorted(missing)[:10]}")
    return RankingTable(epr.vehicle_id, combine_ranks(epr.entries, {z: hot[z] for z in epr.entries}), "pepr")


def present_zones(observed: Iterable[TripRecord], future: Iterable[TripRecord] = (),
                  mode: str = "last_observed") -> dict[str, int]:
    """Present location per traveler for the jump-size models.

    ``last_observed``: destination of the last observed trip.
    ``first_new_trip``: origin of the first future trip into a zone not
    visited during observation (falls back to ``last_observed``).
    """
    if mode not in ("last_observed", "first_new_trip"):
        raise ConfigError(f"unknown present-zone mode {mode!r}")
    last: dict[str, tuple] = {}
    seen: dict[str, set] = {}
    for r in observed:
        key = (r.date, r.ftime)
        if r.vehicle_id not in last or key >= last[r.vehicle_id][0]:
            last[r.vehicle_id] = (key, r.tzone)
        seen.setdefault(r.vehicle_id, set()).add(r.tzone)
    out = {v: z for v, (_, z) in last.items()}
    if mode == "first_new_trip":
        first: dict[str, tuple] = {}
        for r in future:
            if r.vehicle_id in seen and r.tzone not in seen[r.vehicle_id]:
                key = (r.date, r.ftime)
                if r.vehicle_id not in first or key < first[r.vehicle_id][0]:
                    first[r.vehicle_id] = (key, r.fzone)
        out.update({v: z for v, (_, z) in first.items()})
    return out
