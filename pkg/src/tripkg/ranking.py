"""Per-traveler rankings of unobserved zones: embedding distance ranking,
zone hotness ranking and their combination."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, TextIO

import numpy as np

from .embedding import EmbeddingModel, distances
from .errors import DataError
from .tkg import TripKnowledgeGraph, unobserved_zones
from .trip_data import TripRecord

EMBEDDING, HOTNESS, COMBINED = "embedding", "hotness", "combined"


@dataclass
class RankingTable:
    vehicle_id: str
    entries: dict[int, int]
    kind: str
    fallback: bool = False

    def rank_of(self, zone: int) -> int:
        return self.entries[zone]


def strict_less_ranks(values: Mapping[int, float]) -> dict[int, int]:
    """Rank = 1 + number of strictly smaller values (ties share a rank)."""
    zones = list(values)
    v = np.array([values[z] for z in zones], dtype=float)
    s = np.sort(v)
    ranks = 1 + np.searchsorted(s, v, side="left")
    return {z: int(r) for z, r in zip(zones, ranks)}


def order_ranks(scores: Mapping[int, float], descending: bool = True) -> dict[int, int]:
    """Distinct ranks 1..n by score, ties broken by ascending zone id."""
    zones = sorted(scores)
    key = (lambda z: (-scores[z], z)) if descending else (lambda z: (scores[z], z))
    return {z: i + 1 for i, z in enumerate(sorted(zones, key=key))}


def core_distances(model: EmbeddingModel, graph: TripKnowledgeGraph, vehicle_id: str,
                   zones: Iterable[int] | None = None, norm: str = "L2") -> dict[int, float]:
    zones = unobserved_zones(graph, vehicle_id) if zones is None else list(zones)
    h = graph.entity("Veh_id", vehicle_id)
    r = graph.core_relation(vehicle_id)
    tails = np.array([graph.entity("Zone", z) for z in zones], dtype=np.int64)
    triples = np.stack([np.full(len(tails), h), np.full(len(tails), r), tails], axis=1)
    d = distances(model, triples, norm)
    return dict(zip(zones, d.tolist()))


def embedding_ranking(model: EmbeddingModel, graph: TripKnowledgeGraph, vehicle_id: str,
                      norm: str = "L2") -> RankingTable:
    d = core_distances(model, graph, vehicle_id, norm=norm)
    return RankingTable(vehicle_id, strict_less_ranks(d), EMBEDDING)


@dataclass
class HotnessTable:
    counts: dict[int, int]
    ranks: dict[int, int] = field(init=False)

    def __post_init__(self):
        self.ranks = order_ranks(self.counts, descending=True)

    def restricted(self, vehicle_id: str, zones: Iterable[int]) -> RankingTable:
        """Hotness order over a candidate set, re-ranked to 1..n."""
        zones = list(zones)
        return RankingTable(vehicle_id, order_ranks({z: -self.ranks[z] for z in zones}), HOTNESS)


def hotness_ranking(observed: Iterable[TripRecord], zones: Iterable[int],
                    targets: Iterable[str] | None = None) -> HotnessTable:
    """Visit counts per destination zone over the target travelers' trips."""
    target_set = set(targets) if targets is not None else None
    counts = Counter()
    for r in observed:
        if target_set is None or r.vehicle_id in target_set:
            counts[r.tzone] += 1
    zone_list = sorted(set(zones))
    extra = set(counts) - set(zone_list)
    if extra:
        raise DataError(f"hotness counts reference zones outside the universe: {sorted(extra)}")
    return HotnessTable({z: counts.get(z, 0) for z in zone_list})


def combine_ranks(first: Mapping[int, int], second: Mapping[int, int]) -> dict[int, int]:
    """Sum two rankings and re-rank.

    Zones are visited in ascending id; a summed value already taken is bumped
    by one until free, so the summed keys are distinct and the final ranks
    form a permutation of 1..n.
    """
    if set(first) != set(second):
        missing = sorted(set(first) ^ set(second))
        raise DataError(f"ranking domains differ on zones {missing[:10]}")
    taken: set[int] = set()
    summed = {}
    for z in sorted(first):
        s = int(first[z]) + int(second[z])
        while s in taken:
            s += 1
        taken.add(s)
        summed[z] = s
    return strict_less_ranks(summed)


def combined_ranking(embedding: RankingTable, hotness: HotnessTable | Mapping[int, int],
                     vehicle_id: str | None = None) -> RankingTable:
    hot = hotness.ranks if isinstance(hotness, HotnessTable) else hotness
    zones = set(embedding.entries)
    missing = zones - set(hot)
    if missing:
        raise DataError(f"hotness table lacks zones {sorted(missing)[:10]}")
    ranks = combine_ranks(embedding.entries, {z: hot[z] for z in zones})
    return RankingTable(vehicle_id or embedding.vehicle_id, ranks, COMBINED)


def rank_all(model: EmbeddingModel, graph: TripKnowledgeGraph, vehicles: Iterable[str],
             norm: str = "L2") -> dict[str, RankingTable]:
    """Embedding rankings for many travelers.

    Distances go through the same row-wise kernel as ``embedding_ranking``;
    a BLAS matrix-vector product may round identical rows differently and
    split exact ties.
    """
    out = {}
    for vid in vehicles:
        d = core_distances(model, graph, vid, norm=norm)
        out[vid] = RankingTable(vid, strict_less_ranks(d) if d else {}, EMBEDDING)
    return out


RANKING_FIELDS = ("vehicle_id", "zone_id", "rank_kind", "rank")


def write_rankings(tables: Iterable[RankingTable], stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(RANKING_FIELDS)
    for table in tables:
        for z in sorted(table.entries):
            w.writerow([table.vehicle_id, z, table.kind, table.entries[z]])


def read_rankings(stream: TextIO | str) -> dict[str, RankingTable]:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != RANKING_FIELDS:
        raise DataError(f"ranking header must be {','.join(RANKING_FIELDS)}")
    tables: dict[str, RankingTable] = {}
    for row in reader:
        if not row:
            continue
        try:
            vid, z, kind, rank = row[0], int(row[1]), row[2], int(row[3])
        except (ValueError, IndexError):
            raise DataError(f"ranking line {reader.line_num}: malformed row {row!r}") from None
        t = tables.setdefault(vid, RankingTable(vid, {}, kind))
        t.entries[z] = rank
    return tables
