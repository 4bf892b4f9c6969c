"""Trip knowledge graph: entity/relation registries and the deduplicated
triple set built from observed trips and zone POI listings.

Relation kinds follow the five-row schema::

    (Veh_id)-[Choose_D_id]->(Zone)      core triple, private per vehicle
    (Veh_id)-[Trip_O_id]->(Zone)        private
    (Veh_id)-[Trip_Time_id]->(Time_span)  private
    (Veh_id)-[Trip_Day]->(Day_nat)      shared
    (Zone)-[Has_POI]->(POI)             shared

Dump format (UTF-8 text, one item per line, tab separated)::

    # comment
    !entity <kind>:<key>           declares an entity (isolated zones included)
    <kind>:<key> <rel_kind>[:<owner>] <kind>:<key>   one triple
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

from .errors import ConfigError, DataError
from .trip_data import TemporalConfig, TripRecord, map_day_nature, map_time_span

log = logging.getLogger(__name__)

VEH, DAY, SPAN, ZONE, POI = "Veh_id", "Day_nat", "Time_span", "Zone", "POI"
ENTITY_KINDS = (VEH, DAY, SPAN, ZONE, POI)

CHOOSE_D, TRIP_O, TRIP_TIME, TRIP_DAY, HAS_POI = "Choose_D_id", "Trip_O_id", "Trip_Time_id", "Trip_Day", "Has_POI"
RELATION_KINDS = (CHOOSE_D, TRIP_O, TRIP_TIME, TRIP_DAY, HAS_POI)
PRIVATE_KINDS = frozenset({CHOOSE_D, TRIP_O, TRIP_TIME})

SCHEMA = {
    CHOOSE_D: (VEH, ZONE),
    TRIP_O: (VEH, ZONE),
    TRIP_TIME: (VEH, SPAN),
    TRIP_DAY: (VEH, DAY),
    HAS_POI: (ZONE, POI),
}


@dataclass(frozen=True)
class EntityRef:
    kind: str
    key: object
    index: int

    @property
    def name(self) -> str:
        return f"{self.kind}:{self.key}"


@dataclass(frozen=True)
class RelationRef:
    kind: str
    owner: str | None
    index: int

    @property
    def name(self) -> str:
        return self.kind if self.owner is None else f"{self.kind}:{self.owner}"


@dataclass(frozen=True)
class GraphOptions:
    """Schema knobs used by ablation runs.

    ``private=False`` collapses each private kind into one shared relation.
    ``triple_kinds`` restricts which relation kinds are emitted; the core
    kind is always kept.
    """

    private: bool = True
    triple_kinds: frozenset[str] = frozenset(RELATION_KINDS)

    def __post_init__(self):
        unknown = set(self.triple_kinds) - set(RELATION_KINDS)
        if unknown:
            raise ConfigError(f"unknown relation kinds: {sorted(unknown)}")
        if CHOOSE_D not in self.triple_kinds:
            raise ConfigError("the core relation kind Choose_D_id cannot be disabled")

    @classmethod
    def core_only(cls, private: bool = True) -> "GraphOptions":
        return cls(private=private, triple_kinds=frozenset({CHOOSE_D}))


def canonical_poi(label: str) -> str:
    return " ".join(label.strip().lower().split())


def _kind_sort_key(kind, key):
    return (ENTITY_KINDS.index(kind), (0, key, "") if isinstance(key, int) else (1, 0, str(key)))


@dataclass
class TripKnowledgeGraph:
    entities: list[EntityRef]
    relations: list[RelationRef]
    triples: np.ndarray  # (n, 3) int64 rows (head, relation, tail), lexicographically sorted
    options: GraphOptions = field(default_factory=GraphOptions)
    skipped_records: int = 0

    def __post_init__(self):
        self._entity_index = {(e.kind, e.key): e.index for e in self.entities}
        self._relation_index = {(r.kind, r.owner): r.index for r in self.relations}
        self.triples = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        rel_kind = np.array([RELATION_KINDS.index(r.kind) for r in self.relations], dtype=np.int64)
        self._triple_kind = rel_kind[self.triples[:, 1]] if len(self.triples) else np.zeros(0, np.int64)
        self.zone_ids = sorted(e.key for e in self.entities if e.kind == ZONE)
        self.zone_entity = np.array([self._entity_index[(ZONE, z)] for z in self.zone_ids], dtype=np.int64)
        self.vehicle_ids = sorted(e.key for e in self.entities if e.kind == VEH)
        self._core: dict[str, np.ndarray] = {}
        core = self.triples[self._triple_kind == RELATION_KINDS.index(CHOOSE_D)]
        by_head: dict[int, list] = {}
        for row in core:
            by_head.setdefault(int(row[0]), []).append(row)
        for vid in self.vehicle_ids:
            rows = by_head.get(self._entity_index[(VEH, vid)], [])
            self._core[vid] = np.array(rows, dtype=np.int64).reshape(-1, 3)

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def entity(self, kind: str, key) -> int:
        try:
            return self._entity_index[(kind, key)]
        except KeyError:
            raise DataError(f"unknown entity {kind}:{key}") from None

    def has_entity(self, kind: str, key) -> bool:
        return (kind, key) in self._entity_index

    def relation(self, kind: str, owner: str | None = None) -> int:
        if kind in PRIVATE_KINDS and not self.options.private:
            owner = None
        try:
            return self._relation_index[(kind, owner)]
        except KeyError:
            raise DataError(f"unknown relation {kind}{'' if owner is None else ':' + owner}") from None

    def triple_kinds(self) -> np.ndarray:
        """Relation kind name per triple row."""
        return np.array(RELATION_KINDS, dtype=object)[self._triple_kind]

    def triples_of_kind(self, *kinds: str) -> np.ndarray:
        mask = np.isin(self._triple_kind, [RELATION_KINDS.index(k) for k in kinds])
        return self.triples[mask]

    def poi_mask(self) -> np.ndarray:
        return self._triple_kind == RELATION_KINDS.index(HAS_POI)

    def core_triples(self, vehicle_id: str) -> np.ndarray:
        if vehicle_id not in self._core:
            raise DataError(f"unknown vehicle {vehicle_id!r}")
        return self._core[vehicle_id]

    def core_relation(self, vehicle_id: str) -> int:
        """Relation index of the vehicle's Choose_D relation."""
        if vehicle_id not in self._core:
            raise DataError(f"unknown vehicle {vehicle_id!r}")
        try:
            return self.relation(CHOOSE_D, vehicle_id)
        except DataError:
            raise DataError(f"vehicle {vehicle_id!r} has no Choose_D_id relation") from None

    def observed_zones(self, vehicle_id: str) -> set[int]:
        tails = self.core_triples(vehicle_id)[:, 2]
        ent = self.entities
        return {ent[t].key for t in tails}

    # text dump --------------------------------------------------------

    def dumps(self) -> str:
        out = io.StringIO()
        out.write(f"# trip knowledge graph: {self.num_entities} entities, {self.num_relations} relations, "
                  f"{len(self.triples)} triples\n")
        out.write(f"# options private={int(self.options.private)} kinds={','.join(sorted(self.options.triple_kinds))}\n")
        for e in self.entities:
            out.write(f"!entity\t{e.name}\n")
        for r in self.relations:
            out.write(f"!relation\t{r.name}\n")
        ent, rel = self.entities, self.relations
        for h, r, t in self.triples:
            out.write(f"{ent[h].name}\t{rel[r].name}\t{ent[t].name}\n")
        return out.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    @classmethod
    def loads(cls, text: str) -> "TripKnowledgeGraph":
        entities: list[tuple[str, object]] = []
        relations: list[tuple[str, str | None]] = []
        raw_triples = []
        private, kinds = True, set(RELATION_KINDS)
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            if line.startswith("# options"):
                for tok in line.split()[2:]:
                    k, _, v = tok.partition("=")
                    if k == "private":
                        private = bool(int(v))
                    elif k == "kinds":
                        kinds = set(v.split(","))
                continue
            if line.startswith("#"):
                continue
            parts = line.split("\t")
            try:
                if parts[0] == "!entity":
                    entities.append(_parse_entity(parts[1]))
                elif parts[0] == "!relation":
                    kind, _, owner = parts[1].partition(":")
                    relations.append((kind, owner or None))
                else:
                    if len(parts) != 3:
                        raise ValueError("expected three tab-separated fields")
                    kind, _, owner = parts[1].partition(":")
                    raw_triples.append((_parse_entity(parts[0]), (kind, owner or None), _parse_entity(parts[2])))
            except (ValueError, IndexError) as exc:
                raise DataError(f"graph dump line {lineno}: {exc}") from None
        ent_refs = [EntityRef(k, key, i) for i, (k, key) in enumerate(entities)]
        rel_refs = [RelationRef(k, o, i) for i, (k, o) in enumerate(relations)]
        e_idx = {(e.kind, e.key): e.index for e in ent_refs}
        r_idx = {(r.kind, r.owner): r.index for r in rel_refs}
        try:
            rows = [(e_idx[h], r_idx[r], e_idx[t]) for h, r, t in raw_triples]
        except KeyError as exc:
            raise DataError(f"graph dump references undeclared item {exc}") from None
        return cls(ent_refs, rel_refs, np.array(rows, dtype=np.int64).reshape(-1, 3),
                   GraphOptions(private, frozenset(kinds)))


def _parse_entity(text: str):
    kind, sep, key = text.partition(":")
    if not sep or kind not in ENTITY_KINDS:
        raise ValueError(f"bad entity {text!r}")
    return kind, int(key) if kind == ZONE else key


def read_poi_table(stream: TextIO | str) -> list[tuple[int, str]]:
    """Read ``zone_id,poi_label`` rows (header required)."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or [h.strip().lower() for h in header[:2]] != ["zone_id", "poi_label"]:
        raise DataError("poi header must be zone_id,poi_label")
    rows = []
    for row in reader:
        if not row:
            continue
        try:
            rows.append((int(row[0]), row[1]))
        except (ValueError, IndexError):
            raise DataError(f"poi line {reader.line_num}: malformed row {row!r}") from None
    return rows


def write_poi_table(rows: Iterable[tuple[int, str]], stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["zone_id", "poi_label"])
    for z, label in rows:
        w.writerow([z, label])


def build_graph(
    observed: Iterable[TripRecord],
    poi_table: Iterable[tuple[int, str]],
    temporal: TemporalConfig,
    zones: Iterable[int] | None = None,
    targets: Iterable[str] | None = None,
    options: GraphOptions | None = None,
) -> TripKnowledgeGraph:
    """Assemble the graph. ``zones`` is the full zone universe; every zone gets
    an entity even when no trip or POI touches it, so it can be ranked."""
    options = options or GraphOptions()
    target_set = set(targets) if targets is not None else None
    kinds = options.triple_kinds
    facts: set[tuple] = set()
    zone_set = set(zones) if zones is not None else set()
    skipped = 0
    for rec in observed:
        if target_set is not None and rec.vehicle_id not in target_set:
            skipped += 1
            continue
        v = (VEH, rec.vehicle_id)
        own = rec.vehicle_id if options.private else None
        facts.add((v, (CHOOSE_D, own), (ZONE, rec.tzone)))
        if TRIP_O in kinds:
            facts.add((v, (TRIP_O, own), (ZONE, rec.fzone)))
        if TRIP_TIME in kinds:
            facts.add((v, (TRIP_TIME, own), (SPAN, map_time_span(rec.ftime, temporal))))
        if TRIP_DAY in kinds:
            facts.add((v, (TRIP_DAY, None), (DAY, map_day_nature(rec.date, temporal))))
        if zones is None:
            zone_set.update((rec.fzone, rec.tzone))
    if skipped:
        log.info("skipped %d records of non-target vehicles", skipped)
    if HAS_POI in kinds:
        for z, label in poi_table:
            if zones is not None and z not in zone_set:
                raise DataError(f"poi table references unknown zone {z}")
            zone_set.add(z)
            facts.add(((ZONE, z), (HAS_POI, None), (POI, canonical_poi(label))))

    ent_keys = {(ZONE, z) for z in zone_set}
    rel_keys = set()
    for h, r, t in facts:
        ent_keys.add(h)
        ent_keys.add(t)
        rel_keys.add(r)
    ent_sorted = sorted(ent_keys, key=lambda e: _kind_sort_key(*e))
    rel_sorted = sorted(rel_keys, key=lambda r: (RELATION_KINDS.index(r[0]), r[1] or ""))
    entities = [EntityRef(k, key, i) for i, (k, key) in enumerate(ent_sorted)]
    relations = [RelationRef(k, o, i) for i, (k, o) in enumerate(rel_sorted)]
    e_idx = {(e.kind, e.key): e.index for e in entities}
    r_idx = {(r.kind, r.owner): r.index for r in relations}
    rows = sorted((e_idx[h], r_idx[r], e_idx[t]) for h, r, t in facts)
    return TripKnowledgeGraph(entities, relations, np.array(rows, dtype=np.int64).reshape(-1, 3), options, skipped)


def unobserved_zones(graph: TripKnowledgeGraph, vehicle_id: str) -> list[int]:
    observed = graph.observed_zones(vehicle_id)
    return [z for z in graph.zone_ids if z not in observed]


def graph_stats(graph: TripKnowledgeGraph) -> dict:
    by_kind = {k: 0 for k in RELATION_KINDS}
    for k, n in zip(*np.unique(graph._triple_kind, return_counts=True)):
        by_kind[RELATION_KINDS[int(k)]] = int(n)
    n_poi = by_kind[HAS_POI]
    return {
        "entities": graph.num_entities,
        "relations": graph.num_relations,
        "triples": int(len(graph.triples)),
        "triples_by_kind": by_kind,
        "entities_by_kind": {k: sum(1 for e in graph.entities if e.kind == k) for k in ENTITY_KINDS},
        "f_poi": n_poi,
        "f_trip": int(len(graph.triples)) - n_poi,
    }
