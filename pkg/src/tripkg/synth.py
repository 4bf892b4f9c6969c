"""Synthetic trip populations with planted group-affinity structure.

Zones are split into disjoint, equally sized affinity sets, one per group.
Each traveler belongs to one group and knows a random subset of its group's
set. Observation trips revisit known zones; future trips either explore an
unknown zone of the group's set, revisit, or go to a uniformly random zone.
Potential destinations therefore concentrate in the traveler's own affinity
set, while global zone popularity carries no group information.
"""

from __future__ import annotations

import datetime as dt
import io
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError
from .tkg import write_poi_table
from .trip_data import DEFAULT_TIME_SPANS, TripRecord, write_trips

POI_VOCAB = (
    "school", "hospital", "office", "mall", "residential", "park", "factory", "restaurant",
    "hotel", "bank", "market", "gym", "library", "station", "clinic", "cinema",
    "church", "museum", "stadium", "warehouse",
)


@dataclass(frozen=True)
class SynthConfig:
    num_individuals: int = 500
    num_zones: int = 40
    num_groups: int = 5
    zones_per_group_affinity: int = 8
    known_fraction: float = 0.5  # share of the affinity set a traveler knows before observation
    trips_mean: float = 6.0  # observation-period trips per traveler
    trips_dispersion: float = 4.0  # negative-binomial shape; larger = closer to Poisson
    observation_days: int = 7
    future_days: int = 14
    exploration_rate: float = 0.3
    noise_rate: float = 0.05
    observation_noise_rate: float = 0.05
    origin_affinity: bool = True  # trip origins chain from the previous destination
    group_time_preference: float = 0.5
    pois_per_zone: int = 3
    poi_group_fidelity: float = 0.8
    start_date: str = "2019-08-05"
    seed: int = 0

    def __post_init__(self):
        for name in ("known_fraction", "exploration_rate", "noise_rate", "observation_noise_rate",
                     "group_time_preference", "poi_group_fidelity"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.exploration_rate + self.noise_rate > 1.0:
            raise ConfigError("exploration_rate + noise_rate must not exceed 1")
        if min(self.num_individuals, self.num_zones, self.num_groups, self.zones_per_group_affinity) < 1:
            raise ConfigError("population, zone, group and affinity sizes must be positive")
        if self.zones_per_group_affinity > self.num_zones:
            raise ConfigError("affinity set larger than the zone universe")
        if self.num_groups * self.zones_per_group_affinity > self.num_zones:
            raise ConfigError("disjoint affinity sets do not fit in the zone universe")
        if self.trips_mean < 1 or self.trips_dispersion <= 0:
            raise ConfigError("trips_mean must be >= 1 and trips_dispersion positive")
        if self.observation_days < 1 or self.future_days < 1:
            raise ConfigError("observation and future windows need at least one day")
        dt.date.fromisoformat(self.start_date)


@dataclass
class SynthData:
    observed: list[TripRecord]
    future: list[TripRecord]
    groups: dict[str, int]
    affinity: list[list[int]]
    known: dict[str, list[int]]
    poi: list[tuple[int, str]]
    coords: dict[int, tuple[float, float]]
    zones: list[int]
    config: SynthConfig

    @property
    def records(self) -> list[TripRecord]:
        return self.observed + self.future

    def trips_csv(self) -> str:
        buf = io.StringIO()
        write_trips(self.records, buf)
        return buf.getvalue()

    def observed_csv(self) -> str:
        buf = io.StringIO()
        write_trips(self.observed, buf)
        return buf.getvalue()

    def poi_csv(self) -> str:
        buf = io.StringIO()
        write_poi_table(self.poi, buf)
        return buf.getvalue()

    def coords_csv(self) -> str:
        lines = ["zone_id,lat,lon"]
        lines += [f"{z},{lat:.6f},{lon:.6f}" for z, (lat, lon) in sorted(self.coords.items())]
        return "\n".join(lines) + "\n"

    def zones_csv(self) -> str:
        return "zone_id\n" + "".join(f"{z}\n" for z in self.zones)


def _trip_count(rng, mean, shape):
    # 1 + negative binomial with mean (mean - 1)
    extra = mean - 1.0
    if extra <= 0:
        return 1
    p = shape / (shape + extra)
    return 1 + int(rng.negative_binomial(shape, p))


def generate(cfg: SynthConfig) -> SynthData:
    rng = np.random.default_rng(cfg.seed)
    zones = list(range(1, cfg.num_zones + 1))
    perm = rng.permutation(zones)
    A = cfg.zones_per_group_affinity
    affinity = [sorted(int(z) for z in perm[g * A:(g + 1) * A]) for g in range(cfg.num_groups)]

    # zone centers scattered around a city center, unrelated to group membership
    lat0, lon0 = 30.94, 118.76
    coords = {z: (lat0 + float(rng.normal(0, 0.03)), lon0 + float(rng.normal(0, 0.035))) for z in zones}

    # POIs: each group has a characteristic label pool; zones draw mostly from it
    vocab = list(POI_VOCAB)
    group_pool = [sorted(rng.choice(len(vocab), size=3, replace=False).tolist()) for _ in range(cfg.num_groups)]
    zone_group = {z: g for g, zs in enumerate(affinity) for z in zs}
    poi = set()
    for z in zones:
        g = zone_group.get(z)
        for _ in range(cfg.pois_per_zone):
            if g is not None and rng.random() < cfg.poi_group_fidelity:
                label = vocab[group_pool[g][rng.integers(len(group_pool[g]))]]
            else:
                label = vocab[rng.integers(len(vocab))]
            poi.add((z, label))

    spans = DEFAULT_TIME_SPANS
    group_span = [int(rng.integers(len(spans))) for _ in range(cfg.num_groups)]
    start = dt.date.fromisoformat(cfg.start_date)
    width = len(str(cfg.num_individuals))

    observed, future = [], []
    groups, known = {}, {}
    n_known = max(1, int(round(cfg.known_fraction * A)))
    for n in range(cfg.num_individuals):
        vid = f"V{n + 1:0{width}d}"
        g = n % cfg.num_groups
        groups[vid] = g
        aff = affinity[g]
        kn = sorted(int(z) for z in rng.choice(aff, size=n_known, replace=False))
        known[vid] = kn
        location = int(rng.choice(kn))

        def trip(day_offset, dest, origin):
            if rng.random() < cfg.group_time_preference:
                s = spans[group_span[g]]
            else:
                s = spans[int(rng.integers(len(spans)))]
            ftime = int(rng.integers(s.start, s.end))
            org = origin if cfg.origin_affinity else int(rng.choice(zones))
            return TripRecord(vid, start + dt.timedelta(days=int(day_offset)), ftime, org, int(dest))

        n_obs = _trip_count(rng, cfg.trips_mean, cfg.trips_dispersion)
        obs_days = np.sort(rng.integers(0, cfg.observation_days, size=n_obs))
        visited: set[int] = set()
        for day in obs_days:
            if rng.random() < cfg.observation_noise_rate:
                dest = int(rng.choice(zones))
            else:
                dest = int(rng.choice(kn))
            observed.append(trip(day, dest, location))
            visited.add(dest)
            location = dest

        rate = cfg.trips_mean / cfg.observation_days
        n_fut = _trip_count(rng, max(1.0, rate * cfg.future_days), cfg.trips_dispersion)
        fut_days = np.sort(rng.integers(0, cfg.future_days, size=n_fut)) + cfg.observation_days
        for day in fut_days:
            u = rng.random()
            unexplored = [z for z in aff if z not in visited]
            if u < cfg.exploration_rate and unexplored:
                dest = int(rng.choice(unexplored))
            elif u < cfg.exploration_rate + cfg.noise_rate:
                dest = int(rng.choice(zones))
            else:
                dest = int(rng.choice(sorted(visited)))
            future.append(trip(day, dest, location))
            visited.add(dest)
            location = dest

    return SynthData(observed, future, groups, affinity, known, sorted(poi), coords, zones, cfg)


def config_dict(cfg: SynthConfig) -> dict:
    return asdict(cfg)
