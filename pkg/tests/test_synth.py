import dataclasses
import datetime as dt

import pytest

from tripkg.baselines import read_coords
from tripkg.errors import ConfigError
from tripkg.synth import SynthConfig, generate
from tripkg.tkg import read_poi_table
from tripkg.trip_data import ObservationSplit, build_profiles, parse_trips, split_periods


def test_same_seed_identical_files():
    cfg = SynthConfig(num_individuals=50, seed=11)
    a, b = generate(cfg), generate(cfg)
    assert a.trips_csv() == b.trips_csv()
    assert a.poi_csv() == b.poi_csv()
    assert a.coords_csv() == b.coords_csv()
    assert generate(dataclasses.replace(cfg, seed=12)).trips_csv() != a.trips_csv()


def test_files_round_trip():
    data = generate(SynthConfig(num_individuals=80, seed=2))
    recs = parse_trips(data.trips_csv(), set(data.zones))
    assert recs == data.records
    assert len(read_poi_table(data.poi_csv())) == len(data.poi)
    assert set(read_coords(data.coords_csv())) == set(data.zones)


def test_affinity_sets_disjoint_and_membership():
    data = generate(SynthConfig(num_individuals=20, seed=1))
    flat = [z for s in data.affinity for z in s]
    assert len(flat) == len(set(flat)) == 40
    assert all(set(data.known[v]) <= set(data.affinity[g]) for v, g in data.groups.items())


def test_no_exploration_no_potential_in_affinity():
    cfg = SynthConfig(num_individuals=40, known_fraction=1.0, exploration_rate=0.0, noise_rate=0.0,
                      observation_noise_rate=0.0, trips_mean=40, seed=5)
    data = generate(cfg)
    split = ObservationSplit.from_days(dt.date.fromisoformat(cfg.start_date), cfg.observation_days, cfg.future_days)
    parts = split_periods(data.records, split)
    profiles = build_profiles(parts.observed, parts.future)
    for vid, p in profiles.items():
        aff = set(data.affinity[data.groups[vid]])
        if aff <= p.observed_destinations:
            assert not (p.potential_destinations & aff)


def test_default_population_has_potential_destinations():
    fracs = []
    for seed in range(20):
        cfg = SynthConfig(seed=seed)
        data = generate(cfg)
        split = ObservationSplit.from_days(dt.date.fromisoformat(cfg.start_date), 7, 14)
        parts = split_periods(data.records, split)
        profiles = build_profiles(parts.observed, parts.future)
        fracs.append(sum(1 for p in profiles.values() if p.potential_destinations) / len(profiles))
    assert min(fracs) >= 0.9


@pytest.mark.parametrize("kw", [
    {"zones_per_group_affinity": 41},
    {"num_groups": 6},
    {"exploration_rate": 1.2},
    {"exploration_rate": 0.7, "noise_rate": 0.5},
])
def test_invalid_configs(kw):
    with pytest.raises(ConfigError):
        SynthConfig(**kw)
