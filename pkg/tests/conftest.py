import datetime as dt

import pytest

from tripkg.synth import SynthConfig, generate
from tripkg.tkg import build_graph
from tripkg.trip_data import ObservationSplit, TemporalConfig, build_profiles, split_periods

CRITERIA_LINES = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_synth():
    cfg = SynthConfig(num_individuals=60, num_zones=12, num_groups=3, zones_per_group_affinity=4, seed=7)
    return generate(cfg)


@pytest.fixture(scope="session")
def small_world(small_synth):
    split = ObservationSplit.from_days(dt.date(2019, 8, 5), 7, 14)
    parts = split_periods(small_synth.records, split)
    profiles = build_profiles(parts.observed, parts.future)
    graph = build_graph(parts.observed, small_synth.poi, TemporalConfig(), zones=small_synth.zones)
    return parts, profiles, graph


def write_run_config(root, individuals=120, dim=16, epochs=60, seed=0):
    """INI config for a small synthetic end-to-end run inside ``root``."""
    data = root / "data"
    text = f"""[paths]
trips = {data / 'trips.csv'}
poi = {data / 'poi.csv'}
coords = {data / 'coords.csv'}
zones = {data / 'zones.csv'}
output = {root / 'out'}

[synth]
num_individuals = {individuals}

[train]
dim = {dim}
epochs = {epochs}

[run]
seed = {seed}
threads = 1
"""
    path = root / "run.ini"
    path.write_text(text)
    return path
