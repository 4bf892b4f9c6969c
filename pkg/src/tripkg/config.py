"""Pipeline configuration: one INI file with a section per stage.

Example::

    [paths]
    trips = data/trips.csv
    poi = data/poi.csv
    coords = data/coords.csv
    output = out

    [split]
    start = 2019-08-05
    observation_days = 7
    future_days = 14

    [train]
    dim = 32
    epochs = 500

Unknown keys are rejected so typos fail before any work starts.
"""

from __future__ import annotations

import configparser
import dataclasses
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path

from .embedding import TrainConfig
from .errors import ConfigError
from .synth import SynthConfig
from .tkg import RELATION_KINDS, GraphOptions
from .trip_data import DEFAULT_TIME_SPANS, FilterThresholds, ObservationSplit, TemporalConfig, format_hms


@dataclass
class Paths:
    trips: str = "trips.csv"
    poi: str = "poi.csv"
    coords: str = "coords.csv"
    zones: str = ""
    output: str = "out"


@dataclass
class SplitSection:
    start: str = "2019-08-05"
    observation_days: int = 7
    future_days: int = 14

    def split(self) -> ObservationSplit:
        try:
            start = dt.date.fromisoformat(self.start)
        except ValueError:
            raise ConfigError(f"split.start is not an ISO date: {self.start!r}") from None
        if self.observation_days < 1 or self.future_days < 1:
            raise ConfigError("split windows need at least one day")
        return ObservationSplit.from_days(start, self.observation_days, self.future_days)


@dataclass
class TemporalSection:
    spans: str = ",".join(f"{s.label}@{format_hms(s.start)}" for s in DEFAULT_TIME_SPANS)
    holidays: str = ""
    weekend_is_holiday: bool = True

    def temporal(self) -> TemporalConfig:
        try:
            days = [dt.date.fromisoformat(x.strip()) for x in self.holidays.split(",") if x.strip()]
        except ValueError as exc:
            raise ConfigError(f"temporal.holidays: {exc}") from None
        base = TemporalConfig.from_boundaries(self.spans, days)
        return dataclasses.replace(base, weekend_is_holiday=self.weekend_is_holiday)


@dataclass
class GraphSection:
    private: bool = True
    kinds: str = ",".join(RELATION_KINDS)

    def options(self) -> GraphOptions:
        return GraphOptions(self.private, frozenset(k.strip() for k in self.kinds.split(",") if k.strip()))


@dataclass
class EvaluateSection:
    ks: str = "1,5,8,10,20"
    rho_support: str = "common"
    bin_width: float = 2.0

    def k_list(self) -> list[int]:
        try:
            return [int(k) for k in self.ks.split(",") if k.strip()]
        except ValueError:
            raise ConfigError(f"evaluate.ks must be integers: {self.ks!r}") from None


@dataclass
class BaselineSection:
    md_rank: int = 10
    cf_neighbors: int = 20
    jump_bin_width: float = 500.0
    present: str = "last_observed"


@dataclass
class PipelineConfig:
    paths: Paths = field(default_factory=Paths)
    split: SplitSection = field(default_factory=SplitSection)
    temporal: TemporalSection = field(default_factory=TemporalSection)
    filter: FilterThresholds = field(default_factory=FilterThresholds)
    graph: GraphSection = field(default_factory=GraphSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)
    baseline: BaselineSection = field(default_factory=BaselineSection)
    synth: SynthConfig = field(default_factory=SynthConfig)
    seed: int = 0
    threads: int = 1

    def echo(self) -> dict:
        return {
            name: dataclasses.asdict(getattr(self, name))
            for name in ("paths", "split", "temporal", "filter", "graph", "train", "evaluate", "baseline", "synth")
        } | {"seed": self.seed, "threads": self.threads}


_SECTIONS = ("paths", "split", "temporal", "filter", "graph", "train", "evaluate", "baseline", "synth")


def _coerce(value: str, target_type, name: str):
    t = str(target_type)
    try:
        if "bool" in t:
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if "None" in t and value.strip().lower() in ("", "none", "off"):
            return None
        if "int" in t and "float" not in t:
            return int(value)
        if "float" in t:
            return float(value)
        return value.strip()
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def _apply(obj, items: dict, section: str):
    fields = {f.name: f for f in dataclasses.fields(obj)}
    updates = {}
    for key, raw in items.items():
        if key not in fields:
            raise ConfigError(f"unknown key [{section}] {key}")
        updates[key] = _coerce(raw, fields[key].type, f"{section}.{key}")
    try:
        return dataclasses.replace(obj, **updates)
    except TypeError as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Read the INI file (if any) and apply ``overrides`` of the form
    ``{"section.key": "value"}`` on top."""
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        try:
            parser.read(p, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"config file {p}: {exc}") from None
    sections: dict[str, dict] = {s: dict(parser[s]) for s in parser.sections()}
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        sec, _, key = dotted.partition(".")
        sections.setdefault(sec, {})[key] = str(value)

    cfg = PipelineConfig()
    run = sections.pop("run", {})
    for key in run:
        if key not in ("seed", "threads"):
            raise ConfigError(f"unknown key [run] {key}")
    if "seed" in run:
        cfg.seed = _coerce(run["seed"], int, "run.seed")
        cfg.train = dataclasses.replace(cfg.train, seed=cfg.seed)
        cfg.synth = dataclasses.replace(cfg.synth, seed=cfg.seed)
    if "threads" in run:
        cfg.threads = _coerce(run["threads"], int, "run.threads")
        if cfg.threads < 1:
            raise ConfigError("run.threads must be at least 1")
    for sec, items in sections.items():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown config section [{sec}]")
        setattr(cfg, sec, _apply(getattr(cfg, sec), items, sec))
    # validate derived objects eagerly
    cfg.split.split()
    cfg.temporal.temporal()
    cfg.graph.options()
    cfg.evaluate.k_list()
    return cfg
