"""Trip records: parsing, temporal categories, observation/future split,
per-traveler statistics and target-population selection."""

from __future__ import annotations

import csv
import datetime as dt
import io
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, TextIO

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

TRIP_FIELDS = ("vehicle_id", "date", "ftime", "fzone", "tzone")
SECONDS_PER_DAY = 86400

WORKDAY = "workday"
HOLIDAY = "holiday"


@dataclass(frozen=True)
class TripRecord:
    vehicle_id: str
    date: dt.date
    ftime: int
    fzone: int
    tzone: int


def _hms(text: str) -> int:
    parts = text.strip().split(":")
    if len(parts) not in (2, 3):
        raise ValueError(f"bad time {text!r}")
    h, m = int(parts[0]), int(parts[1])
    s = int(parts[2]) if len(parts) == 3 else 0
    if not (0 <= h <= 24 and 0 <= m < 60 and 0 <= s < 60):
        raise ValueError(f"bad time {text!r}")
    secs = h * 3600 + m * 60 + s
    if secs > SECONDS_PER_DAY:
        raise ValueError(f"bad time {text!r}")
    return secs


def format_hms(seconds: int) -> str:
    return f"{seconds // 3600:02d}:{seconds % 3600 // 60:02d}:{seconds % 60:02d}"


@dataclass(frozen=True)
class TimeSpan:
    label: str
    start: int
    end: int


# Boundaries in seconds since midnight.
DEFAULT_TIME_SPANS = (
    TimeSpan("night", 0, 6 * 3600 + 1800),
    TimeSpan("early_morning", 6 * 3600 + 1800, 7 * 3600 + 1800),
    TimeSpan("morning_peak", 7 * 3600 + 1800, 9 * 3600 + 1800),
    TimeSpan("midday", 9 * 3600 + 1800, 16 * 3600 + 1800),
    TimeSpan("evening_peak", 16 * 3600 + 1800, 19 * 3600),
    TimeSpan("evening", 19 * 3600, 22 * 3600),
    TimeSpan("late_night", 22 * 3600, SECONDS_PER_DAY),
)


@dataclass(frozen=True)
class TemporalConfig:
    time_spans: tuple[TimeSpan, ...] = DEFAULT_TIME_SPANS
    holiday_calendar: frozenset[dt.date] = frozenset()
    weekend_is_holiday: bool = True

    def __post_init__(self):
        spans = self.time_spans
        if not spans:
            raise ConfigError("at least one time span is required")
        if spans[0].start != 0 or spans[-1].end != SECONDS_PER_DAY:
            raise ConfigError("time spans must cover 00:00 to 24:00")
        for a, b in zip(spans, spans[1:]):
            if a.end != b.start:
                raise ConfigError(f"time spans {a.label} and {b.label} are not contiguous")
        for s in spans:
            if s.start >= s.end:
                raise ConfigError(f"time span {s.label} is empty")
        labels = [s.label for s in spans]
        if len(set(labels)) != len(labels):
            raise ConfigError("time span labels must be unique")

    @classmethod
    def from_boundaries(cls, spec: str, holidays: Iterable[dt.date] = ()) -> "TemporalConfig":
        """Build from ``"label@HH:MM,label@HH:MM,..."`` where each time is the span start."""
        items = [x.strip() for x in spec.split(",") if x.strip()]
        starts = []
        for item in items:
            label, _, start = item.partition("@")
            try:
                starts.append((label.strip(), _hms(start)))
            except ValueError as exc:
                raise ConfigError(f"time span {item!r}: {exc}") from None
        spans = []
        for i, (label, start) in enumerate(starts):
            end = starts[i + 1][1] if i + 1 < len(starts) else SECONDS_PER_DAY
            spans.append(TimeSpan(label, start, end))
        return cls(tuple(spans), frozenset(holidays))


def map_time_span(ftime: int, cfg: TemporalConfig) -> str:
    t = ftime % SECONDS_PER_DAY
    for span in cfg.time_spans:
        if span.start <= t < span.end:
            return span.label
    raise AssertionError("time spans do not cover the day")  # unreachable under validation


def map_day_nature(date: dt.date, cfg: TemporalConfig) -> str:
    if date in cfg.holiday_calendar:
        return HOLIDAY
    if cfg.weekend_is_holiday and date.weekday() >= 5:
        return HOLIDAY
    return WORKDAY


def parse_trips(stream: TextIO | str, zone_universe: Iterable[int] | None = None) -> list[TripRecord]:
    """Read ``vehicle_id,date,ftime,fzone,tzone`` rows.

    Rows are validated against ``zone_universe`` when given. Raises
    :class:`DataError` with the 1-based line number for malformed rows and
    names every unknown zone id.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    try:
        header = [h.strip().lower() for h in next(reader)]
    except StopIteration:
        raise DataError("trip file is empty (header required)") from None
    missing = [f for f in TRIP_FIELDS if f not in header]
    if missing:
        raise DataError(f"trip header lacks fields: {', '.join(missing)}")
    idx = [header.index(f) for f in TRIP_FIELDS]
    zones = set(zone_universe) if zone_universe is not None else None

    records = []
    unknown: dict[int, int] = {}
    for row in reader:
        lineno = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            vid = row[idx[0]].strip()
            if not vid:
                raise ValueError("empty vehicle_id")
            rec = TripRecord(
                vid,
                dt.date.fromisoformat(row[idx[1]].strip()),
                _hms(row[idx[2]]),
                int(row[idx[3]]),
                int(row[idx[4]]),
            )
        except ValueError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        if zones is not None:
            for z in (rec.fzone, rec.tzone):
                if z not in zones:
                    unknown.setdefault(z, lineno)
        records.append(rec)
    if unknown:
        detail = ", ".join(f"{z} (line {ln})" for z, ln in sorted(unknown.items()))
        raise DataError(f"unknown zone id(s): {detail}")
    return records


def write_trips(records: Iterable[TripRecord], stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(TRIP_FIELDS)
    for r in records:
        w.writerow([r.vehicle_id, r.date.isoformat(), format_hms(r.ftime), r.fzone, r.tzone])


@dataclass(frozen=True)
class ObservationSplit:
    """Inclusive date windows for the observation and future periods."""

    observation_start: dt.date
    observation_end: dt.date
    future_start: dt.date
    future_end: dt.date

    def __post_init__(self):
        if self.observation_start > self.observation_end:
            raise ConfigError("observation window is empty")
        if self.future_start > self.future_end:
            raise ConfigError("future window is empty")
        if self.future_start <= self.observation_end:
            raise ConfigError("future window must start after the observation window ends")

    @classmethod
    def from_days(cls, start: dt.date, observation_days: int, future_days: int) -> "ObservationSplit":
        obs_end = start + dt.timedelta(days=observation_days - 1)
        return cls(start, obs_end, obs_end + dt.timedelta(days=1), obs_end + dt.timedelta(days=future_days))


@dataclass
class SplitResult:
    observed: list[TripRecord]
    future: list[TripRecord]
    discarded: int

    @property
    def counts(self) -> dict[str, int]:
        return {"observed": len(self.observed), "future": len(self.future), "discarded": self.discarded}


def split_periods(records: Iterable[TripRecord], split: ObservationSplit) -> SplitResult:
    observed, future, discarded = [], [], 0
    for r in records:
        if split.observation_start <= r.date <= split.observation_end:
            observed.append(r)
        elif split.future_start <= r.date <= split.future_end:
            future.append(r)
        else:
            discarded += 1
    return SplitResult(observed, future, discarded)


def compute_entropy(counts: dict | Counter | Iterable[int]) -> float:
    """Shannon entropy in bits of a destination visit-count distribution."""
    values = list(counts.values()) if hasattr(counts, "values") else list(counts)
    total = sum(values)
    if total <= 0:
        raise DataError("entropy is undefined for a traveler with no trips")
    h = 0.0
    for c in values:
        if c > 0:
            p = c / total
            h -= p * math.log2(p)
    return max(h, 0.0)


@dataclass
class IndividualProfile:
    vehicle_id: str
    trip_count: int
    destination_counts: dict[int, int]
    future_destinations: frozenset[int] = frozenset()

    @property
    def observed_destinations(self) -> frozenset[int]:
        return frozenset(self.destination_counts)

    @property
    def potential_destinations(self) -> frozenset[int]:
        return self.future_destinations - self.observed_destinations

    @property
    def accidental_destinations(self) -> frozenset[int]:
        return self.observed_destinations - self.future_destinations

    @property
    def entropy(self) -> float:
        return compute_entropy(self.destination_counts)


def build_profiles(observed: Iterable[TripRecord], future: Iterable[TripRecord] = ()) -> dict[str, IndividualProfile]:
    """Profiles for every vehicle with at least one observed trip, keyed and ordered by id."""
    counts: dict[str, Counter] = defaultdict(Counter)
    for r in observed:
        counts[r.vehicle_id][r.tzone] += 1
    fut: dict[str, set] = defaultdict(set)
    for r in future:
        fut[r.vehicle_id].add(r.tzone)
    profiles = {}
    for vid in sorted(counts):
        c = counts[vid]
        profiles[vid] = IndividualProfile(vid, sum(c.values()), dict(sorted(c.items())), frozenset(fut.get(vid, ())))
    return profiles


def accidental_potential_rates(profile: IndividualProfile) -> tuple[float | None, float | None]:
    """Percentages of accidental and potential destinations; ``None`` when undefined."""
    zo, zf = profile.observed_destinations, profile.future_destinations
    qa = len(zo - zf) / len(zo) * 100.0 if zo else None
    qp = len(zf - zo) / len(zf) * 100.0 if zf else None
    return qa, qp


def mean_rates(profiles: Iterable[IndividualProfile]) -> tuple[float | None, float | None]:
    """Average rates over travelers, skipping undefined values."""
    qa_vals, qp_vals = [], []
    for p in profiles:
        qa, qp = accidental_potential_rates(p)
        if qa is not None:
            qa_vals.append(qa)
        if qp is not None:
            qp_vals.append(qp)
    mean = lambda xs: sum(xs) / len(xs) if xs else None  # noqa: E731
    return mean(qa_vals), mean(qp_vals)


@dataclass(frozen=True)
class FilterThresholds:
    """Target-population predicates; ``None`` disables a predicate."""

    max_trip_count: int | None = None
    min_trip_count: int | None = None
    min_entropy_fraction: float | None = None
    min_distinct_destinations: int | None = None
    # "trips": bound is log2(trip count); "destinations": log2(distinct destinations)
    entropy_bound: str = "trips"

    def __post_init__(self):
        if self.entropy_bound not in ("trips", "destinations"):
            raise ConfigError(f"entropy_bound must be 'trips' or 'destinations', got {self.entropy_bound!r}")


def entropy_fraction(profile: IndividualProfile, bound: str = "trips") -> float:
    n = profile.trip_count if bound == "trips" else len(profile.destination_counts)
    upper = math.log2(n) if n > 1 else 0.0
    if upper == 0.0:
        return 1.0
    return profile.entropy / upper


@dataclass
class FilterResult:
    selected: dict[str, IndividualProfile]
    rejections: dict[str, int] = field(default_factory=dict)


def filter_low_predictability(profiles: dict[str, IndividualProfile], thresholds: FilterThresholds) -> FilterResult:
    th = thresholds
    predicates = []
    if th.max_trip_count is not None:
        predicates.append(("max_trip_count", lambda p: p.trip_count <= th.max_trip_count))
    if th.min_trip_count is not None:
        predicates.append(("min_trip_count", lambda p: p.trip_count >= th.min_trip_count))
    if th.min_entropy_fraction is not None:
        predicates.append(
            ("min_entropy_fraction", lambda p: entropy_fraction(p, th.entropy_bound) >= th.min_entropy_fraction)
        )
    if th.min_distinct_destinations is not None:
        predicates.append(
            ("min_distinct_destinations", lambda p: len(p.destination_counts) >= th.min_distinct_destinations)
        )

    rejections = {name: 0 for name, _ in predicates}
    selected = {}
    for vid, p in profiles.items():
        ok = True
        for name, pred in predicates:
            if not pred(p):
                rejections[name] += 1
                ok = False
        if ok:
            selected[vid] = p
    log.info("selected %d of %d travelers; rejections %s", len(selected), len(profiles), rejections)
    return FilterResult(selected, rejections)
