"""Shared domain types: the fixed variable schema, station metadata, hourly
series containers, chronological splits, and the deterministic seed contract.

Everything here is immutable after construction and safe to share across
concurrent workers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum

import numpy as np

HOUR = 3600  # seconds

#: Fixed variable ordering. ``tp`` (precipitation, mm/h) is always last and is
#: the sole forecast target; the other five are hourly predictors.
VARIABLES = ("t2m", "sp", "rh", "wind_speed", "pwv", "tp")
UNITS = ("K", "Pa", "%", "m/s", "mm", "mm/h")
TP_INDEX = 5
#: Variables gap-filled by linear interpolation under QC; tp is forward-filled.
CONTINUOUS_VARIABLES = VARIABLES[:TP_INDEX]


class Continent(Enum):
    AFRICA = "africa"
    ANTARCTICA = "antarctica"
    ASIA = "asia"
    EUROPE = "europe"
    NORTH_AMERICA = "north_america"
    OCEANIA = "oceania"
    SOUTH_AMERICA = "south_america"


class SchemaError(ValueError):
    """Input file does not match its documented schema."""


@dataclass(frozen=True)
class StationMeta:
    station_id: str
    latitude: float
    longitude: float
    elevation: float
    continent: Continent

    def __post_init__(self) -> None:
        if not self.station_id:
            raise ValueError("station_id must be non-empty")
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude out of range: {self.latitude}")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude out of range: {self.longitude}")
        if isinstance(self.continent, str):
            object.__setattr__(self, "continent", Continent(self.continent))


@dataclass
class HourlySeries:
    """One variable on an hourly grid; timestamp i is start_time + i*HOUR."""

    variable: str
    start_time: int  # epoch seconds, UTC, hour-aligned
    values: np.ndarray
    missing_mask: np.ndarray

    step: int = HOUR

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        self.missing_mask = np.asarray(self.missing_mask, dtype=bool)
        if self.step != HOUR:
            raise ValueError("hourly series must have a 3600 s step")
        if self.start_time % HOUR != 0:
            raise ValueError("start_time must be hour-aligned")
        if self.values.shape != self.missing_mask.shape or self.values.ndim != 1:
            raise ValueError("values and missing_mask must be equal-length 1-D arrays")
        if not np.all(np.isfinite(self.values[~self.missing_mask])):
            raise ValueError("present values must be finite")
        self.values.flags.writeable = False
        self.missing_mask.flags.writeable = False

    def __len__(self) -> int:
        return len(self.values)

    def timestamps(self) -> np.ndarray:
        return self.start_time + HOUR * np.arange(len(self.values), dtype=np.int64)


@dataclass
class StationSeries:
    """Aligned hourly 6-variable matrix for one station.

    ``data`` columns follow VARIABLES order; NaN marks a missing entry until
    QC has run. Once ``qc_applied`` is set the matrix is complete and the tp
    column is nonnegative everywhere.
    """

    meta: StationMeta
    start_time: int
    data: np.ndarray  # T x 6
    qc_applied: bool = False

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[1] != len(VARIABLES):
            raise ValueError(f"data must be T x {len(VARIABLES)}")
        if self.data.shape[0] == 0:
            raise ValueError("series must contain at least one hour")
        if self.start_time % HOUR != 0:
            raise ValueError("start_time must be hour-aligned")
        tp = self.data[:, TP_INDEX]
        if self.qc_applied:
            if not np.all(np.isfinite(self.data)):
                raise ValueError("qc_applied series must have no missing entries")
            if np.any(tp < 0):
                raise ValueError("tp must be nonnegative")
        else:
            if np.any(tp[np.isfinite(tp)] < 0):
                raise ValueError("tp must be nonnegative")
        self.data.flags.writeable = False

    @property
    def n_hours(self) -> int:
        return self.data.shape[0]

    @property
    def tp(self) -> np.ndarray:
        return self.data[:, TP_INDEX]

    def column(self, variable: str) -> np.ndarray:
        return self.data[:, VARIABLES.index(variable)]

    def timestamps(self) -> np.ndarray:
        return self.start_time + HOUR * np.arange(self.n_hours, dtype=np.int64)


@dataclass(frozen=True)
class SplitIndices:
    """Contiguous chronological train/val/test ranges partitioning [0, T)."""

    train: range
    val: range
    test: range

    def __post_init__(self) -> None:
        if not (self.train.stop == self.val.start and self.val.stop == self.test.start):
            raise ValueError("split ranges must be contiguous and ordered")
        if self.train.start != 0:
            raise ValueError("train range must start at 0")
        if min(len(self.train), len(self.val), len(self.test)) < 1:
            raise ValueError("each split must be non-empty")

    @property
    def total(self) -> int:
        return self.test.stop


def make_split(n_hours: int) -> SplitIndices:
    """Chronological 7:1:2 split with floor boundaries at 0.7T and 0.8T."""
    if n_hours < 10:
        raise ValueError("series too short to split")
    a = int(np.floor(0.7 * n_hours))
    b = int(np.floor(0.8 * n_hours))
    return SplitIndices(train=range(0, a), val=range(a, b), test=range(b, n_hours))


@dataclass(frozen=True)
class Seed:
    """64-bit seed; identical seeds give bit-identical initialization,
    batch order and report output."""

    value: int

    def __post_init__(self) -> None:
        if not 0 <= int(self.value) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def _tag_words(tag) -> list[int]:
    if isinstance(tag, (int, np.integer)):
        return [int(tag) & 0xFFFFFFFF, (int(tag) >> 32) & 0xFFFFFFFF]
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def seed_sequence(seed: Seed | int, *tags) -> np.random.SeedSequence:
    """Derive a stable child seed stream from a base seed and hashable tags.

    The derivation is pure data (sha256 words fed to SeedSequence), so the
    stream is identical across runs, platforms, and worker-pool schedules.
    """
    base = seed.value if isinstance(seed, Seed) else int(seed)
    entropy = [base & 0xFFFFFFFF, (base >> 32) & 0xFFFFFFFF]
    for tag in tags:
        entropy.extend(_tag_words(tag))
    return np.random.SeedSequence(entropy)


def rng_for(seed: Seed | int, *tags) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *tags)))


def parse_utc_timestamp(text: str) -> int:
    """Parse an ISO-8601 timestamp with an explicit UTC designator.

    Local offsets and naive timestamps are rejected so that misaligned
    sources cannot slip through silently.
    """
    raw = text.strip()
    candidate = raw[:-1] + "+00:00" if raw.endswith("Z") else raw
    try:
        dt = datetime.fromisoformat(candidate)
    except ValueError as exc:
        raise ValueError(f"invalid timestamp: {text!r}") from exc
    if dt.tzinfo is None:
        raise ValueError(f"timestamp must carry an explicit UTC offset: {text!r}")
    if dt.utcoffset().total_seconds() != 0:
        raise ValueError(f"timestamps must be UTC: {text!r}")
    return int(dt.timestamp())


def format_utc_timestamp(ts: int) -> str:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
