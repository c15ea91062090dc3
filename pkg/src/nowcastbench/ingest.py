"""Parsing, resampling, spatial sampling, alignment and gap-filling.

Source products arrive as documented CSV schemas (see README): a two-column
per-station series (5-minute water vapor), and one flat gridded CSV per
variable per hour for the reanalysis and precipitation fields. Everything is
aligned to a common hourly UTC grid at the station coordinates: smooth fields
by bilinear interpolation, precipitation by nearest neighbor so convective
peaks survive, then quality control fills the remaining gaps.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    HOUR,
    TP_INDEX,
    VARIABLES,
    Continent,
    HourlySeries,
    SchemaError,
    StationMeta,
    StationSeries,
    format_utc_timestamp,
    parse_utc_timestamp,
)

GRID_VARIABLES = ("t2m", "sp", "rh", "wind_speed")  # bilinear-sampled fields
PRECIP_VARIABLE = "tp"                              # nearest-sampled field


class MissingDataError(ValueError):
    """A required grid cell or corner is missing at the sample point."""


@dataclass
class RawSamples:
    """Irregular native-resolution samples of one variable; NaN = missing."""

    variable: str
    timestamps: np.ndarray  # int64 epoch seconds, strictly increasing
    values: np.ndarray
    native_step: int | None  # seconds, median gap; None for single samples
    malformed_count: int = 0

    def __post_init__(self) -> None:
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.timestamps.shape != self.values.shape:
            raise ValueError("timestamps and values must align")
        if len(self.timestamps) > 1 and np.any(np.diff(self.timestamps) <= 0):
            raise SchemaError("unsorted input")

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass
class GridField:
    """One timestamped regular lat/lon grid of a single variable.

    Cell (i, j) has its center at (lat0 + i*dlat, lon0 + j*dlon); NaN marks a
    missing cell. Grids must not cross the antimeridian.
    """

    timestamp: int
    variable: str
    lat0: float
    lon0: float
    dlat: float
    dlon: float
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.size == 0:
            raise ValueError("grid values must be a non-empty 2-D array")
        if self.dlat <= 0 or self.dlon <= 0:
            raise ValueError("dlat and dlon must be positive")

    @property
    def nlat(self) -> int:
        return self.values.shape[0]

    @property
    def nlon(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class CompletenessReport:
    station_id: str
    fraction_present: float
    gap_count: int
    longest_gap_hours: float


# ---------------------------------------------------------------------------
# parsers


def parse_station_csv(path, variable: str = "pwv") -> RawSamples:
    """Parse a two-column station CSV (`timestamp,<variable>`).

    Empty value fields mark missing samples. Rows that fail to parse are
    skipped but counted in ``malformed_count``; non-increasing timestamps
    are a schema error.
    """
    if variable not in VARIABLES:
        raise ValueError(f"unknown variable: {variable}")
    timestamps: list[int] = []
    values: list[float] = []
    malformed = 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["timestamp", variable]:
            raise SchemaError(f"schema mismatch: expected header 'timestamp,{variable}' in {path}")
        for row in reader:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                malformed += 1
                continue
            try:
                ts = parse_utc_timestamp(row[0])
                text = row[1].strip()
                value = math.nan if text == "" else float(text)
            except ValueError:
                malformed += 1
                continue
            if not (math.isnan(value) or math.isfinite(value)):
                malformed += 1
                continue
            timestamps.append(ts)
            values.append(value)
    ts_arr = np.asarray(timestamps, dtype=np.int64)
    if len(ts_arr) > 1 and np.any(np.diff(ts_arr) <= 0):
        raise SchemaError("unsorted input")
    step = int(round(float(np.median(np.diff(ts_arr))))) if len(ts_arr) > 1 else None
    return RawSamples(variable=variable, timestamps=ts_arr, values=np.asarray(values),
                      native_step=step, malformed_count=malformed)


_GRID_HEADER = ["timestamp", "lat0", "lon0", "dlat", "dlon", "nlat", "nlon"]


def parse_grid_csv(path, variable: str) -> GridField:
    """Parse one flat gridded CSV.

    Line 1 names the metadata columns, line 2 carries their values, then
    nlat rows of nlon comma-separated cell values follow (missing = NA).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != _GRID_HEADER:
            raise SchemaError(f"schema mismatch: bad gridded CSV header in {path}")
        meta_row = next(reader, None)
        if meta_row is None or len(meta_row) != len(_GRID_HEADER):
            raise SchemaError(f"schema mismatch: bad metadata row in {path}")
        try:
            ts = parse_utc_timestamp(meta_row[0])
            lat0, lon0, dlat, dlon = (float(v) for v in meta_row[1:5])
            nlat, nlon = int(meta_row[5]), int(meta_row[6])
        except ValueError as exc:
            raise SchemaError(f"schema mismatch: {exc}") from exc
        rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != nlon:
                raise SchemaError(f"schema mismatch: expected {nlon} columns in {path}")
            rows.append([math.nan if c.strip() == "NA" else float(c) for c in row])
        if len(rows) != nlat:
            raise SchemaError(f"schema mismatch: expected {nlat} grid rows in {path}")
    return GridField(timestamp=ts, variable=variable, lat0=lat0, lon0=lon0,
                     dlat=dlat, dlon=dlon, values=np.asarray(rows))


def grid_filename(variable: str, hour_ts: int) -> str:
    stamp = format_utc_timestamp(hour_ts)[:13]  # YYYY-MM-DDTHH
    return f"{variable}_{stamp}.csv"


def write_grid_csv(field: GridField, path) -> None:
    """Inverse of parse_grid_csv; handy for building fixture sets."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_GRID_HEADER)
        writer.writerow([format_utc_timestamp(field.timestamp),
                         repr(float(field.lat0)), repr(float(field.lon0)),
                         repr(float(field.dlat)), repr(float(field.dlon)),
                         field.nlat, field.nlon])
        for row in field.values:
            writer.writerow(["NA" if math.isnan(v) else repr(float(v)) for v in row])


def load_grid_dir(grid_dir, variable: str) -> dict[int, GridField]:
    """All hourly grid files for one variable, keyed by hour timestamp."""
    out: dict[int, GridField] = {}
    for path in sorted(Path(grid_dir).glob(f"{variable}_*.csv")):
        field = parse_grid_csv(path, variable)
        out[field.timestamp] = field
    return out


# ---------------------------------------------------------------------------
# resampling and spatial sampling


def resample_to_hourly(raw: RawSamples) -> HourlySeries:
    """Mean over the centered window [H-30 min, H+30 min) for each hour H.

    Hours with no present samples are masked missing. Already-hourly centered
    data passes through unchanged.
    """
    if len(raw) == 0:
        raise ValueError("cannot resample an empty sample set")
    hour_of = (raw.timestamps + HOUR // 2) // HOUR
    first, last = int(hour_of[0]), int(hour_of[-1])
    n = last - first + 1
    sums = np.zeros(n)
    counts = np.zeros(n, dtype=np.int64)
    present = np.isfinite(raw.values)
    idx = (hour_of - first).astype(np.int64)[present]
    np.add.at(sums, idx, raw.values[present])
    np.add.at(counts, idx, 1)
    mask = counts == 0
    values = np.divide(sums, counts, out=np.zeros(n), where=~mask)
    values[mask] = math.nan
    return HourlySeries(variable=raw.variable, start_time=first * HOUR,
                        values=values, missing_mask=mask)


def bilinear_sample(field: GridField, lat: float, lon: float) -> float:
    """Bilinear blend of the four surrounding cell centers.

    Reproduces affine fields exactly. The point must be inside the convex
    hull of cell centers and all four corners must be present.
    """
    if field.nlat < 2 or field.nlon < 2:
        raise ValueError("out of grid")
    fi = (lat - field.lat0) / field.dlat
    fj = (lon - field.lon0) / field.dlon
    # tolerate index roundoff at the hull boundary (points exactly on the
    # outermost cell centers must not fall out of the grid)
    tol = 1e-9
    if not (-tol <= fi <= field.nlat - 1 + tol and -tol <= fj <= field.nlon - 1 + tol):
        raise ValueError("out of grid")
    fi = min(max(fi, 0.0), float(field.nlat - 1))
    fj = min(max(fj, 0.0), float(field.nlon - 1))
    i0 = min(int(math.floor(fi)), field.nlat - 2)
    j0 = min(int(math.floor(fj)), field.nlon - 2)
    di = fi - i0
    dj = fj - j0
    corners = field.values[i0 : i0 + 2, j0 : j0 + 2]
    if not np.all(np.isfinite(corners)):
        raise MissingDataError("missing corner")
    v00, v01 = corners[0]
    v10, v11 = corners[1]
    return float(v00 * (1 - di) * (1 - dj) + v10 * di * (1 - dj)
                 + v01 * (1 - di) * dj + v11 * di * dj)


def nearest_sample(field: GridField, lat: float, lon: float) -> float:
    """Value of the cell whose center is closest in (lat, lon) degrees.

    Ties break toward the smaller latitude index, then longitude index.
    Never invents values, so extremes survive.
    """
    lats = field.lat0 + field.dlat * np.arange(field.nlat)
    lons = field.lon0 + field.dlon * np.arange(field.nlon)
    d2 = (lats - lat)[:, None] ** 2 + (lons - lon)[None, :] ** 2
    flat = int(np.argmin(d2))  # C order: first minimum = smallest (i, j)
    value = field.values.reshape(-1)[flat]
    if not math.isfinite(value):
        raise MissingDataError("missing cell")
    return float(value)


# ---------------------------------------------------------------------------
# alignment and QC


def _coverage(hours: dict[int, GridField]) -> tuple[int, int]:
    if not hours:
        raise ValueError("no overlapping coverage")
    keys = sorted(hours)
    return keys[0], keys[-1] + HOUR


def align_station(pwv: RawSamples,
                  met_fields: dict[str, dict[int, GridField]],
                  precip_fields: dict[int, GridField],
                  meta: StationMeta) -> StationSeries:
    """Assemble the aligned 6-variable hourly matrix for one station.

    The intersection of the sources' covered spans defines T. Hours where a
    grid file is absent, a corner/cell is missing, or the resampled water
    vapor is masked stay NaN for QC to fill. A station outside a grid's hull
    is a hard error.
    """
    missing_vars = [v for v in GRID_VARIABLES if v not in met_fields]
    if missing_vars:
        raise ValueError(f"missing grid fields for: {', '.join(missing_vars)}")
    pwv_hourly = resample_to_hourly(pwv)
    spans = [(pwv_hourly.start_time, pwv_hourly.start_time + HOUR * len(pwv_hourly))]
    spans.extend(_coverage(met_fields[v]) for v in GRID_VARIABLES)
    spans.append(_coverage(precip_fields))
    start = max(s for s, _ in spans)
    end = min(e for _, e in spans)
    if end <= start:
        raise ValueError("no overlapping coverage")
    n = (end - start) // HOUR
    data = np.full((n, len(VARIABLES)), math.nan)

    pwv_offset = (start - pwv_hourly.start_time) // HOUR
    pwv_slice = pwv_hourly.values[pwv_offset : pwv_offset + n]
    pwv_mask = pwv_hourly.missing_mask[pwv_offset : pwv_offset + n]
    data[:, VARIABLES.index("pwv")] = np.where(pwv_mask, math.nan, pwv_slice)

    for i in range(n):
        ts = start + i * HOUR
        for var in GRID_VARIABLES:
            field = met_fields[var].get(ts)
            if field is None:
                continue
            try:
                data[i, VARIABLES.index(var)] = bilinear_sample(field, meta.latitude,
                                                                meta.longitude)
            except MissingDataError:
                pass  # stays NaN; QC interpolates
        field = precip_fields.get(ts)
        if field is not None:
            try:
                data[i, TP_INDEX] = nearest_sample(field, meta.latitude, meta.longitude)
            except MissingDataError:
                pass
    return StationSeries(meta=meta, start_time=start, data=data, qc_applied=False)


def qc_fill(series: StationSeries) -> StationSeries:
    """Gap-fill to a complete matrix.

    Continuous variables get linear interpolation between present neighbors
    (interior gaps only); precipitation carries the last present value
    forward, with leading gaps set to 0 (the modal dry value). Leading and
    trailing hours where some continuous variable has no anchor are trimmed.
    """
    if series.qc_applied:
        return series
    data = np.array(series.data)
    n = data.shape[0]
    rows = np.arange(n)
    first, last = 0, n - 1
    for var in range(TP_INDEX):
        col = data[:, var]
        finite = np.isfinite(col)
        if np.count_nonzero(finite) < 2:
            raise ValueError(f"unfillable variable: {VARIABLES[var]}")
        present_rows = rows[finite]
        data[:, var] = np.interp(rows, present_rows, col[finite])
        first = max(first, present_rows[0])
        last = min(last, present_rows[-1])
    if first > last:
        raise ValueError("unfillable variable: no common covered span")

    data = data[first : last + 1]
    tp = data[:, TP_INDEX]
    finite = np.isfinite(tp)
    # forward fill: index of the latest present value at or before each row
    carry = np.where(finite, np.arange(len(tp)), -1)
    carry = np.maximum.accumulate(carry)
    filled = np.where(carry >= 0, tp[np.maximum(carry, 0)], 0.0)
    data[:, TP_INDEX] = filled
    return StationSeries(meta=series.meta, start_time=series.start_time + int(first) * HOUR,
                         data=data, qc_applied=True)


def completeness(raw: RawSamples, span: tuple[int, int]) -> CompletenessReport:
    """Fraction of expected native-step slots carrying a present sample.

    Slots are anchored at the span start; ``span`` is end-exclusive.
    """
    start, end = span
    if end <= start:
        raise ValueError("empty span")
    if raw.native_step is None:
        raise ValueError("native step unknown (need at least two samples)")
    step = raw.native_step
    n_slots = (end - start + step - 1) // step
    present = np.zeros(n_slots, dtype=bool)
    offsets = raw.timestamps[np.isfinite(raw.values)] - start
    on_grid = (offsets >= 0) & (offsets < end - start) & (offsets % step == 0)
    present[(offsets[on_grid] // step).astype(np.int64)] = True

    gap_count = 0
    longest = 0
    run = 0
    for flag in present:
        if flag:
            longest = max(longest, run)
            if run:
                gap_count += 1
            run = 0
        else:
            run += 1
    longest = max(longest, run)
    if run:
        gap_count += 1
    return CompletenessReport(
        station_id="",
        fraction_present=float(present.sum()) / n_slots,
        gap_count=gap_count,
        longest_gap_hours=longest * step / HOUR,
    )


# ---------------------------------------------------------------------------
# aligned CSV round trip

_ALIGNED_HEADER = ["timestamp"] + list(VARIABLES)


def write_station_csv(series: StationSeries, path) -> None:
    """Aligned output CSV: one row per hour, empty field = missing."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_ALIGNED_HEADER)
        timestamps = series.timestamps()
        for i in range(series.n_hours):
            row = [format_utc_timestamp(int(timestamps[i]))]
            for v in series.data[i]:
                row.append("" if math.isnan(v) else repr(float(v)))
            writer.writerow(row)


def write_station_meta(meta: StationMeta, path) -> None:
    payload = {"station_id": meta.station_id, "latitude": meta.latitude,
               "longitude": meta.longitude, "elevation": meta.elevation,
               "continent": meta.continent.value}
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def read_station_meta(path) -> StationMeta:
    payload = json.loads(Path(path).read_text())
    return StationMeta(station_id=payload["station_id"], latitude=payload["latitude"],
                       longitude=payload["longitude"], elevation=payload["elevation"],
                       continent=Continent(payload["continent"]))


def read_station_csv(path, meta: StationMeta | None = None) -> StationSeries:
    """Read an aligned CSV back; looks for a `<name>.meta.json` sidecar when
    no metadata is supplied, else falls back to a placeholder."""
    path = Path(path)
    if meta is None:
        sidecar = path.with_suffix(".meta.json")
        if sidecar.exists():
            meta = read_station_meta(sidecar)
        else:
            meta = StationMeta(station_id=path.stem, latitude=0.0, longitude=0.0,
                               elevation=0.0, continent=Continent.AFRICA)
    timestamps: list[int] = []
    values: list[list[float]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != _ALIGNED_HEADER:
            raise SchemaError(f"schema mismatch: bad aligned CSV header in {path}")
        for row in reader:
            if not row:
                continue
            if len(row) != len(_ALIGNED_HEADER):
                raise SchemaError(f"schema mismatch: short row in {path}")
            timestamps.append(parse_utc_timestamp(row[0]))
            values.append([math.nan if c.strip() == "" else float(c) for c in row[1:]])
    if not timestamps:
        raise SchemaError(f"schema mismatch: no data rows in {path}")
    ts = np.asarray(timestamps, dtype=np.int64)
    if np.any(np.diff(ts) != HOUR):
        raise SchemaError("unsorted input")
    data = np.asarray(values)
    qc = bool(np.all(np.isfinite(data)))
    return StationSeries(meta=meta, start_time=int(ts[0]), data=data, qc_applied=qc)
