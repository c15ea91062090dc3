"""Run configuration: a single JSON file with a documented schema.

Unknown keys are rejected everywhere — a typo in a grid or model spec must
fail loudly before any work starts, not silently change a run. Relative
paths resolve against the config file's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .evaluation import ProtocolGrid
from .models import MODEL_NAMES, TrainConfig
from .stats import AdfConfig
from .synth import SyntheticSpec

_TOP_KEYS = {"out_dir", "seeds", "jobs", "stations", "ingest", "grid", "models",
             "train", "analyze", "synth"}
_STATION_KEYS = {"id", "csv", "synthetic"}
_INGEST_KEYS = {"grid_dir", "stations"}
_INGEST_STATION_KEYS = {"id", "latitude", "longitude", "elevation", "continent", "pwv_csv"}
_GRID_KEYS = {"input_lengths", "output_lengths", "resolutions", "horizon_hours"}
_MODEL_KEYS = {"name", "type", "d_model", "n_heads", "n_layers", "ff_dim",
               "dropout", "window_hours", "bfpf"}
_BFPF_KEYS = {"enabled", "tau", "lambda_init", "alpha_init", "nonzero_focus",
              "temporal_focus", "sentinel"}
_TRAIN_KEYS = {"learning_rate", "batch_size", "max_epochs", "patience",
               "beta1", "beta2", "eps"}
_ANALYZE_KEYS = {"decay_lags", "adf_max_lag"}
_SYNTH_KEYS = {"duration_hours", "zero_fraction", "pwv_threshold", "onset_sharpness",
               "onset_boost", "mean_wet_hours", "heavy_sigma", "noise_level",
               "seed", "station_id"}

DEFAULT_MODELS = [{"name": name} for name in MODEL_NAMES]


def _check_keys(mapping: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ValueError(f"unknown config keys in {where}: {', '.join(unknown)}")


@dataclass(frozen=True)
class StationSource:
    station_id: str
    csv: Path | None = None
    synthetic: SyntheticSpec | None = None

    def __post_init__(self) -> None:
        if (self.csv is None) == (self.synthetic is None):
            raise ValueError(f"station {self.station_id}: exactly one of 'csv' or "
                             "'synthetic' must be given")


@dataclass(frozen=True)
class IngestStation:
    station_id: str
    latitude: float
    longitude: float
    elevation: float
    continent: str
    pwv_csv: Path


@dataclass(frozen=True)
class IngestConfig:
    grid_dir: Path
    stations: tuple[IngestStation, ...]


@dataclass(frozen=True)
class RunConfig:
    base_dir: Path
    out_dir: Path
    seeds: tuple[int, ...] = (0, 1, 2)
    jobs: int = 1
    stations: tuple[StationSource, ...] = ()
    grid: ProtocolGrid = field(default_factory=ProtocolGrid)
    models: tuple[dict, ...] = tuple(dict(m) for m in DEFAULT_MODELS)
    train: TrainConfig = field(default_factory=TrainConfig)
    ingest: IngestConfig | None = None
    synth_specs: tuple[SyntheticSpec, ...] = ()
    adf: AdfConfig = field(default_factory=AdfConfig)
    decay_lags: int = 24


def _parse_synth(entry: dict, where: str) -> SyntheticSpec:
    _check_keys(entry, _SYNTH_KEYS, where)
    return SyntheticSpec(**entry)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ValueError("config root must be a JSON object")
    _check_keys(payload, _TOP_KEYS, "config root")
    base = path.parent

    seeds = tuple(int(s) for s in payload.get("seeds", (0, 1, 2)))
    if not seeds:
        raise ValueError("seeds must be non-empty")

    stations = []
    for i, entry in enumerate(payload.get("stations", [])):
        where = f"stations[{i}]"
        _check_keys(entry, _STATION_KEYS, where)
        if "id" not in entry:
            raise ValueError(f"{where}: missing 'id'")
        synthetic = None
        if "synthetic" in entry:
            synthetic = _parse_synth({**entry["synthetic"], "station_id": entry["id"]},
                                     f"{where}.synthetic")
        stations.append(StationSource(
            station_id=entry["id"],
            csv=(base / entry["csv"]) if "csv" in entry else None,
            synthetic=synthetic,
        ))

    grid_payload = dict(payload.get("grid", {}))
    _check_keys(grid_payload, _GRID_KEYS, "grid")
    grid = ProtocolGrid(
        input_lengths=tuple(grid_payload.get("input_lengths", (12, 24))),
        output_lengths=tuple(grid_payload.get("output_lengths", (2, 4, 6))),
        resolutions=tuple(grid_payload.get("resolutions", (1, 2, 3))),
        horizon_hours=int(grid_payload.get("horizon_hours", 6)),
        seeds=seeds,
    )

    models = []
    for i, entry in enumerate(payload.get("models", DEFAULT_MODELS)):
        where = f"models[{i}]"
        _check_keys(entry, _MODEL_KEYS, where)
        if "name" not in entry:
            raise ValueError(f"{where}: missing 'name'")
        if "bfpf" in entry:
            _check_keys(entry["bfpf"], _BFPF_KEYS, f"{where}.bfpf")
        models.append(dict(entry))

    train_payload = dict(payload.get("train", {}))
    _check_keys(train_payload, _TRAIN_KEYS, "train")
    train = TrainConfig(**train_payload)

    ingest_cfg = None
    if "ingest" in payload:
        entry = payload["ingest"]
        _check_keys(entry, _INGEST_KEYS, "ingest")
        if "grid_dir" not in entry or "stations" not in entry:
            raise ValueError("ingest section needs 'grid_dir' and 'stations'")
        ing_stations = []
        for i, st in enumerate(entry["stations"]):
            where = f"ingest.stations[{i}]"
            _check_keys(st, _INGEST_STATION_KEYS, where)
            missing = _INGEST_STATION_KEYS - set(st)
            if missing:
                raise ValueError(f"{where}: missing {', '.join(sorted(missing))}")
            ing_stations.append(IngestStation(
                station_id=st["id"], latitude=float(st["latitude"]),
                longitude=float(st["longitude"]), elevation=float(st["elevation"]),
                continent=st["continent"], pwv_csv=base / st["pwv_csv"],
            ))
        ingest_cfg = IngestConfig(grid_dir=base / entry["grid_dir"],
                                  stations=tuple(ing_stations))

    synth_specs = tuple(_parse_synth(dict(entry), f"synth[{i}]")
                        for i, entry in enumerate(payload.get("synth", [])))

    analyze_payload = dict(payload.get("analyze", {}))
    _check_keys(analyze_payload, _ANALYZE_KEYS, "analyze")
    adf = AdfConfig(max_lag=int(analyze_payload.get("adf_max_lag", 12)))

    return RunConfig(
        base_dir=base,
        out_dir=base / payload.get("out_dir", "out"),
        seeds=seeds,
        jobs=int(payload.get("jobs", 1)),
        stations=tuple(stations),
        grid=grid,
        models=tuple(models),
        train=train,
        ingest=ingest_cfg,
        synth_specs=synth_specs,
        adf=adf,
        decay_lags=int(analyze_payload.get("decay_lags", 24)),
    )
