"""Metrics, evaluation protocols, and report generation.

Metrics are always computed on de-normalized mm/h values over all test
windows and horizon steps jointly. The extreme subset is defined on ground
truth only: hours whose observed rate strictly exceeds the 4 mm/h heavy-rain
threshold. Cells with no extreme hours report the squared/absolute extreme
errors as undefined and are excluded from extreme averages rather than
zero-filled.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .core import Seed, StationSeries, make_split, seed_sequence
from .models import (
    Normalizer,
    TrainConfig,
    TrainingDiverged,
    WindowConfig,
    build_model,
    window_dataset,
)


@dataclass(frozen=True)
class ExtremeConfig:
    """Heavy-rain labeling: strictly greater than ``threshold`` mm/h."""

    threshold: float = 4.0

    def __post_init__(self) -> None:
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")


@dataclass(frozen=True)
class MetricSet:
    mse: float
    mae: float
    eere: float | None
    aeere: float | None
    n_points: int
    n_extreme: int
    extreme_defined: bool

    def to_dict(self) -> dict:
        return {"mse": self.mse, "mae": self.mae, "eere": self.eere, "aeere": self.aeere,
                "n_points": self.n_points, "n_extreme": self.n_extreme,
                "extreme_defined": self.extreme_defined}


def mse(y_hat: np.ndarray, y: np.ndarray) -> float:
    a, b = _checked(y_hat, y)
    return float(np.mean((a - b) ** 2))


def mae(y_hat: np.ndarray, y: np.ndarray) -> float:
    a, b = _checked(y_hat, y)
    return float(np.mean(np.abs(a - b)))


def _checked(y_hat, y):
    a = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    b = np.asarray(y, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError("prediction and truth lengths differ")
    if a.size == 0:
        raise ValueError("empty vectors")
    return a, b


def extreme_mask(y: np.ndarray, cfg: ExtremeConfig = ExtremeConfig()) -> np.ndarray:
    """Boolean mask of observed extreme hours (strict > threshold)."""
    return np.asarray(y, dtype=np.float64) > cfg.threshold


def eere(y_hat: np.ndarray, y: np.ndarray, mask: np.ndarray) -> float:
    a, b = _checked(y_hat, y)
    m = np.asarray(mask, dtype=bool).reshape(-1)
    if not m.any():
        raise ValueError("empty extreme set")
    return float(np.mean((a[m] - b[m]) ** 2))


def aeere(y_hat: np.ndarray, y: np.ndarray, mask: np.ndarray) -> float:
    a, b = _checked(y_hat, y)
    m = np.asarray(mask, dtype=bool).reshape(-1)
    if not m.any():
        raise ValueError("empty extreme set")
    return float(np.mean(np.abs(a[m] - b[m])))


def metric_set(y_hat: np.ndarray, y: np.ndarray,
               cfg: ExtremeConfig = ExtremeConfig()) -> MetricSet:
    a, b = _checked(y_hat, y)
    m = extreme_mask(b, cfg)
    n_extreme = int(m.sum())
    defined = n_extreme > 0
    return MetricSet(
        mse=mse(a, b),
        mae=mae(a, b),
        eere=eere(a, b, m) if defined else None,
        aeere=aeere(a, b, m) if defined else None,
        n_points=int(a.size),
        n_extreme=n_extreme,
        extreme_defined=defined,
    )


# ---------------------------------------------------------------------------
# protocol


@dataclass(frozen=True)
class ProtocolGrid:
    """Multi-scale cells (all input x output lengths at 1 h) plus the
    multi-resolution cells (largest input, fixed total horizon)."""

    input_lengths: tuple[int, ...] = (12, 24)
    output_lengths: tuple[int, ...] = (2, 4, 6)
    resolutions: tuple[int, ...] = (1, 2, 3)
    horizon_hours: int = 6
    seeds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self) -> None:
        if not (self.input_lengths and self.output_lengths and self.resolutions and self.seeds):
            raise ValueError("grid sets must be non-empty")
        for r in self.resolutions:
            if self.horizon_hours % r != 0:
                raise ValueError(f"horizon {self.horizon_hours} h not divisible by {r} h")

    def cells(self) -> list[tuple[int, int, int]]:
        """Deterministic (l_in, l_out, resolution) enumeration, de-duplicated
        where the 1 h resolution cell coincides with a multi-scale cell."""
        out: list[tuple[int, int, int]] = []
        for l_in in sorted(self.input_lengths):
            for l_out in sorted(self.output_lengths):
                cell = (l_in, l_out, 1)
                if cell not in out:
                    out.append(cell)
        l_in_res = max(self.input_lengths)
        for r in sorted(self.resolutions):
            cell = (l_in_res, self.horizon_hours // r, r)
            if cell not in out:
                out.append(cell)
        return out

    def to_dict(self) -> dict:
        return {"input_lengths": list(self.input_lengths),
                "output_lengths": list(self.output_lengths),
                "resolutions": list(self.resolutions),
                "horizon_hours": self.horizon_hours,
                "seeds": list(self.seeds)}


class EvaluationReport:
    """Per-(station, model, cell, seed) records plus derived aggregates.

    Aggregates are recomputed from the records on every serialization, so
    they can never drift from their inputs.
    """

    def __init__(self, grid: ProtocolGrid, model_names: list[str]):
        self.grid = grid
        self.model_names = list(model_names)
        self.records: list[dict] = []
        self.failures: list[dict] = []

    def add_record(self, station_id: str, model: str, cell: tuple[int, int, int],
                   seed: int, metrics: MetricSet) -> None:
        l_in, l_out, resolution = cell
        self.records.append({"station": station_id, "model": model, "l_in": l_in,
                             "l_out": l_out, "resolution": resolution, "seed": seed,
                             "metrics": metrics.to_dict()})

    def add_failure(self, station_id: str, model: str, cell: tuple[int, int, int],
                    seed: int, reason: str) -> None:
        l_in, l_out, resolution = cell
        self.failures.append({"station": station_id, "model": model, "l_in": l_in,
                              "l_out": l_out, "resolution": resolution, "seed": seed,
                              "reason": reason})

    # -- aggregation -------------------------------------------------------

    def per_cell_means(self) -> list[dict]:
        groups: dict[tuple, list[dict]] = {}
        order: list[tuple] = []
        for rec in self.records:
            key = (rec["station"], rec["model"], rec["l_in"], rec["l_out"], rec["resolution"])
            if key not in groups:
                groups[key] = []
                order.append(key)
            groups[key].append(rec["metrics"])
        out = []
        for key in order:
            metrics = groups[key]
            station, model, l_in, l_out, resolution = key
            entry = {"station": station, "model": model, "l_in": l_in, "l_out": l_out,
                     "resolution": resolution, "n_seeds": len(metrics),
                     "mse": float(np.mean([m["mse"] for m in metrics])),
                     "mae": float(np.mean([m["mae"] for m in metrics])),
                     "extreme_defined": all(m["extreme_defined"] for m in metrics)}
            if entry["extreme_defined"]:
                entry["eere"] = float(np.mean([m["eere"] for m in metrics]))
                entry["aeere"] = float(np.mean([m["aeere"] for m in metrics]))
            else:
                entry["eere"] = None
                entry["aeere"] = None
            out.append(entry)
        return out

    def per_model_averages(self) -> dict[str, dict]:
        cells = self.per_cell_means()
        out: dict[str, dict] = {}
        for model in self.model_names:
            mine = [c for c in cells if c["model"] == model]
            if not mine:
                continue
            extremes = [c for c in mine if c["extreme_defined"]]
            out[model] = {
                "mse": float(np.mean([c["mse"] for c in mine])),
                "mae": float(np.mean([c["mae"] for c in mine])),
                "eere": float(np.mean([c["eere"] for c in extremes])) if extremes else None,
                "aeere": float(np.mean([c["aeere"] for c in extremes])) if extremes else None,
                "n_cells": len(mine),
                "n_extreme_cells": len(extremes),
            }
        return out

    def rankings(self) -> dict[str, list[dict]]:
        averages = self.per_model_averages()
        out = {}
        for metric in ("mse", "mae"):
            ranked = sorted(averages.items(), key=lambda kv: (kv[1][metric], kv[0]))
            out[f"by_{metric}"] = [{"model": name, metric: stats[metric]}
                                   for name, stats in ranked]
        return out

    def to_payload(self) -> dict:
        return {
            "meta": {"grid": self.grid.to_dict(), "seeds": list(self.grid.seeds),
                     "build_id": f"nowcastbench-{__version__}",
                     "models": self.model_names},
            "records": self.records,
            "averages": {"per_cell": self.per_cell_means(),
                         "per_model": self.per_model_averages()},
            "rankings": self.rankings(),
            "failures": self.failures,
        }

    def to_json_bytes(self) -> bytes:
        return (json.dumps(self.to_payload(), sort_keys=True, indent=2) + "\n").encode("utf-8")

    @classmethod
    def from_payload(cls, payload: dict) -> "EvaluationReport":
        meta = payload["meta"]
        grid_info = dict(meta["grid"])
        grid = ProtocolGrid(
            input_lengths=tuple(grid_info["input_lengths"]),
            output_lengths=tuple(grid_info["output_lengths"]),
            resolutions=tuple(grid_info["resolutions"]),
            horizon_hours=grid_info["horizon_hours"],
            seeds=tuple(grid_info["seeds"]),
        )
        report = cls(grid, list(meta["models"]))
        report.records = list(payload["records"])
        report.failures = list(payload.get("failures", []))
        return report


def rank_models(report: EvaluationReport) -> dict[str, list[dict]]:
    if not report.records:
        raise ValueError("empty report")
    return report.rankings()


# ---------------------------------------------------------------------------
# harness


def validate_grid_fits(grid: ProtocolGrid, stations: list[StationSeries]) -> None:
    shortest = min(s.n_hours for s in stations)
    for l_in, l_out, r in grid.cells():
        if l_in + l_out * r > shortest:
            raise ValueError(
                f"cell l_in={l_in} l_out={l_out} resolution={r} needs "
                f"{l_in + l_out * r} hours but the shortest station has {shortest}")


def _cell_seed(base_seed: int, station_id: str, model: str,
               cell: tuple[int, int, int]) -> Seed:
    words = seed_sequence(base_seed, station_id, model, *cell).generate_state(2)
    return Seed(int(words[0]) | (int(words[1]) << 32))


def _run_station_cell(task: tuple) -> tuple[tuple[int, int], list[dict], list[dict]]:
    """One (station, cell) work unit: all models x seeds on shared windows."""
    (key, series, cell, model_specs, tc_kwargs, seeds, extreme_threshold) = task
    tc = TrainConfig(**tc_kwargs)
    extreme = ExtremeConfig(extreme_threshold)
    l_in, l_out, resolution = cell
    records: list[dict] = []
    failures: list[dict] = []
    try:
        split = make_split(series.n_hours)
        normalizer = Normalizer.fit(series.data, split.train)
        window_cfg = WindowConfig(l_in=l_in, l_out=l_out, resolution=resolution)
        splits = window_dataset(series, window_cfg, split, normalizer)
    except ValueError as exc:
        # the whole cell is unusable; every (model, seed) of it fails
        for spec in model_specs:
            for seed in seeds:
                failures.append({"station": series.meta.station_id,
                                 "model": spec["name"], "l_in": l_in, "l_out": l_out,
                                 "resolution": resolution, "seed": seed,
                                 "reason": str(exc)})
        return key, records, failures
    test = splits["test"]
    for spec in model_specs:
        name = spec["name"]
        for seed in seeds:
            try:
                model = build_model(spec, window_cfg, normalizer)
                if model.is_trainable:
                    model.fit(splits["train"], splits["val"], tc,
                              _cell_seed(seed, series.meta.station_id, name, cell))
                y_hat = model.predict_batch(test.X, test.X_raw_tp)
                metrics = metric_set(y_hat, test.y, extreme)
                records.append({"station": series.meta.station_id, "model": name,
                                "l_in": l_in, "l_out": l_out, "resolution": resolution,
                                "seed": seed, "metrics": metrics.to_dict()})
            except (ValueError, TrainingDiverged) as exc:
                failures.append({"station": series.meta.station_id, "model": name,
                                 "l_in": l_in, "l_out": l_out, "resolution": resolution,
                                 "seed": seed, "reason": str(exc)})
    return key, records, failures


def run_protocol(stations: list[StationSeries], model_specs: list[dict],
                 grid: ProtocolGrid, tc: TrainConfig = TrainConfig(),
                 jobs: int = 1, extreme: ExtremeConfig = ExtremeConfig()) -> EvaluationReport:
    """Evaluate every (station, model, cell, seed) combination.

    Individual cell failures are recorded and the run continues. Results are
    assembled in a fixed enumeration order (stations, then cells, then models,
    then seeds), so the report bytes do not depend on the worker pool.
    """
    if not stations or not model_specs:
        raise ValueError("need at least one station and one model")
    validate_grid_fits(grid, stations)
    names = [spec["name"] for spec in model_specs]
    if len(set(names)) != len(names):
        raise ValueError("model names must be unique")
    report = EvaluationReport(grid, names)
    tc_kwargs = {"learning_rate": tc.learning_rate, "batch_size": tc.batch_size,
                 "max_epochs": tc.max_epochs, "patience": tc.patience,
                 "beta1": tc.beta1, "beta2": tc.beta2, "eps": tc.eps}
    cells = grid.cells()
    tasks = []
    for si, series in enumerate(stations):
        for ci, cell in enumerate(cells):
            tasks.append(((si, ci), series, cell, model_specs, tc_kwargs,
                          list(grid.seeds), extreme.threshold))
    results: dict[tuple[int, int], tuple[list[dict], list[dict]]] = {}
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            for key, recs, fails in pool.map(_run_station_cell, tasks):
                results[key] = (recs, fails)
    else:
        for task in tasks:
            key, recs, fails = _run_station_cell(task)
            results[key] = (recs, fails)
    for si in range(len(stations)):
        for ci in range(len(cells)):
            recs, fails = results[(si, ci)]
            report.records.extend(recs)
            report.failures.extend(fails)
    return report


# ---------------------------------------------------------------------------
# report rendering


def _fmt(value) -> str:
    return "-" if value is None else f"{value:.4f}"


def render_markdown(report: EvaluationReport) -> str:
    """Per-station tables (best value per column bolded) plus model averages
    and rankings."""
    cells = report.grid.cells()
    per_cell = report.per_cell_means()
    by_key = {(c["station"], c["model"], c["l_in"], c["l_out"], c["resolution"]): c
              for c in per_cell}
    stations = []
    for c in per_cell:
        if c["station"] not in stations:
            stations.append(c["station"])

    lines = ["# Evaluation report", ""]
    for station in stations:
        lines.append(f"## Station {station}")
        lines.append("")
        headers = ["model"]
        for l_in, l_out, r in cells:
            headers.append(f"L{l_in}/O{l_out}/R{r}h MSE")
            headers.append(f"L{l_in}/O{l_out}/R{r}h MAE")
        headers += ["avg MSE", "avg MAE"]
        rows = []
        for model in report.model_names:
            row = [model]
            mses, maes = [], []
            for cell in cells:
                entry = by_key.get((station, model, *cell))
                if entry is None:
                    row += ["-", "-"]
                    continue
                row += [f"{entry['mse']:.4f}", f"{entry['mae']:.4f}"]
                mses.append(entry["mse"])
                maes.append(entry["mae"])
            row.append(f"{np.mean(mses):.4f}" if mses else "-")
            row.append(f"{np.mean(maes):.4f}" if maes else "-")
            rows.append(row)
        # bold the best (smallest) value in every numeric column
        for col in range(1, len(headers)):
            numeric = [(i, float(r[col])) for i, r in enumerate(rows) if r[col] != "-"]
            if numeric:
                best = min(numeric, key=lambda kv: kv[1])[0]
                rows[best][col] = f"**{rows[best][col]}**"
        lines.append("| " + " | ".join(headers) + " |")
        lines.append("|" + "|".join("---" for _ in headers) + "|")
        for row in rows:
            lines.append("| " + " | ".join(row) + " |")
        lines.append("")

    lines.append("## Model averages")
    lines.append("")
    lines.append("| model | MSE | MAE | EERE | AEERE | cells |")
    lines.append("|---|---|---|---|---|---|")
    for model, stats in report.per_model_averages().items():
        lines.append(f"| {model} | {_fmt(stats['mse'])} | {_fmt(stats['mae'])} | "
                     f"{_fmt(stats['eere'])} | {_fmt(stats['aeere'])} | {stats['n_cells']} |")
    lines.append("")
    rankings = report.rankings()
    for metric in ("mse", "mae"):
        order = ", ".join(e["model"] for e in rankings[f"by_{metric}"])
        lines.append(f"Ranking by mean {metric.upper()}: {order}")
    lines.append("")
    if report.failures:
        lines.append("## Failures")
        lines.append("")
        for f in report.failures:
            lines.append(f"- {f['station']} {f['model']} L{f['l_in']}/O{f['l_out']}/"
                         f"R{f['resolution']} seed {f['seed']}: {f['reason']}")
        lines.append("")
    return "\n".join(lines)


def render_long_csv(report: EvaluationReport) -> str:
    """Plot-ready long format: one row per (record, metric)."""
    lines = ["station,model,l_in,l_out,resolution,seed,metric,value"]
    for rec in report.records:
        base = (f"{rec['station']},{rec['model']},{rec['l_in']},{rec['l_out']},"
                f"{rec['resolution']},{rec['seed']}")
        metrics = rec["metrics"]
        for name in ("mse", "mae", "eere", "aeere"):
            value = metrics[name]
            if value is not None:
                lines.append(f"{base},{name},{value!r}")
    return "\n".join(lines) + "\n"
