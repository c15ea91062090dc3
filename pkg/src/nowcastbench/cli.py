"""Command-line entry point wiring ingestion, analysis, training, evaluation
and reporting.

Subcommands: ingest, synth, analyze, train, evaluate, report, gradcheck.
Every subcommand is idempotent: unchanged inputs reproduce byte-identical
outputs. Exit codes: 0 success, 2 input-schema problems, 1 other failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, evaluation, ingest, models, stats, synth
from .bfpf import BfpfParams
from .config import RunConfig, load_config
from .core import HOUR, Continent, SchemaError, Seed, StationMeta, StationSeries, rng_for
from .models import TrainingDiverged

GRADCHECK_TOLERANCE = 1e-5


def _resolve_jobs(args, cfg: RunConfig | None) -> int:
    jobs = args.jobs if args.jobs is not None else (cfg.jobs if cfg else 1)
    cap = os.environ.get("NOWCAST_BENCH_THREADS")
    if cap:
        jobs = min(jobs, max(1, int(cap)))
    return max(1, jobs)


def _load_cfg(args) -> RunConfig:
    if not args.config:
        raise ValueError("this subcommand needs --config PATH")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(
            cfg,
            seeds=(args.seed,),
            grid=dataclasses.replace(cfg.grid, seeds=(args.seed,)),
        )
    if args.out is not None:
        cfg = dataclasses.replace(cfg, out_dir=Path(args.out))
    return cfg


def _load_stations(cfg: RunConfig) -> list[StationSeries]:
    out = []
    for source in cfg.stations:
        if source.synthetic is not None:
            out.append(synth.generate_station(source.synthetic))
        else:
            out.append(ingest.read_station_csv(source.csv))
    if not out:
        raise ValueError("config lists no stations")
    return out


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args) -> int:
    cfg = _load_cfg(args)
    if cfg.ingest is None:
        raise ValueError("config has no 'ingest' section")
    grid_dir = cfg.ingest.grid_dir
    if not grid_dir.is_dir():
        raise SchemaError(f"grid directory not found: {grid_dir}")
    met_fields = {}
    for var in ingest.GRID_VARIABLES:
        fields = ingest.load_grid_dir(grid_dir, var)
        if not fields:
            raise SchemaError(f"missing grid files: {grid_dir}/{var}_*.csv")
        met_fields[var] = fields
    precip_fields = ingest.load_grid_dir(grid_dir, ingest.PRECIP_VARIABLE)
    if not precip_fields:
        raise SchemaError(f"missing grid files: {grid_dir}/{ingest.PRECIP_VARIABLE}_*.csv")

    aligned_dir = cfg.out_dir / "aligned"
    aligned_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    failures = []
    for station in cfg.ingest.stations:
        if not station.pwv_csv.is_file():
            raise SchemaError(f"missing station file: {station.pwv_csv}")
        meta = StationMeta(station_id=station.station_id, latitude=station.latitude,
                           longitude=station.longitude, elevation=station.elevation,
                           continent=Continent(station.continent))
        raw = ingest.parse_station_csv(station.pwv_csv)
        span = (int(raw.timestamps[0]),
                int(raw.timestamps[-1]) + (raw.native_step or HOUR))
        report = dataclasses.replace(ingest.completeness(raw, span),
                                     station_id=station.station_id)
        entry = dataclasses.asdict(report)
        entry["malformed_rows"] = raw.malformed_count
        try:
            series = ingest.qc_fill(ingest.align_station(raw, met_fields,
                                                         precip_fields, meta))
            ingest.write_station_csv(series, aligned_dir / f"{station.station_id}.csv")
            ingest.write_station_meta(meta, aligned_dir / f"{station.station_id}.meta.json")
            entry["hours"] = series.n_hours
            print(f"ingested {station.station_id}: {series.n_hours} aligned hours, "
                  f"completeness {report.fraction_present:.4f}")
        except ValueError as exc:
            failures.append({"station": station.station_id, "reason": str(exc)})
            print(f"failed {station.station_id}: {exc}", file=sys.stderr)
        reports.append(entry)
    _write_json(cfg.out_dir / "completeness.json",
                {"stations": reports, "failures": failures})
    return 0 if not failures else (0 if len(failures) < len(cfg.ingest.stations) else 1)


def cmd_synth(args) -> int:
    specs = []
    if args.config:
        cfg = _load_cfg(args)
        specs = list(cfg.synth_specs)
        out_dir = cfg.out_dir / "synthetic"
    else:
        out_dir = Path(args.out or "out") / "synthetic"
    if not specs:
        specs = [synth.SyntheticSpec(duration_hours=args.duration_hours,
                                     zero_fraction=args.zero_fraction,
                                     seed=args.seed if args.seed is not None else 0,
                                     station_id=args.station_id)]
    out_dir.mkdir(parents=True, exist_ok=True)
    for spec in specs:
        series = synth.generate_station(spec)
        ingest.write_station_csv(series, out_dir / f"{spec.station_id}.csv")
        ingest.write_station_meta(series.meta, out_dir / f"{spec.station_id}.meta.json")
        dry = stats.zero_inflation_ratio(series.tp)
        print(f"generated {spec.station_id}: {series.n_hours} hours, "
              f"dry fraction {dry:.4f} (target {spec.zero_fraction:.2f})")
    return 0


def cmd_analyze(args) -> int:
    cfg = _load_cfg(args)
    out_dir = cfg.out_dir / "analysis"
    for series in _load_stations(cfg):
        report = stats.analyze_station(series.data, decay_lags=cfg.decay_lags,
                                       adf_cfg=cfg.adf)
        _write_json(out_dir / f"{series.meta.station_id}.json", report)
        adf_part = report["adf"].get("p")
        adf_text = f"p={adf_part:.4f}" if adf_part is not None else report["adf"].get("error")
        print(f"analyzed {series.meta.station_id}: zero_inflation "
              f"{report['zero_inflation']:.4f}, adf {adf_text}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    stations = _load_stations(cfg)
    cell = cfg.grid.cells()[0]
    window_cfg = models.WindowConfig(l_in=cell[0], l_out=cell[1], resolution=cell[2])
    ckpt_dir = cfg.out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    seed = cfg.seeds[0]
    for series in stations:
        split = evaluation.make_split(series.n_hours)
        normalizer = models.Normalizer.fit(series.data, split.train)
        windows = models.window_dataset(series, window_cfg, split, normalizer)
        for spec in cfg.models:
            model = models.build_model(dict(spec), window_cfg, normalizer)
            if not model.is_trainable:
                continue
            model.fit(windows["train"], windows["val"], cfg.train, Seed(seed))
            path = ckpt_dir / f"{series.meta.station_id}_{model.name}.nwb"
            models.save_checkpoint(model, path)
            print(f"trained {model.name} on {series.meta.station_id}: "
                  f"best val MSE {model.best_val:.6f} (epoch {model.best_epoch}) -> {path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    stations = _load_stations(cfg)
    jobs = _resolve_jobs(args, cfg)
    report = evaluation.run_protocol(stations, [dict(m) for m in cfg.models],
                                     cfg.grid, cfg.train, jobs=jobs)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.out_dir / "report.json"
    path.write_bytes(report.to_json_bytes())
    print(f"evaluated {len(report.records)} cells "
          f"({len(report.failures)} failures) -> {path}")
    return 0


def cmd_report(args) -> int:
    cfg = _load_cfg(args)
    source = Path(args.report) if args.report else cfg.out_dir / "report.json"
    if not source.is_file():
        raise ValueError(f"no evaluation report at {source}; run 'evaluate' first")
    payload = json.loads(source.read_text())
    report = evaluation.EvaluationReport.from_payload(payload)
    md_path = cfg.out_dir / "report.md"
    csv_path = cfg.out_dir / "report_long.csv"
    md_path.write_text(evaluation.render_markdown(report))
    csv_path.write_text(evaluation.render_long_csv(report))
    print(f"wrote {md_path} and {csv_path}")
    return 0


def cmd_gradcheck(args) -> int:
    rng = rng_for(Seed(args.seed if args.seed is not None else 0), "gradcheck")
    window_cfg = models.WindowConfig(l_in=args.length, l_out=4)
    cfg = models.TransformerConfig(d_model=args.d_model, n_heads=args.heads,
                                   n_layers=2, ff_dim=16, bfpf=BfpfParams(tau=args.tau))
    model = models.TransformerForecaster(window_cfg, models.Normalizer.identity(), cfg)
    model.initialize(Seed(args.seed if args.seed is not None else 0))
    batch = args.batch
    x = rng.normal(size=(batch, args.length, 6))
    raw_tp = np.where(rng.random((batch, args.length)) < 0.6, 0.0,
                      rng.lognormal(0.0, 1.0, size=(batch, args.length)))
    y = np.abs(rng.normal(size=(batch, 4)))
    worst = models.grad_check(model, x, raw_tp, y)
    status = "PASS" if worst < GRADCHECK_TOLERANCE else "FAIL"
    print(f"gradcheck max relative error: {worst:.3e} ({status}, tolerance "
          f"{GRADCHECK_TOLERANCE:.0e}; includes both attention-bias scales)")
    return 0 if worst < GRADCHECK_TOLERANCE else 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nowcast-bench",
        description="Benchmark engine for GNSS-driven precipitation nowcasting.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="path to the JSON run configuration")
    parser.add_argument("--seed", type=int, help="override the configured seed list")
    parser.add_argument("--jobs", type=int, help="worker pool size for evaluation")
    parser.add_argument("--out", help="override the configured output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest", help="parse, align and QC raw station inputs").set_defaults(
        func=cmd_ingest)

    p_synth = sub.add_parser("synth", help="generate synthetic station CSVs")
    p_synth.add_argument("--duration-hours", type=int, default=17520)
    p_synth.add_argument("--zero-fraction", type=float, default=0.82)
    p_synth.add_argument("--station-id", default="SYN0")
    p_synth.set_defaults(func=cmd_synth)

    sub.add_parser("analyze", help="per-station data-property reports").set_defaults(
        func=cmd_analyze)
    sub.add_parser("train", help="train models and save checkpoints").set_defaults(
        func=cmd_train)
    sub.add_parser("evaluate", help="run the evaluation protocol").set_defaults(
        func=cmd_evaluate)

    p_report = sub.add_parser("report", help="render Markdown and CSV from a report")
    p_report.add_argument("--report", help="path to report.json (default: <out>/report.json)")
    p_report.set_defaults(func=cmd_report)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient fidelity check")
    p_grad.add_argument("--batch", type=int, default=2)
    p_grad.add_argument("--heads", type=int, default=2)
    p_grad.add_argument("--length", type=int, default=8)
    p_grad.add_argument("--d-model", type=int, default=8)
    p_grad.add_argument("--tau", type=float, default=2.0,
                        help="decay temperature of the zero-proximity bias (hours)")
    p_grad.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
