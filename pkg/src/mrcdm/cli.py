"""Command-line front end: ``mrcdm {synth,train,forecast,evaluate,ablate,sweep}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure, 5 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_run_config
from .datagen import synthesize
from .evaluation import (
    Splits,
    baseline_rows,
    evaluation_windows,
    forecast_svg,
    horizon_svg,
    model_forecaster,
    multi_horizon,
    read_csv,
    compute_metrics,
    run_model,
    summarize,
    variant_config,
    write_csv,
)
from .model import NumericError
from .series import DataError, TimeSeries, prepare, read_ett_csv, write_ett_csv

log = logging.getLogger("mrcdm")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5
METRIC_COLUMNS = ["mse", "mae", "rmse", "n_windows"]


# --- shared helpers ------------------------------------------------------------


def _threads() -> None:
    raw = os.environ.get("MRCDM_THREADS")
    if raw is None:
        return
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError([f"MRCDM_THREADS: expected a positive integer, got {raw!r}"]) from None
    torch.set_num_threads(n)
    os.environ.setdefault("OMP_NUM_THREADS", str(n))


def load_series(rc: RunConfig) -> TimeSeries:
    if rc.data_path:
        return read_ett_csv(rc.data_path, rc.column)
    return synthesize(rc.synth)


def load_splits(rc: RunConfig):
    train, val, test, norm = prepare(load_series(rc))
    return Splits(train.values, val.values, test.values, rc.dataset_id), norm


def _out_dir(rc: RunConfig) -> Path:
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(path: Path, rc: RunConfig, command: str, extra: Optional[dict] = None) -> None:
    body = {"command": command, "run_config": rc.to_dict(), **(extra or {})}
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _progress(record: dict) -> None:
    log.info("epoch %d loss %.5f", record["epoch"], record["loss"])


# --- commands --------------------------------------------------------------------


def cmd_synth(rc: RunConfig, args) -> None:
    out = _out_dir(rc)
    series = synthesize(rc.synth)
    write_ett_csv(out / "synth.csv", {rc.column: series.values})
    _write_manifest(out / "manifest.json", rc, "synth")
    log.info("wrote %s (%d points)", out / "synth.csv", len(series))


def cmd_train(rc: RunConfig, args) -> None:
    out = _out_dir(rc)
    splits, _ = load_splits(rc)
    seed = rc.seeds[0]
    cfg = variant_config(rc.model_config(), rc.variant)
    res = run_model(splits, cfg, rc.train_config(seed), rc.variant, rc.n_samples, _progress)
    save_checkpoint(res.model, out / "checkpoint.json", seed, {"dataset_id": rc.dataset_id})
    write_csv(res.trace, out / "trace.csv")
    write_csv([{"variant": rc.variant, "seed": seed, **res.report.row()}], out / "report.csv")
    (out / "run_manifest.json").write_text(res.manifest.to_json(), encoding="utf-8")
    _write_manifest(out / "manifest.json", rc, "train")


def cmd_forecast(rc: RunConfig, args) -> None:
    if not args.checkpoint:
        raise ConfigError(["--checkpoint: required for forecast"])
    out = _out_dir(rc)
    model, blob = load_checkpoint(args.checkpoint)
    splits, norm = load_splits(rc)
    cfg = model.cfg
    hist, tgt = evaluation_windows(splits.test, cfg.seq_len, cfg.horizon, splits.context)
    if not 0 <= args.window < len(hist):
        raise ConfigError([f"--window: must lie in [0, {len(hist)})"])
    fc = model_forecaster(model, rc.n_samples, seed=blob["seed"])
    pred = fc(hist[args.window : args.window + 1])[0]
    scale = lambda v: v * norm.std + norm.mean  # noqa: E731
    rows = [
        {"step": i, "prediction": float(scale(pred[i])), "truth": float(scale(tgt[args.window][i]))}
        for i in range(cfg.horizon)
    ]
    write_csv(rows, out / "forecast.csv")
    if args.plot:
        forecast_svg(scale(hist[args.window]), scale(tgt[args.window]), scale(pred), out / "forecast.svg")
    _write_manifest(out / "manifest.json", rc, "forecast",
                    {"checkpoint": str(args.checkpoint), "window": args.window})


def cmd_evaluate(rc: RunConfig, args) -> None:
    out = _out_dir(rc)
    if args.predictions:
        rows = read_csv(args.predictions)
        try:
            pred = np.array([float(r["prediction"]) for r in rows])
            truth = np.array([float(r["truth"]) for r in rows])
        except (KeyError, ValueError) as exc:
            raise DataError(f"{args.predictions}: need numeric prediction,truth columns ({exc})") from exc
        write_csv([{"source": Path(args.predictions).name, **compute_metrics(pred, truth).row()}],
                  out / "report.csv")
        _write_manifest(out / "manifest.json", rc, "evaluate", {"predictions": str(args.predictions)})
        return
    splits, _ = load_splits(rc)
    horizon = max(rc.horizons) if args.multi_horizon else rc.horizon
    cfg = variant_config(rc.model_config(horizon=horizon), rc.variant)
    rows, curves = [], {}
    for seed in rc.seeds:
        res = run_model(splits, cfg, rc.train_config(seed), rc.variant, rc.n_samples, _progress)
        rows.append({"variant": rc.variant, "seed": seed, **res.report.row()})
        (out / f"run_{rc.variant}_{seed}.json").write_text(res.manifest.to_json(), encoding="utf-8")
        if args.multi_horizon:
            curves[seed] = multi_horizon(res.forecaster, splits.test, cfg.seq_len, rc.horizons, splits.context)
    rows += baseline_rows(splits, cfg.seq_len, cfg.horizon)
    write_csv(rows, out / "report.csv", ["variant", "seed", *METRIC_COLUMNS])
    write_csv(summarize(rows, "variant"), out / "summary.csv")
    if curves:
        hrows = [{"seed": s, "horizon": h, **rep.row()} for s, c in curves.items() for h, rep in c.items()]
        write_csv(hrows, out / "horizons.csv")
        if args.plot:
            horizon_svg({f"seed {s}": c for s, c in curves.items()}, out / "horizons.svg")
    _write_manifest(out / "manifest.json", rc, "evaluate", {"multi_horizon": bool(args.multi_horizon)})


def cmd_ablate(rc: RunConfig, args) -> None:
    out = _out_dir(rc)
    splits, _ = load_splits(rc)
    base = rc.model_config()
    rows = []
    variants = [rc.variant] if args.variant else list(rc.variants)
    for v in variants:
        cfg = variant_config(base, v)
        for seed in rc.seeds:
            res = run_model(splits, cfg, rc.train_config(seed), v, rc.n_samples)
            rows.append({"variant": v, "seed": seed, **res.report.row()})
            (out / f"run_{v}_{seed}.json").write_text(res.manifest.to_json(), encoding="utf-8")
            log.info("%s seed %d mse %.5f", v, seed, res.report.mse)
    write_csv(rows, out / "ablation.csv", ["variant", "seed", *METRIC_COLUMNS])
    base_rows = baseline_rows(splits, base.seq_len, base.horizon)
    write_csv(base_rows, out / "baselines.csv", ["variant", "seed", *METRIC_COLUMNS])
    write_csv(summarize(rows + base_rows, "variant"), out / "summary.csv")
    _write_manifest(out / "manifest.json", rc, "ablate")


def cmd_sweep(rc: RunConfig, args) -> None:
    out = _out_dir(rc)
    splits, _ = load_splits(rc)
    rows = []
    for L in rc.seq_lens:
        cfg = variant_config(rc.model_config(seq_len=L), rc.variant)
        for seed in rc.seeds:
            res = run_model(splits, cfg, rc.train_config(seed), rc.variant, rc.n_samples)
            rows.append({"seq_len": L, "seed": seed, **res.report.row()})
            (out / f"run_L{L}_{seed}.json").write_text(res.manifest.to_json(), encoding="utf-8")
            log.info("seq_len %d seed %d mse %.5f", L, seed, res.report.mse)
    write_csv(rows, out / "sweep.csv", ["seq_len", "seed", *METRIC_COLUMNS])
    write_csv(summarize(rows, "seq_len"), out / "summary.csv")
    _write_manifest(out / "manifest.json", rc, "sweep")


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "forecast": cmd_forecast,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrcdm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--seed", type=int, help="single seed (synth: generator seed)")
        p.add_argument("--variant", help="ablation variant name")
        p.add_argument("--horizon", type=int)
        p.add_argument("--seq-len", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--plot", action="store_true", help="also write SVG plots")
        if name == "forecast":
            p.add_argument("--checkpoint", required=True)
            p.add_argument("--window", type=int, default=0, help="test window index")
        if name == "evaluate":
            p.add_argument("--predictions", help="CSV with prediction,truth columns to score")
            p.add_argument("--multi-horizon", action="store_true",
                           help="train at the longest configured horizon and score every horizon")
    return parser


def _overrides(args) -> dict:
    o = {"variant": args.variant, "horizon": args.horizon, "seq_len": args.seq_len, "out": args.out}
    if args.seed is not None:
        if args.command == "synth":
            o["synth_seed"] = args.seed
        else:
            o["seeds"] = [args.seed]
    return o


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        _threads()
        rc = load_run_config(args.config, _overrides(args))
        COMMANDS[args.command](rc, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
