"""Metrics, evaluation protocols, ablations and run reporting.

All metrics are computed in normalized (z-score) units. Evaluation targets
are consecutive non-overlapping ``horizon``-long blocks of the test split,
starting at its first sample; the matching histories may reach back into
the preceding validation data so every input length sees the same targets.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
import torch

from . import __version__
from .baselines import arima_fit, arima_forecast, naive_last, seasonal_naive
from .model import MRCDM, ModelConfig, TrainConfig, config_hash, train
from .series import TimeSeries, as_array

Forecaster = Callable[[np.ndarray], np.ndarray]  # (B, seq_len) -> (B, horizon)


# --- metrics -----------------------------------------------------------------


@dataclass(frozen=True)
class MetricReport:
    mse: float
    mae: float
    rmse: float
    n_windows: int
    per_window_mse: Optional[tuple] = None

    def row(self) -> Dict[str, object]:
        return {"mse": self.mse, "mae": self.mae, "rmse": self.rmse, "n_windows": self.n_windows}


def compute_metrics(pred, truth, keep_windows: bool = False) -> MetricReport:
    """MSE/MAE/RMSE over all points; a 2-D input is read as one row per window."""
    p = np.atleast_2d(as_array(pred) if isinstance(pred, TimeSeries) else np.asarray(pred, dtype=np.float64))
    t = np.atleast_2d(as_array(truth) if isinstance(truth, TimeSeries) else np.asarray(truth, dtype=np.float64))
    if p.shape != t.shape:
        raise ValueError(f"prediction shape {p.shape} != truth shape {t.shape}")
    if p.size == 0:
        raise ValueError("cannot score an empty forecast")
    err = p - t
    per_window = (err**2).mean(axis=1)
    mse = float(np.mean(per_window))
    return MetricReport(
        mse=mse,
        mae=float(np.mean(np.abs(err))),
        rmse=math.sqrt(mse),
        n_windows=p.shape[0],
        per_window_mse=tuple(float(v) for v in per_window) if keep_windows else None,
    )


# --- windows and forecasters ----------------------------------------------------


def evaluation_windows(test, seq_len: int, horizon: int, context=None):
    """``(histories, targets)`` for non-overlapping target blocks of ``test``."""
    x = as_array(test)
    ctx = np.empty(0) if context is None else as_array(context)
    full = np.concatenate([ctx, x])
    offset = ctx.shape[0]
    n = x.shape[0] // horizon
    starts = [offset + i * horizon for i in range(n) if offset + i * horizon >= seq_len]
    if not starts:
        raise ValueError(
            f"test split of {x.shape[0]} samples holds no {horizon}-step target with {seq_len} history"
        )
    hist = np.stack([full[s - seq_len : s] for s in starts])
    tgt = np.stack([full[s : s + horizon] for s in starts])
    return hist, tgt


def evaluate(forecaster: Forecaster, test, seq_len: int, horizon: int, context=None) -> MetricReport:
    hist, tgt = evaluation_windows(test, seq_len, horizon, context)
    pred = np.asarray(forecaster(hist), dtype=np.float64)[:, :horizon]
    return compute_metrics(pred, tgt, keep_windows=True)


def model_forecaster(model: MRCDM, n_samples: int = 8, seed: int = 0) -> Forecaster:
    def run(hist: np.ndarray) -> np.ndarray:
        gen = torch.Generator().manual_seed(seed)
        return model.forecast(hist, n_samples=n_samples, generator=gen)

    return run


def baseline_forecaster(name: str, horizon: int, train_series=None, seed: int = 0) -> Forecaster:
    if name == "naive_last":
        return lambda h: np.stack([naive_last(r, horizon) for r in h])
    if name == "seasonal_naive":
        return lambda h: np.stack([seasonal_naive(r, horizon) for r in h])
    if name == "arima":
        if train_series is None:
            raise ValueError("arima needs a training series")
        fitted = arima_fit(train_series)

        def run(h: np.ndarray) -> np.ndarray:
            rng = np.random.default_rng(seed)
            return np.stack([arima_forecast(fitted, r, horizon, rng)[0] for r in h])

        return run
    raise ValueError(f"unknown baseline {name!r}")


BASELINES = ("arima", "naive_last", "seasonal_naive")


# --- variants ------------------------------------------------------------------


class AblationVariant(str, Enum):
    FULL = "FullModel"
    NO_DECOMPOSITION = "NoDecomposition"
    UNCONDITIONAL = "UnconditionalDiffusion"
    NO_IMAGE_FUSION = "NoImageFusion"
    NO_TREND1 = "NoTrend1"
    NO_TREND3 = "NoTrend3"

    @classmethod
    def parse(cls, name: str) -> "AblationVariant":
        for v in cls:
            if v.value.lower() == name.lower() or v.name.lower() == name.lower():
                return v
        raise ValueError(f"unknown variant {name!r}; choose from {[v.value for v in cls]}")


VARIANT_DELTAS: Dict[AblationVariant, dict] = {
    AblationVariant.FULL: {},
    AblationVariant.NO_DECOMPOSITION: {"decompose": False},
    AblationVariant.UNCONDITIONAL: {"conditional": False},
    AblationVariant.NO_IMAGE_FUSION: {"lifted": False},
    AblationVariant.NO_TREND1: {"drop_components": ("trend1",)},
    AblationVariant.NO_TREND3: {"drop_components": ("trend3",)},
}


def variant_config(base: ModelConfig, variant: AblationVariant | str) -> ModelConfig:
    if isinstance(variant, str):
        variant = AblationVariant.parse(variant)
    return replace(base, **VARIANT_DELTAS[variant])


# --- runs --------------------------------------------------------------------


@dataclass
class Splits:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    dataset_id: str

    @property
    def context(self) -> np.ndarray:
        return np.concatenate([self.train, self.val])


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    variant: str
    dataset_id: str
    artifact_version: str
    model_config: dict
    train_config: dict
    n_samples: int
    wall_clock_s: float
    metrics: dict
    fusion_layout: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


@dataclass
class RunResult:
    model: MRCDM
    trace: List[dict]
    report: MetricReport
    manifest: RunManifest
    forecaster: Forecaster = field(repr=False, default=None)


def artifact_version() -> str:
    """Package version plus a digest of the package sources."""
    h = hashlib.sha1()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def run_model(
    splits: Splits,
    cfg: ModelConfig,
    tcfg: TrainConfig,
    variant: str = AblationVariant.FULL.value,
    n_samples: int = 8,
    callback=None,
) -> RunResult:
    """Train one model from scratch on the training split and score it."""
    t0 = time.perf_counter()
    model = MRCDM(cfg, seed=tcfg.seed)
    trace = train(model, splits.train, tcfg, callback)
    fc = model_forecaster(model, n_samples=n_samples, seed=tcfg.seed)
    report = evaluate(fc, splits.test, cfg.seq_len, cfg.horizon, splits.context)
    manifest = RunManifest(
        config_hash=config_hash(cfg.to_dict(), tcfg.to_dict(), {"n_samples": n_samples}),
        seed=tcfg.seed,
        variant=variant,
        dataset_id=splits.dataset_id,
        artifact_version=artifact_version(),
        model_config=cfg.to_dict(),
        train_config=tcfg.to_dict(),
        n_samples=n_samples,
        wall_clock_s=round(time.perf_counter() - t0, 3),
        metrics=report.row(),
        fusion_layout=model.fuser.layout_table(),
    )
    return RunResult(model, trace, report, manifest, fc)


def run_ablations(
    splits: Splits,
    variants: Iterable[AblationVariant | str],
    seeds: Sequence[int],
    base: ModelConfig = ModelConfig(),
    tcfg: TrainConfig = TrainConfig(),
    n_samples: int = 8,
    on_result=None,
) -> List[dict]:
    """One row per (variant, seed); every variant gets the same budget."""
    rows = []
    for v in variants:
        v = AblationVariant.parse(v) if isinstance(v, str) else v
        cfg = variant_config(base, v)
        for seed in seeds:
            res = run_model(splits, cfg, replace(tcfg, seed=seed), v.value, n_samples)
            row = {"variant": v.value, "seed": seed, **res.report.row()}
            rows.append(row)
            if on_result is not None:
                on_result(row, res)
    return rows


def baseline_rows(splits: Splits, seq_len: int, horizon: int, names=BASELINES) -> List[dict]:
    rows = []
    for name in names:
        fc = baseline_forecaster(name, horizon, splits.train)
        rep = evaluate(fc, splits.test, seq_len, horizon, splits.context)
        rows.append({"variant": name, "seed": "", **rep.row()})
    return rows


def multi_horizon(
    forecaster: Forecaster,
    test,
    seq_len: int,
    horizons: Sequence[int] = (24, 48, 96, 192),
    context=None,
) -> Dict[int, MetricReport]:
    """Score one forecaster at several horizons.

    Each horizon is scored on the same windows :func:`evaluate` would use.
    The forecaster must produce at least ``max(horizons)`` steps; it is called
    once on the union of all needed histories and its output truncated.
    """
    windows = {h: evaluation_windows(test, seq_len, h, context) for h in horizons}
    x = as_array(test)
    ctx = np.empty(0) if context is None else as_array(context)
    full = np.concatenate([ctx, x])
    starts = {}
    for h in horizons:
        n = x.shape[0] // h
        starts[h] = [ctx.shape[0] + i * h for i in range(n) if ctx.shape[0] + i * h >= seq_len]
    union = sorted(set().union(*starts.values()))
    preds = np.asarray(forecaster(np.stack([full[s - seq_len : s] for s in union])), dtype=np.float64)
    row_of = {s: i for i, s in enumerate(union)}
    out = {}
    for h in horizons:
        rows = [row_of[s] for s in starts[h]]
        out[h] = compute_metrics(preds[rows, :h], windows[h][1], keep_windows=True)
    return out


def input_length_sweep(
    splits: Splits,
    seq_lens: Sequence[int] = (48, 96, 192),
    horizon: int = 96,
    seeds: Sequence[int] = (42, 43, 44),
    base: ModelConfig = ModelConfig(),
    tcfg: TrainConfig = TrainConfig(),
    n_samples: int = 8,
    on_result=None,
) -> List[dict]:
    rows = []
    for L in seq_lens:
        cfg = replace(base, seq_len=L, horizon=horizon)
        for seed in seeds:
            res = run_model(splits, cfg, replace(tcfg, seed=seed), AblationVariant.FULL.value, n_samples)
            row = {"seq_len": L, "seed": seed, **res.report.row()}
            rows.append(row)
            if on_result is not None:
                on_result(row, res)
    return rows


def multi_seed(run: Callable[[int], MetricReport], seeds: Sequence[int] = (42, 43, 44)) -> Dict[str, dict]:
    """Mean and sample standard deviation of each metric across seeds."""
    reports = [run(s) for s in sorted(seeds)]
    return aggregate([r.row() for r in reports])


def aggregate(rows: Sequence[Mapping], metrics=("mse", "mae", "rmse")) -> Dict[str, dict]:
    out = {}
    for m in metrics:
        vals = np.array([float(r[m]) for r in rows])
        out[m] = {
            "mean": float(vals.mean()),
            "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
        }
    return out


def summarize(rows: Sequence[Mapping], key: str) -> List[dict]:
    """Group rows by ``key`` (sorted) and average each metric."""
    groups: Dict[object, list] = {}
    for r in rows:
        groups.setdefault(r[key], []).append(r)
    out = []
    for k in sorted(groups, key=str):
        agg = aggregate(groups[k])
        out.append({
            key: k,
            "runs": len(groups[k]),
            **{f"{m}_{s}": agg[m][s] for m in ("mse", "mae", "rmse") for s in ("mean", "std")},
        })
    return out


# --- report files ------------------------------------------------------------------


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(rows: Sequence[Mapping], path, columns: Optional[Sequence[str]] = None) -> None:
    if not rows:
        raise ValueError("no rows to write")
    columns = list(columns or rows[0].keys())
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c, "")) for c in columns])


def read_csv(path) -> List[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# --- SVG ------------------------------------------------------------------------

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd")


def _polyline(xs, ys, sx, sy, color: str) -> str:
    pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>'


def line_plot_svg(
    series: Mapping[str, tuple],
    path,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    width: int = 640,
    height: int = 320,
) -> None:
    """``series`` maps a label to ``(xs, ys)``; writes a self-contained SVG."""
    pad = 48
    xs_all = np.concatenate([np.asarray(v[0], dtype=float) for v in series.values()])
    ys_all = np.concatenate([np.asarray(v[1], dtype=float) for v in series.values()])
    x0, x1 = float(xs_all.min()), float(xs_all.max())
    y0, y1 = float(ys_all.min()), float(ys_all.max())
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="13">{title}</text>',
        f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle">{xlabel}</text>',
        f'<text x="12" y="{height / 2}" transform="rotate(-90 12 {height / 2})" '
        f'text-anchor="middle">{ylabel}</text>',
        f'<text x="{pad - 4}" y="{height - pad}" text-anchor="end">{y0:.3g}</text>',
        f'<text x="{pad - 4}" y="{pad + 4}" text-anchor="end">{y1:.3g}</text>',
        f'<text x="{pad}" y="{height - pad + 14}" text-anchor="middle">{x0:.4g}</text>',
        f'<text x="{width - pad}" y="{height - pad + 14}" text-anchor="middle">{x1:.4g}</text>',
    ]
    for i, (label, (xs, ys)) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        parts.append(_polyline(xs, ys, sx, sy, color))
        parts.append(
            f'<text x="{width - pad + 4 - 120}" y="{pad + 14 * i}" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def forecast_svg(history: np.ndarray, truth: np.ndarray, pred: np.ndarray, path) -> None:
    L, H = len(history), len(pred)
    series = {"history": (np.arange(L), history), "prediction": (np.arange(L, L + H), pred)}
    if truth is not None:
        series["truth"] = (np.arange(L, L + H), truth)
    line_plot_svg(series, path, title="Forecast", xlabel="step", ylabel="value")


def horizon_svg(reports: Mapping[str, Mapping[int, MetricReport]], path) -> None:
    series = {
        label: (np.array(sorted(r)), np.array([r[h].mse for h in sorted(r)]))
        for label, r in reports.items()
    }
    line_plot_svg(series, path, title="Error vs horizon", xlabel="horizon", ylabel="MSE")
