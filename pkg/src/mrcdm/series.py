"""Univariate series container, cleaning, normalization and windowing."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np


class DataError(ValueError):
    """Input data cannot be used (too few observations, bad CSV, ...)."""


@dataclass(frozen=True)
class TimeSeries:
    """Ordered real samples plus an observation mask.

    ``observed[i]`` is True where ``values[i]`` came from data. Unobserved
    samples hold NaN until :func:`interpolate_missing` fills them.
    """

    values: np.ndarray
    step: float = 1.0
    observed: np.ndarray = field(default=None)  # type: ignore[assignment]
    start: str | None = None

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if self.observed is None:
            observed = np.isfinite(values)
        else:
            observed = np.array(self.observed, dtype=bool).reshape(-1)
        if observed.shape != values.shape:
            raise ValueError(
                f"mask length {observed.shape[0]} != values length {values.shape[0]}"
            )
        values.setflags(write=False)
        observed.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "observed", observed)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def fully_observed(self) -> bool:
        return bool(self.observed.all())

    def with_values(self, values: np.ndarray) -> "TimeSeries":
        return replace(self, values=np.asarray(values, dtype=np.float64), observed=None)

    def slice(self, start: int, stop: int) -> "TimeSeries":
        return replace(
            self, values=self.values[start:stop], observed=self.observed[start:stop]
        )


def as_array(x: TimeSeries | np.ndarray | Sequence[float]) -> np.ndarray:
    if isinstance(x, TimeSeries):
        return x.values
    return np.asarray(x, dtype=np.float64).reshape(-1)


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.7
    val_frac: float = 0.1
    test_frac: float = 0.2

    def __post_init__(self) -> None:
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(not 0.0 < f < 1.0 for f in fracs):
            raise ValueError(f"split fractions must lie in (0, 1): {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fracs)!r}")


@dataclass(frozen=True)
class Normalizer:
    mean: float
    std: float

    def __post_init__(self) -> None:
        if not self.std > 0.0:
            raise ValueError(f"std must be positive, got {self.std!r}")


def interpolate_missing(series: TimeSeries) -> TimeSeries:
    """Fill unobserved samples by linear interpolation.

    Interior gaps are bridged linearly between the nearest observed
    neighbours; leading and trailing gaps repeat the nearest observed value.
    """
    obs = series.observed & np.isfinite(series.values)
    if obs.sum() < 2:
        raise DataError("need at least two observed samples to interpolate")
    idx = np.arange(len(series))
    # np.interp clamps outside the observed range, which is the constant extension
    filled = np.interp(idx, idx[obs], series.values[obs])
    return replace(series, values=filled, observed=np.ones(len(series), dtype=bool))


def clip_outliers_3sigma(series: TimeSeries) -> TimeSeries:
    """Clamp values outside mean +/- 3 std (population std of the input)."""
    x = series.values
    if not np.all(np.isfinite(x)):
        raise DataError("clip_outliers_3sigma requires a fully observed series")
    mu = float(x.mean())
    sd = float(x.std())
    if sd == 0.0:
        return series
    lo, hi = mu - 3.0 * sd, mu + 3.0 * sd
    return replace(series, values=np.clip(x, lo, hi))


def fit_normalizer(train: TimeSeries | np.ndarray) -> Normalizer:
    """Z-score statistics of the training segment (population std)."""
    x = as_array(train)
    if x.shape[0] < 2:
        raise DataError("need at least two samples to fit a normalizer")
    sd = float(x.std())
    if sd == 0.0 or not math.isfinite(sd):
        raise DataError("training segment has zero variance; normalization undefined")
    return Normalizer(mean=float(x.mean()), std=sd)


def normalize(series: TimeSeries, n: Normalizer) -> TimeSeries:
    return series.with_values((series.values - n.mean) / n.std)


def denormalize(series: TimeSeries, n: Normalizer) -> TimeSeries:
    return series.with_values(series.values * n.std + n.mean)


def chronological_split(
    series: TimeSeries, spec: SplitSpec = SplitSpec()
) -> Tuple[TimeSeries, TimeSeries, TimeSeries]:
    """Contiguous train/val/test segments; rounding remainder goes to test."""
    n = len(series)
    n_train = int(math.floor(n * spec.train_frac))
    n_val = int(math.floor(n * spec.val_frac))
    a, b = n_train, n_train + n_val
    return series.slice(0, a), series.slice(a, b), series.slice(b, n)


def window_count(length: int, seq_len: int, horizon: int, stride: int) -> int:
    if seq_len < 1 or horizon < 1 or stride < 1:
        raise ValueError("seq_len, horizon and stride must be positive")
    if seq_len + horizon > length:
        raise ValueError(
            f"seq_len + horizon = {seq_len + horizon} exceeds series length {length}"
        )
    return (length - seq_len - horizon) // stride + 1


def make_windows(
    series: TimeSeries | np.ndarray, seq_len: int, horizon: int, stride: int = 1
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Sliding (history, target) pairs advancing by ``stride``."""
    x = as_array(series)
    count = window_count(x.shape[0], seq_len, horizon, stride)
    pairs = []
    for i in range(count):
        t = seq_len + i * stride
        pairs.append((x[t - seq_len : t].copy(), x[t : t + horizon].copy()))
    return pairs


def stack_windows(
    series: TimeSeries | np.ndarray, seq_len: int, horizon: int, stride: int = 1
) -> Tuple[np.ndarray, np.ndarray]:
    pairs = make_windows(series, seq_len, horizon, stride)
    return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


# --- ETT-format CSV -------------------------------------------------------

_MISSING = {"", "nan", "NaN", "NA"}


def read_ett_csv(path: str | Path, column: str) -> TimeSeries:
    """Read one feature column of an ETT-style CSV (timestamp first)."""
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
    except (OSError, StopIteration) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if column not in header[1:]:
        raise DataError(f"column {column!r} not in {header[1:]}")
    j = header.index(column)
    values = np.empty(len(rows))
    for i, row in enumerate(rows):
        cell = row[j].strip() if j < len(row) else ""
        values[i] = np.nan if cell in _MISSING else float(cell)
    start = rows[0][0] if rows else None
    return TimeSeries(values=values, observed=np.isfinite(values), start=start)


def write_ett_csv(
    path: str | Path,
    columns: dict,
    start: str = "2016-07-01 00:00:00",
    step_hours: float = 1.0,
) -> None:
    """Write equal-length columns as an ETT-style CSV with hourly timestamps."""
    names = list(columns)
    arrays = [as_array(columns[k]) for k in names]
    n = arrays[0].shape[0]
    t0 = np.datetime64(start.replace(" ", "T"), "s")
    step = np.timedelta64(int(round(step_hours * 3600)), "s")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *names])
        for i in range(n):
            stamp = str(t0 + i * step).replace("T", " ")
            w.writerow([stamp, *(_fmt(a[i]) for a in arrays)])


def _fmt(v: float) -> str:
    return "NaN" if not math.isfinite(v) else repr(float(v))


def prepare(series: TimeSeries, spec: SplitSpec = SplitSpec()):
    """Impute, clip, split, and z-score with training statistics.

    Returns ``(train, val, test, normalizer)`` in normalized units.
    """
    clean = clip_outliers_3sigma(interpolate_missing(series))
    train, val, test = chronological_split(clean, spec)
    norm = fit_normalizer(train)
    return normalize(train, norm), normalize(val, norm), normalize(test, norm), norm

