"""Classical reference forecasters: ARIMA(2,1,2) and naive persistence."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter

from .series import TimeSeries, as_array

_PENALTY = 1e12


@dataclass
class ArimaModel:
    ar: np.ndarray = field(default_factory=lambda: np.zeros(2))
    ma: np.ndarray = field(default_factory=lambda: np.zeros(2))
    intercept: float = 0.0
    sigma2: float = 0.0
    d: int = 1
    converged: bool = True
    degenerate: bool = False

    def params(self) -> np.ndarray:
        return np.concatenate([self.ar, self.ma, [self.intercept]])


def _split(theta: np.ndarray, p: int, q: int):
    return theta[:p], theta[p : p + q], theta[p + q]


def css_residuals(w: np.ndarray, ar: np.ndarray, ma: np.ndarray, c: float) -> np.ndarray:
    """Innovations of an ARMA(p, q) on ``w``, conditioning on the first ``p``
    values and zero pre-sample innovations."""
    p = len(ar)
    y = w[p:] - c
    for i, phi in enumerate(ar, start=1):
        y = y - phi * w[p - i : len(w) - i]
    return lfilter([1.0], np.concatenate([[1.0], ma]), y)


def _objective(theta: np.ndarray, w: np.ndarray, p: int, q: int) -> float:
    ar, ma, c = _split(theta, p, q)
    # MA roots inside the unit circle make the inversion blow up
    if q and np.any(np.abs(np.roots(np.concatenate([[1.0], ma]))) >= 1.0):
        return _PENALTY
    with np.errstate(over="ignore", invalid="ignore"):
        e = css_residuals(w, ar, ma, c)
        sse = float(np.dot(e, e))
    return sse if np.isfinite(sse) else _PENALTY


def arima_fit(
    train: TimeSeries | np.ndarray,
    order: tuple = (2, 1, 2),
    xatol: float = 1e-6,
    maxiter: int = 2000,
) -> ArimaModel:
    """Conditional-sum-of-squares fit by Nelder-Mead from all-zero start.

    ``converged`` reports whether the simplex search met its tolerance; the
    best point found is returned either way.
    """
    p, d, q = order
    x = as_array(train)
    if x.shape[0] < 50:
        raise ValueError("ARIMA fitting needs at least 50 observations")
    w = np.diff(x, n=d)
    if np.ptp(w) == 0.0:
        return ArimaModel(
            ar=np.zeros(p), ma=np.zeros(q), intercept=float(w[0]), sigma2=0.0,
            d=d, converged=False, degenerate=True,
        )
    res = minimize(
        _objective, np.zeros(p + q + 1), args=(w, p, q), method="Nelder-Mead",
        options={"xatol": xatol, "fatol": 1e-10, "maxiter": maxiter, "maxfev": 4 * maxiter},
    )
    ar, ma, c = _split(res.x, p, q)
    e = css_residuals(w, ar, ma, c)
    return ArimaModel(
        ar=ar.copy(), ma=ma.copy(), intercept=float(c), sigma2=float(np.mean(e * e)),
        d=d, converged=bool(res.success),
    )


def _simulate(m: ArimaModel, w: np.ndarray, e: np.ndarray, shocks: np.ndarray) -> np.ndarray:
    """Differenced-scale paths; ``shocks`` is ``(n_paths, horizon)``."""
    p, q = len(m.ar), len(m.ma)
    n_paths, horizon = shocks.shape
    hist_w = np.tile(w[-p:] if p else np.empty(0), (n_paths, 1))
    hist_e = np.tile(e[-q:] if q else np.empty(0), (n_paths, 1))
    ws = np.concatenate([hist_w, np.zeros((n_paths, horizon))], axis=1)
    es = np.concatenate([hist_e, shocks], axis=1)
    for t in range(horizon):
        val = m.intercept + shocks[:, t]
        for i in range(1, p + 1):
            val = val + m.ar[i - 1] * ws[:, p + t - i]
        for j in range(1, q + 1):
            val = val + m.ma[j - 1] * es[:, q + t - j]
        ws[:, p + t] = val
    return ws[:, p:]


def arima_forecast(
    m: ArimaModel,
    history: TimeSeries | np.ndarray,
    horizon: int,
    rng: np.random.Generator | None = None,
    draws: int = 100,
):
    """Point forecast (zero future shocks) and Monte Carlo std band."""
    x = as_array(history)
    if m.degenerate:
        # constant differences: a straight line, flat when the step is zero
        return x[-1] + m.intercept * np.arange(1, horizon + 1), np.zeros(horizon)
    w = np.diff(x, n=m.d)
    e = css_residuals(w, m.ar, m.ma, m.intercept)
    e = np.concatenate([np.zeros(len(w) - len(e)), e])
    point_w = _simulate(m, w, e, np.zeros((1, horizon)))[0]
    point = x[-1] + np.cumsum(point_w)
    if draws <= 0:
        return point, np.zeros(horizon)
    rng = rng if rng is not None else np.random.default_rng(0)
    shocks = rng.normal(0.0, np.sqrt(m.sigma2), size=(draws, horizon))
    paths = x[-1] + np.cumsum(_simulate(m, w, e, shocks), axis=1)
    return point, paths.std(axis=0)


def naive_last(history: TimeSeries | np.ndarray, horizon: int) -> np.ndarray:
    x = as_array(history)
    return np.full(horizon, x[-1])


def seasonal_naive(history: TimeSeries | np.ndarray, horizon: int, period: int = 24) -> np.ndarray:
    """Repeat the last ``period`` observations."""
    x = as_array(history)
    if x.shape[0] < period:
        raise ValueError(f"history shorter than one period ({period})")
    last = x[-period:]
    return np.resize(last, horizon)
