"""Recover power and performance model parameters from measured sweeps.

The estimators follow the scikit-learn contract (``fit(X, y)`` returning
``self``, trailing-underscore fitted attributes, ``get_params``), where ``X``
holds clock frequencies in MHz as a column vector or a 1-D array. The
``fit_*`` functions are thin wrappers that take ``(f, value)`` point lists
and return a :class:`FitResult`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import (
    DegenerateInputError,
    DomainError,
    FitError,
    InsufficientPointsError,
)
from .model import PerfModel, PowerModel, Regime, Superlinear, predict_power


@dataclass(frozen=True)
class FitResult:
    params: Union[PowerModel, PerfModel]
    rms_residual: float
    n_points: int

    def to_dict(self):
        return {
            "params": self.params.to_dict(),
            "rms_residual": self.rms_residual,
            "n_points": self.n_points,
        }


def _check_xy(X, y, min_points):
    f = np.asarray(X, dtype=float)
    if f.ndim == 2:
        if f.shape[1] != 1:
            raise ValueError(f"expected a single frequency column, got shape {f.shape}")
        f = f[:, 0]
    elif f.ndim != 1:
        raise ValueError(f"expected 1-D or column frequencies, got shape {f.shape}")
    y = np.asarray(y, dtype=float).ravel()
    if f.shape[0] != y.shape[0]:
        raise ValueError(f"{f.shape[0]} frequencies but {y.shape[0]} values")
    if f.shape[0] < min_points:
        raise InsufficientPointsError(f"need at least {min_points} points, got {f.shape[0]}")
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(y))):
        raise ValueError("input contains NaN or infinity")
    if np.any(f <= 0):
        raise ValueError("frequencies must be > 0")
    return f, y


def _as_freqs(X):
    f = np.asarray(X, dtype=float)
    return f[:, 0] if f.ndim == 2 else f.ravel()


def _ols(x, y):
    """Least-squares line ``y = slope * x + intercept`` on centered data."""
    x_mean = math.fsum(x) / len(x)
    y_mean = math.fsum(y) / len(y)
    dx = x - x_mean
    sxx = math.fsum(dx * dx)
    if sxx == 0.0:
        raise DegenerateInputError("all frequencies are equal; slope is undefined")
    slope = math.fsum(dx * (y - y_mean)) / sxx
    return slope, y_mean - slope * x_mean


def _rms(r):
    return math.sqrt(math.fsum(np.square(r)) / len(r))


class LinearPowerRegressor(RegressorMixin, BaseEstimator):
    """Ordinary least squares ``P = m * f + P_s``."""

    def fit(self, X, y):
        f, p = _check_xy(X, y, 2)
        self.m_, self.p_static_ = _ols(f, p)
        self.rms_residual_ = _rms(p - self._eval(f))
        self.n_points_ = len(f)
        return self

    def _eval(self, f):
        return self.m_ * f + self.p_static_

    def predict(self, X):
        check_is_fitted(self, "m_")
        return self._eval(_as_freqs(X))

    def to_model(self):
        check_is_fitted(self, "m_")
        m, p_static = self.m_, self.p_static_
        # round-off on flat data can leave a slope of -1e-18
        if -1e-12 * max(1.0, abs(p_static)) <= m < 0:
            m = 0.0
        if m < 0 or p_static < 0:
            raise FitError(f"fitted power model is unphysical (m={m:g}, P_s={p_static:g})")
        return PowerModel(m=m, p_static=p_static)


class SuperlinearPowerRegressor(RegressorMixin, BaseEstimator):
    """Exponential excess ``a * exp(b * f)`` above a known linear power model.

    Only points at or above ``f_knee`` are used. The excess over the linear
    part is fitted as a straight line in log space.
    """

    def __init__(self, m=0.0, p_static=0.0, f_knee=0.0):
        self.m = m
        self.p_static = p_static
        self.f_knee = f_knee

    def fit(self, X, y):
        f, p = _check_xy(X, y, 0)
        keep = f >= self.f_knee
        f, p = f[keep], p[keep]
        if len(f) < 2:
            raise InsufficientPointsError(
                f"need at least 2 points at or above {self.f_knee} MHz, got {len(f)}"
            )
        excess = p - (self.m * f + self.p_static)
        bad = np.flatnonzero(excess <= 0)
        if bad.size:
            raise DomainError(
                f"power at {f[bad[0]]:g} MHz does not exceed the linear model; "
                "cannot take the log of the residual"
            )
        b, ln_a = _ols(f, np.log(excess))
        if b <= 0:
            raise FitError(f"fitted exponent {b:g} is not positive; no superlinear growth")
        self.a_, self.b_ = math.exp(ln_a), b
        self.rms_residual_ = _rms(p - self.predict(f))
        self.n_points_ = len(f)
        return self

    def predict(self, X):
        check_is_fitted(self, "a_")
        model = self.to_model()
        f = _as_freqs(X)
        return np.array([predict_power(model, x) for x in f])

    def to_model(self):
        check_is_fitted(self, "a_")
        return PowerModel(self.m, self.p_static, Superlinear(self.a_, self.b_, self.f_knee))


def _knee_design(f, knee):
    return np.where(f <= knee, 1.0, f / knee)


class KneeRegressor(RegressorMixin, BaseEstimator):
    """Piecewise fit of time vs. frequency with a compute-to-memory knee.

    Works on ``y = f * t``: constant ``c`` up to the knee, then ``c * f / knee``.
    Every observed frequency is tried as the knee; the one with the smallest
    squared residual in ``y`` wins, and exact ties go to the lowest knee.
    ``predict`` returns times in seconds.
    """

    def fit(self, X, y):
        f, t = _check_xy(X, y, 4)
        order = np.argsort(f, kind="stable")
        f, t = f[order], t[order]
        if np.any(np.diff(f) == 0):
            raise FitError("duplicate frequencies in knee fit input")
        ft = f * t
        sse = np.empty(len(f))
        coef = np.empty(len(f))
        for i, knee in enumerate(f):
            g = _knee_design(f, knee)
            c = math.fsum(g * ft) / math.fsum(g * g)
            coef[i] = c
            sse[i] = math.fsum(np.square(ft - c * g))
        best = 0
        for i in range(1, len(f)):
            if sse[i] < sse[best]:
                best = i
        self.candidate_knees_ = f
        self.candidate_sse_ = sse
        self.knee_ = float(f[best])
        self.k_ = float(coef[best])
        self.alpha_ = 1.0 / self.knee_
        self.rms_residual_ = math.sqrt(sse[best] / len(f))
        self.n_points_ = len(f)
        return self

    def predict(self, X):
        check_is_fitted(self, "knee_")
        f = _as_freqs(X)
        return self.k_ * _knee_design(f, self.knee_) / f

    def predict_regime(self, X):
        check_is_fitted(self, "knee_")
        f = _as_freqs(X)
        return [Regime.COMPUTE_BOUND if x <= self.knee_ else Regime.MEMORY_BOUND for x in f]

    def to_model(self):
        check_is_fitted(self, "knee_")
        return PerfModel(k=self.k_, alpha=self.alpha_)


def _unzip(points):
    points = list(points)
    if not points:
        return np.empty(0), np.empty(0)
    f, v = zip(*points)
    return np.asarray(f, dtype=float), np.asarray(v, dtype=float)


def fit_power_linear(points) -> FitResult:
    """Least-squares ``P = m * f + P_s`` through ``(f, p)`` points."""
    est = LinearPowerRegressor().fit(*_unzip(points))
    return FitResult(est.to_model(), est.rms_residual_, est.n_points_)


def fit_power_superlinear(points, linear: PowerModel, f_knee: float) -> FitResult:
    """Attach an exponential term, fitted above ``f_knee``, to ``linear``."""
    est = SuperlinearPowerRegressor(m=linear.m, p_static=linear.p_static, f_knee=f_knee)
    est.fit(*_unzip(points))
    return FitResult(est.to_model(), est.rms_residual_, est.n_points_)


def fit_knee(points) -> FitResult:
    """Fit a :class:`PerfModel` to ``(f, t)`` points.

    ``rms_residual`` is reported in the fitted quantity ``f * t`` (s x MHz).
    """
    est = KneeRegressor().fit(*_unzip(points))
    return FitResult(est.to_model(), est.rms_residual_, est.n_points_)


def regime_profile(points):
    """Label each input frequency against the fitted knee."""
    f, t = _unzip(points)
    est = KneeRegressor().fit(f, t)
    fs = np.sort(f)
    return list(zip(fs.tolist(), est.predict_regime(fs)))
