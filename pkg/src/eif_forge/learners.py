"""Kernel smoothers used as nuisance estimators.

All learners work in standardized covariate units with a Gaussian product
kernel.  Kernel weights are computed in log space and shifted by their row
maximum, so a query far from every training point degrades gracefully to
its nearest neighbour instead of producing ``0/0``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "ConfigurationError", "LearnerConfig", "RegressionModel", "DensityModel",
    "reference_bandwidth", "select_bandwidth", "fit_regression", "predict",
    "fit_density_model", "density_at", "fit_propensity",
]

_LOG_ROOT_2PI = 0.5 * np.log(2.0 * np.pi)


class ConfigurationError(ValueError):
    """A learner cannot be fitted on the given data (empty, degenerate column)."""


@dataclass(frozen=True)
class LearnerConfig:
    """Bandwidth grid (multipliers of the reference rule), CV folds, propensity clip.

    ``min_fold_size`` is the smallest training set on which bandwidth
    cross-validation is attempted; below it the reference bandwidth is used.
    Cross-validation runs on at most ``cv_max`` evenly spaced training
    points; the multipliers it picks are then applied to the reference
    bandwidth of the full training set.
    """

    grid: tuple = (0.25, 0.5, 1.0, 2.0, 4.0)
    cv_folds: int = 5
    clip: float = 0.01
    min_fold_size: int = 10
    cv_max: int = 1000
    chunk: int = 2048

    def __post_init__(self):
        if not self.grid:
            raise ConfigurationError("bandwidth grid must be nonempty")
        if any(g <= 0 for g in self.grid):
            raise ConfigurationError("bandwidth multipliers must be positive")
        if not 0.0 < self.clip < 0.5:
            raise ConfigurationError("propensity clip must lie in (0, 0.5)")
        if self.cv_folds < 2:
            raise ConfigurationError("cv_folds must be at least 2")


def reference_bandwidth(n: int) -> float:
    """Silverman's rule ``1.06 n^(-1/5)`` in standard-deviation units."""
    return 1.06 * max(n, 1) ** (-0.2)


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def _standardize(X, columns, allow_constant=False):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    for j, s in enumerate(scale):
        if not s > 0:
            if allow_constant:
                scale[j] = 1.0
            else:
                name = columns[j] if columns else f"#{j}"
                raise ConfigurationError(f"covariate column {name} is constant; kernel bandwidth is degenerate")
    return mean, scale


def _sqdist(A, B):
    out = np.zeros((A.shape[0], B.shape[0]))
    for j in range(A.shape[1]):
        diff = A[:, j, None] - B[None, :, j]
        out += diff * diff
    return out


def _nw_from_sqdist(D, y, h):
    logw = -0.5 * D / (h * h)
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    return (w @ y) / w.sum(axis=1)


def _cv_folds(n, k):
    idx = np.arange(n)
    return [(idx[idx % k != f], idx[idx % k == f]) for f in range(min(k, n))]


def _argmin_prefer_large(scores) -> int:
    best = len(scores) - 1
    for g in range(len(scores) - 2, -1, -1):
        if scores[g] < scores[best]:
            best = g
    return best


def select_bandwidth(X, y, grid: Sequence[float], folds: int = 5, sweeps: int = 2) -> np.ndarray:
    """Pick bandwidths (standardized units) from ``grid`` by K-fold CV.

    With ``y`` the criterion is held-out squared error of Nadaraya-Watson
    regression and each column gets its own grid value, found by coordinate
    descent (``sweeps`` passes over the columns, starting from the grid
    median).  With ``y=None`` the criterion is held-out KDE log-likelihood
    and one grid value is shared by all columns.  Folds are interleaved
    (record ``i`` goes to fold ``i mod K``); exact ties go to the larger
    bandwidth.  Returns one bandwidth per column.
    """
    X = _as_matrix(X)
    d = X.shape[1]
    grid = sorted(float(g) for g in grid)
    if len(grid) == 1:
        return np.full(d, grid[0])
    splits = [(tr, te) for tr, te in _cv_folds(X.shape[0], folds) if len(tr) and len(te)]
    if y is None:
        scores = np.zeros(len(grid))
        for train, test in splits:
            D = _sqdist(X[test], X[train])
            for g, h in enumerate(grid):
                ll = logsumexp(-0.5 * D / (h * h), axis=1) - np.log(len(train)) - d * (np.log(h) + _LOG_ROOT_2PI)
                scores[g] -= ll.sum()
        return np.full(d, grid[_argmin_prefer_large(scores)])

    per_dim = [[(X[te, j, None] - X[None, tr, j]) ** 2 for j in range(d)] for tr, te in splits]

    memo: dict = {}

    def cv_error(h):
        key = tuple(h)
        if key in memo:
            return memo[key]
        total = 0.0
        for (train, test), S in zip(splits, per_dim):
            D = sum(S[j] / (h[j] * h[j]) for j in range(d))
            total += np.sum((y[test] - _nw_from_sqdist(D, y[train], 1.0)) ** 2)
        memo[key] = total
        return total

    choice = [len(grid) // 2] * d
    for _ in range(sweeps if d > 1 else 1):
        changed = False
        for j in range(d):
            scores = []
            for g in range(len(grid)):
                trial = list(choice)
                trial[j] = g
                scores.append(cv_error([grid[c] for c in trial]))
            best = _argmin_prefer_large(scores)
            changed |= best != choice[j]
            choice[j] = best
        if not changed:
            break
    return np.array([grid[c] for c in choice])


def _cv_subset(n, cap):
    if n <= cap:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, cap).round().astype(int))


@dataclass(frozen=True, eq=False)
class RegressionModel:
    """Nadaraya-Watson fit; ``constant`` is set for covariate-free or one-point fits."""

    columns: tuple
    mean: np.ndarray
    scale: np.ndarray
    X: np.ndarray  # standardized training covariates
    y: np.ndarray
    bandwidth: np.ndarray  # per column, standardized units
    constant: float | None = None
    lower: float = -np.inf
    upper: float = np.inf
    chunk: int = 2048

    def predict(self, X) -> np.ndarray:
        if self.constant is not None:
            n = np.shape(X)[0] if X is not None and np.ndim(X) else 1
            return np.full(n, self.constant)
        Q = (_as_matrix(X) - self.mean) / self.scale / self.bandwidth
        T = self.X / self.bandwidth
        out = np.empty(Q.shape[0])
        for start in range(0, Q.shape[0], self.chunk):
            D = _sqdist(Q[start:start + self.chunk], T)
            out[start:start + self.chunk] = _nw_from_sqdist(D, self.y, 1.0)
        return np.clip(out, self.lower, self.upper)


def fit_regression(X, y, cfg: LearnerConfig | None = None, columns: Sequence[str] = (),
                   bandwidth=None) -> RegressionModel:
    """Nadaraya-Watson regression of ``y`` on ``X`` with a CV-selected bandwidth.

    ``X`` may have zero columns (or be ``None``), giving the constant model
    ``mean(y)``; a single training point gives the constant model ``y[0]``.
    """
    cfg = cfg or LearnerConfig()
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if n == 0:
        raise ConfigurationError("cannot fit a regression on empty data")
    columns = tuple(columns)
    if X is None or _as_matrix(X).shape[1] == 0 or n == 1:
        d = 0 if X is None else _as_matrix(X).shape[1]
        return RegressionModel(columns, np.zeros(d), np.ones(d), np.zeros((n, d)), y, np.ones(d),
                               constant=float(y.mean()), chunk=cfg.chunk)
    X = _as_matrix(X)
    if X.shape[0] != n:
        raise ConfigurationError("covariates and responses differ in length")
    mean, scale = _standardize(X, columns)
    Z = (X - mean) / scale
    if bandwidth is not None:
        bw = np.broadcast_to(np.asarray(bandwidth, dtype=float), (X.shape[1],)).copy()
    elif n < max(cfg.min_fold_size, cfg.cv_folds):
        bw = np.full(X.shape[1], reference_bandwidth(n))
    else:
        sub = _cv_subset(n, cfg.cv_max)
        ref_sub = reference_bandwidth(len(sub))
        mult = select_bandwidth(Z[sub], y[sub], [g * ref_sub for g in cfg.grid], cfg.cv_folds) / ref_sub
        bw = mult * reference_bandwidth(n)
    return RegressionModel(columns, mean, scale, Z, y, bw, chunk=cfg.chunk)


def predict(m: RegressionModel, x) -> float | np.ndarray:
    """Predict at a record (mapping) or a covariate matrix."""
    if isinstance(x, dict):
        missing = [c for c in m.columns if c not in x]
        if missing:
            raise KeyError(f"record lacks columns {missing}")
        return float(m.predict(np.array([[x[c] for c in m.columns]]).reshape(1, -1))[0])
    return m.predict(x)


@dataclass(frozen=True, eq=False)
class DensityModel:
    columns: tuple
    points: np.ndarray
    bandwidths: np.ndarray  # original units
    chunk: int = 2048

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def log_density(self, X) -> np.ndarray:
        Q = _as_matrix(X) / self.bandwidths
        T = self.points / self.bandwidths
        norm = np.log(self.points.shape[0]) + np.sum(np.log(self.bandwidths)) + self.dim * _LOG_ROOT_2PI
        out = np.empty(Q.shape[0])
        for start in range(0, Q.shape[0], self.chunk):
            D = _sqdist(Q[start:start + self.chunk], T)
            out[start:start + self.chunk] = logsumexp(-0.5 * D, axis=1) - norm
        return out

    def __call__(self, X) -> np.ndarray:
        return np.exp(self.log_density(X))


def fit_density_model(X, cfg: LearnerConfig | None = None, columns: Sequence[str] = (),
                      bandwidth=None, select: bool = True) -> DensityModel:
    """Product-Gaussian KDE with ``h_d = m * 1.06 sd_d n^(-1/5)``.

    The multiplier ``m`` is chosen from ``cfg.grid`` by cross-validated
    log-likelihood unless ``select`` is False (then ``m = 1``).  An explicit
    ``bandwidth`` (original units) bypasses both.
    """
    cfg = cfg or LearnerConfig()
    X = _as_matrix(X)
    n, d = X.shape
    if n == 0:
        raise ConfigurationError("cannot fit a density on empty data")
    columns = tuple(columns)
    if bandwidth is not None:
        bw = np.broadcast_to(np.asarray(bandwidth, dtype=float), (d,)).copy()
        if np.any(bw <= 0):
            raise ConfigurationError("bandwidth must be positive")
        return DensityModel(columns, X, bw, cfg.chunk)
    if n == 1:
        raise ConfigurationError("a single point needs an explicit bandwidth")
    _, scale = _standardize(X, columns)
    ref = reference_bandwidth(n)
    if select and n >= max(cfg.min_fold_size, cfg.cv_folds):
        sub = _cv_subset(n, cfg.cv_max)
        ref_sub = reference_bandwidth(len(sub))
        mult = select_bandwidth(X[sub] / scale, None, [g * ref_sub for g in cfg.grid], cfg.cv_folds) / ref_sub * ref
    else:
        mult = np.full(d, ref)
    return DensityModel(columns, X, mult * scale, cfg.chunk)


def density_at(m: DensityModel, x) -> float | np.ndarray:
    if isinstance(x, dict):
        return float(m(np.array([[x[c] for c in m.columns]]))[0])
    return m(x)


def fit_propensity(X, a, cfg: LearnerConfig | None = None, columns: Sequence[str] = ()) -> RegressionModel:
    """Regression of a binary ``a`` on ``X`` with predictions clipped to ``[eps, 1-eps]``."""
    cfg = cfg or LearnerConfig()
    a = np.asarray(a, dtype=float)
    if not np.all((a == 0) | (a == 1)):
        raise ConfigurationError("propensity responses must be 0/1")
    eps = cfg.clip
    if a.size and np.all(a == a[0]):
        warnings.warn("all treatment values are equal; using a constant clipped propensity", RuntimeWarning)
        d = 0 if X is None else _as_matrix(X).shape[1]
        value = float(np.clip(a[0], eps, 1 - eps))
        return RegressionModel(tuple(columns), np.zeros(d), np.ones(d), np.zeros((a.size, d)), a,
                               np.ones(d), constant=value, lower=eps, upper=1 - eps)
    m = fit_regression(X, a, cfg, columns)
    if m.constant is not None:
        return RegressionModel(m.columns, m.mean, m.scale, m.X, m.y, m.bandwidth,
                               constant=float(np.clip(m.constant, eps, 1 - eps)), lower=eps, upper=1 - eps)
    return RegressionModel(m.columns, m.mean, m.scale, m.X, m.y, m.bandwidth,
                           lower=eps, upper=1 - eps, chunk=m.chunk)
