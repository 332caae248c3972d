"""Least squares and coordinate-descent lasso."""

from __future__ import annotations

import numpy as np

from ..errors import ConvergenceError, SingularFitError
from .base import Dataset, Regressor


class LinearModel(Regressor):
    def __init__(self, kind, feature_names, intercept, coef, alpha=None):
        self.kind = kind
        self.feature_names = tuple(feature_names)
        self.intercept = float(intercept)
        self.coef = np.asarray(coef, dtype=float)
        self.alpha = alpha

    def predict(self, X):
        X = self._check_X(X)
        return X @ self.coef + self.intercept

    def __repr__(self):
        return f"LinearModel(kind={self.kind!r}, intercept={self.intercept!r}, coef={self.coef.tolist()!r})"


def fit_ols(d: Dataset) -> LinearModel:
    """Ordinary least squares with an unpenalised intercept.

    Raises :class:`SingularFitError` when ``[1, X]`` is rank deficient.
    """
    X, y = d.X, d.y
    design = np.column_stack([np.ones(d.n_samples), X])
    if d.n_samples < design.shape[1] or np.linalg.matrix_rank(design) < design.shape[1]:
        raise SingularFitError(f"design matrix is rank deficient ({d.n_features} features, {d.n_samples} rows)")
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    coef, *_ = np.linalg.lstsq(X - x_mean, y - y_mean, rcond=None)
    intercept = y_mean - float(x_mean @ coef)
    return LinearModel("ols", d.feature_names, intercept, coef)


def _soft_threshold(v, t):
    if v > t:
        return v - t
    if v < -t:
        return v + t
    return 0.0


def duality_gap(Z, yc, b, alpha) -> float:
    """Lasso duality gap of ``b``, relative to ``||yc||²``.

    Uses the usual rescaled-residual dual point; zero exactly at the optimum.
    """
    n = Z.shape[0]
    r = yc - Z @ b
    na = n * alpha
    dual_norm = float(np.max(np.abs(Z.T @ r))) if Z.shape[1] else 0.0
    const = na / dual_norm if dual_norm > na else 1.0
    rr = float(r @ r)
    gap = 0.5 * rr * (1.0 + const * const) - const * float(r @ yc) + na * float(np.abs(b).sum())
    yy = float(yc @ yc)
    return gap / yy if yy > 0 else 0.0


def _lasso_cd(Z, yc, alpha, tol, max_sweeps, b0=None, gap_every: int = 10):
    """Cyclic coordinate descent.

    Stops when no coefficient moves by ``tol`` in a sweep, or when the
    relative duality gap (checked every ``gap_every`` sweeps) falls below
    ``tol``. The gap test matters for nearly collinear columns, where
    coefficients can creep along a flat valley long after the objective has
    settled.
    """
    n, p = Z.shape
    b = np.zeros(p) if b0 is None else b0.copy()
    r = yc - Z @ b
    col_sq = (Z * Z).sum(axis=0) / n
    for sweep in range(1, max_sweeps + 1):
        max_delta = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            old = b[j]
            rho = Z[:, j] @ r / n + col_sq[j] * old
            new = _soft_threshold(rho, alpha) / col_sq[j]
            if new != old:
                r -= Z[:, j] * (new - old)
                b[j] = new
                max_delta = max(max_delta, abs(new - old))
        if max_delta < tol:
            return b, sweep
        if sweep % gap_every == 0 and duality_gap(Z, yc, b, alpha) < tol:
            return b, sweep
    raise ConvergenceError(f"lasso did not converge in {max_sweeps} sweeps", max_sweeps)


def fit_lasso(d: Dataset, alpha: float, tol: float = 1e-6, max_sweeps: int = 10_000) -> LinearModel:
    """Lasso on internally standardised features.

    Minimises ``(1/2n)·||y - Xb - c||² + alpha·||b||₁`` in standardised space;
    coefficients are returned on the original feature scale.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    X, y = d.X, d.y
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    Z = np.where(sd > 0, (X - mu) / np.where(sd > 0, sd, 1.0), 0.0)
    y_mean = y.mean()
    b, _ = _lasso_cd(Z, y - y_mean, alpha, tol, max_sweeps)
    coef = np.where(sd > 0, b / np.where(sd > 0, sd, 1.0), 0.0)
    intercept = y_mean - float(mu @ coef)
    return LinearModel("lasso", d.feature_names, intercept, coef, alpha=alpha)


def alpha_grid(d: Dataset, n_alphas: int = 20, ratio: float = 1e-3):
    """Descending log-spaced grid from the smallest all-zero penalty."""
    X, y = d.X, d.y
    sd = X.std(axis=0)
    Z = np.where(sd > 0, (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0), 0.0)
    alpha_max = float(np.max(np.abs(Z.T @ (y - y.mean()))) / d.n_samples)
    if alpha_max == 0.0:
        return np.zeros(1)
    return np.geomspace(alpha_max, alpha_max * ratio, n_alphas)


def _standardize(X):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    safe = np.where(sd > 0, sd, 1.0)
    return np.where(sd > 0, (X - mu) / safe, 0.0), mu, sd


def fit_lasso_cv(d: Dataset, n_folds: int = 5, n_alphas: int = 20, seed: int = 0,
                 tol: float = 1e-6, max_sweeps: int = 10_000) -> LinearModel:
    """Pick alpha by k-fold CV mean squared error, then refit on everything.

    Each fold walks the alpha path from the largest penalty down with warm
    starts. Ties go to the larger penalty.
    """
    alphas = alpha_grid(d, n_alphas)
    rng = np.random.default_rng(seed)
    folds = rng.permutation(d.n_samples) % n_folds
    scores = np.zeros(alphas.size)
    for k in range(n_folds):
        train, test = folds != k, folds == k
        if not test.any() or train.sum() < 2:
            continue
        Xtr, ytr = d.X[train], d.y[train]
        Z, mu, sd = _standardize(Xtr)
        y_mean = ytr.mean()
        b = None
        for i, a in enumerate(alphas):
            b, _ = _lasso_cd(Z, ytr - y_mean, float(a), tol, max_sweeps, b)
            coef = np.where(sd > 0, b / np.where(sd > 0, sd, 1.0), 0.0)
            pred = d.X[test] @ coef + (y_mean - float(mu @ coef))
            scores[i] += float(np.sum((pred - d.y[test]) ** 2))
    best = int(np.argmin(scores))
    return fit_lasso(d, float(alphas[best]), tol, max_sweeps)
