from __future__ import annotations

import numpy as np

from .base import Dataset, Regressor, standardize_params

_CHUNK_ELEMENTS = 4_000_000


class KNNRegressor(Regressor):
    """Mean target of the k nearest training rows on standardised features.

    Equal distances resolve to the lower training row index.
    """

    kind = "knn"

    def __init__(self, feature_names, X_train, y_train, k, mu=None, sd=None):
        self.feature_names = tuple(feature_names)
        self.X_train = np.asarray(X_train, dtype=float)
        self.y_train = np.asarray(y_train, dtype=float)
        self.k = int(k)
        if mu is None:
            mu, sd = standardize_params(self.X_train)
        self.mu = np.asarray(mu, dtype=float)
        self.sd = np.asarray(sd, dtype=float)
        self._Z = (self.X_train - self.mu) / self.sd

    def predict(self, X):
        Q = (self._check_X(X) - self.mu) / self.sd
        n_train, p = self._Z.shape
        k = min(self.k, n_train)
        step = max(1, _CHUNK_ELEMENTS // max(1, n_train * p))
        out = np.empty(Q.shape[0])
        for start in range(0, Q.shape[0], step):
            q = Q[start:start + step]
            diff = q[:, None, :] - self._Z[None, :, :]
            dist = np.einsum("ijk,ijk->ij", diff, diff)
            nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
            out[start:start + step] = self.y_train[nearest].mean(axis=1)
        return out


def fit_knn(d: Dataset, k: int = 5) -> KNNRegressor:
    if k < 1:
        raise ValueError("k must be at least 1")
    return KNNRegressor(d.feature_names, d.X, d.y, k)


class AverageBaseline(Regressor):
    """Predicts one input column unchanged, typically the mean mobile reading."""

    kind = "average"

    def __init__(self, feature_names, passthrough: str):
        self.feature_names = tuple(feature_names)
        if passthrough not in self.feature_names:
            raise ValueError(f"unknown passthrough feature {passthrough!r}")
        self.passthrough = passthrough
        self._col = self.feature_names.index(passthrough)

    def predict(self, X):
        return self._check_X(X)[:, self._col].copy()


def fit_average(d: Dataset, passthrough_feature: str = "mean_mobile") -> AverageBaseline:
    return AverageBaseline(d.feature_names, passthrough_feature)
