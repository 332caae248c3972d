"""Random forest and squared-error gradient boosting."""

from __future__ import annotations

import math

import numpy as np

from .base import Dataset, Regressor
from .tree import Tree, build_tree


def _n_subsample(choice, n_features: int) -> int:
    if choice is None:
        return n_features
    if choice == "sqrt":
        return max(1, math.isqrt(n_features))
    if isinstance(choice, float):
        return max(1, min(n_features, int(round(choice * n_features))))
    return max(1, min(n_features, int(choice)))


def tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    """Independent generator per tree so trees can be built in any order."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(tree_index)]))


class RandomForest(Regressor):
    kind = "forest"

    def __init__(self, feature_names, trees, params):
        self.feature_names = tuple(feature_names)
        self.trees = list(trees)
        self.params = dict(params)

    def predict(self, X):
        X = self._check_X(X)
        out = np.zeros(X.shape[0])
        for t in self.trees:
            out += t.predict(X)
        return out / len(self.trees)

    def gain_table(self) -> dict:
        g = np.zeros(len(self.feature_names))
        for t in self.trees:
            g += t.feature_gain(len(self.feature_names))
        return dict(zip(self.feature_names, g.tolist()))


def _forest_tree(d: Dataset, i, n_trees, max_depth, min_leaf, k, bootstrap, seed) -> Tree:
    rng = tree_rng(seed, i)
    n = d.n_samples
    rows = rng.integers(0, n, n) if bootstrap else np.arange(n)
    if k >= d.n_features:
        sampler = None
    else:
        def sampler():
            return rng.choice(d.n_features, size=k, replace=False)
    return build_tree(d.X[rows], d.y[rows], max_depth, min_leaf, sampler)


def fit_forest(
    d: Dataset,
    n_trees: int = 200,
    max_depth=8,
    feature_subsample="sqrt",
    seed: int = 0,
    min_leaf: int = 1,
    bootstrap: bool = True,
    executor=None,
) -> RandomForest:
    """Bagged trees with a random feature subset drawn at every split.

    ``feature_subsample`` is ``"sqrt"``, a fraction, a count, or None for all
    features. Each tree draws from its own seeded stream, so passing an
    ``executor`` changes nothing but wall time.
    """
    k = _n_subsample(feature_subsample, d.n_features)
    args = [(d, i, n_trees, max_depth, min_leaf, k, bootstrap, seed) for i in range(n_trees)]
    if executor is None:
        trees = [_forest_tree(*a) for a in args]
    else:
        trees = list(executor.map(lambda a: _forest_tree(*a), args))
    params = dict(n_trees=n_trees, max_depth=max_depth, feature_subsample=feature_subsample,
                  seed=seed, min_leaf=min_leaf, bootstrap=bootstrap)
    return RandomForest(d.feature_names, trees, params)


class GradientBoosting(Regressor):
    kind = "gbt"

    def __init__(self, feature_names, base, learning_rate, trees, params=None, stage_loss=None, stage_reduction=None):
        self.feature_names = tuple(feature_names)
        self.base = float(base)
        self.learning_rate = float(learning_rate)
        self.trees = list(trees)
        self.params = dict(params or {})
        # training SSE after each stage (index 0 = constant model)
        self.stage_loss = list(stage_loss or [])
        # SSE reduction each unshrunk tree achieved on the residuals it was fitted to
        self.stage_reduction = list(stage_reduction or [])

    def predict(self, X):
        X = self._check_X(X)
        out = np.full(X.shape[0], self.base)
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out

    def gain_table(self) -> dict:
        g = np.zeros(len(self.feature_names))
        for t in self.trees:
            g += t.feature_gain(len(self.feature_names))
        return dict(zip(self.feature_names, g.tolist()))


def fit_gbt(
    d: Dataset,
    n_trees: int = 300,
    depth: int = 4,
    learning_rate: float = 0.1,
    seed: int = 0,
    min_leaf: int = 1,
    subsample: float = 1.0,
) -> GradientBoosting:
    """Stagewise boosting of regression trees on squared-error residuals.

    The model starts from mean(y). ``seed`` only matters when ``subsample`` is
    below 1.
    """
    X, y = d.X, d.y
    base = float(y.mean())
    pred = np.full(d.n_samples, base)
    trees, losses, reductions = [], [], []
    resid = y - pred
    losses.append(float(resid @ resid))
    for i in range(n_trees):
        if subsample < 1.0:
            rng = tree_rng(seed, i)
            m = max(1, int(round(subsample * d.n_samples)))
            rows = np.sort(rng.choice(d.n_samples, size=m, replace=False))
        else:
            rows = slice(None)
        tree = build_tree(X[rows], resid[rows], depth, min_leaf)
        step = tree.predict(X)
        fitted = resid[rows] - step[rows]
        reductions.append(float(resid[rows] @ resid[rows] - fitted @ fitted))
        pred = pred + learning_rate * step
        resid = y - pred
        losses.append(float(resid @ resid))
        trees.append(tree)
    params = dict(n_trees=n_trees, depth=depth, learning_rate=learning_rate, seed=seed,
                  min_leaf=min_leaf, subsample=subsample)
    return GradientBoosting(d.feature_names, base, learning_rate, trees, params, losses, reductions)
