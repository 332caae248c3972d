"""Greedy squared-error regression trees.

Trees are stored as flat node arrays in pre-order (left subtree first). A
sample goes left when ``x[feature] <= threshold``. Every internal node keeps
the squared-error reduction its split achieved, which is what the gain tables
add up.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import Dataset, Regressor


@dataclass
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    n_samples: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))

        return walk(0)

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row of ``X``."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def feature_gain(self, n_features: int) -> np.ndarray:
        out = np.zeros(n_features)
        internal = self.feature >= 0
        np.add.at(out, self.feature[internal], self.gain[internal])
        return out


def _split_threshold(lo: float, hi: float) -> float:
    t = lo + (hi - lo) / 2.0
    # rounding can land the midpoint on hi; keep lo on the left
    return lo if t >= hi else t


def best_split(X, y, idx, features, min_leaf):
    """Best ``(gain, feature, threshold)`` for the rows ``idx``, or None.

    Candidate thresholds are midpoints between consecutive distinct sorted
    values. Ties keep the earliest feature in ``features`` and the lowest
    threshold; gains within a hair of the node's total sum of squares count
    as tied, so rounding in the prefix sums cannot decide a tie.
    """
    n = idx.size
    if n < 2 * min_leaf:
        return None
    yc = y[idx] - y[idx].mean()
    eps = 1e-12 * float(yc @ yc)
    n_left = np.arange(1, n)
    n_right = n - n_left
    size_ok = (n_left >= min_leaf) & (n_right >= min_leaf)
    best = None
    for f in features:
        xs = X[idx, f]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        distinct = xs[:-1] < xs[1:]
        valid = distinct & size_ok
        if not valid.any():
            continue
        cs = np.cumsum(yc[order])
        total = cs[-1]
        s_left = cs[:-1]
        s_right = total - s_left
        gain = s_left * s_left / n_left + s_right * s_right / n_right - total * total / n
        gain = np.where(valid, gain, -np.inf)
        i = int(np.argmax(gain >= gain.max() - eps))
        g = float(gain[i])
        if g > eps and (best is None or g > best[0] + eps):
            best = (g, int(f), _split_threshold(float(xs[i]), float(xs[i + 1])))
    return best


def build_tree(X, y, max_depth=None, min_leaf=1, feature_sampler=None) -> Tree:
    """Grow a tree on ``(X, y)``.

    ``feature_sampler``, when given, is called once per node and returns the
    feature indices to consider there.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n_features = X.shape[1]
    all_features = np.arange(n_features)
    feature, threshold, left, right, value, gain, counts = [], [], [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        gain.append(0.0)
        counts.append(int(idx.size))
        return len(feature) - 1

    def grow(idx, depth):
        node = new_node(idx)
        if max_depth is not None and depth >= max_depth:
            return node
        yn = y[idx]
        if yn.max() == yn.min():
            return node
        feats = all_features if feature_sampler is None else np.sort(feature_sampler())
        split = best_split(X, y, idx, feats, min_leaf)
        if split is None:
            return node
        g, f, t = split
        mask = X[idx, f] <= t
        feature[node] = f
        threshold[node] = t
        gain[node] = g
        left[node] = grow(idx[mask], depth + 1)
        right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(np.arange(X.shape[0]), 0)
    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=float),
        np.array(gain, dtype=float),
        np.array(counts, dtype=np.int64),
    )


class DecisionTree(Regressor):
    kind = "tree"

    def __init__(self, feature_names, tree: Tree, max_depth=None, min_leaf=1):
        self.feature_names = tuple(feature_names)
        self.tree = tree
        self.max_depth = max_depth
        self.min_leaf = min_leaf

    @property
    def trees(self):
        return [self.tree]

    def predict(self, X):
        return self.tree.predict(self._check_X(X))

    def gain_table(self) -> dict:
        g = self.tree.feature_gain(len(self.feature_names))
        return dict(zip(self.feature_names, g.tolist()))


def fit_tree(d: Dataset, max_depth=None, min_leaf: int = 1) -> DecisionTree:
    return DecisionTree(d.feature_names, build_tree(d.X, d.y, max_depth, min_leaf), max_depth, min_leaf)
