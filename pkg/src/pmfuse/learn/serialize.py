"""Versioned plain-text model format.

::

    pmfuse-model 1
    kind gbt
    features mean_mobile,min_mobile,...
    param learning_rate 0.1
    coef <feature> <value>            (linear kinds)
    tree_id,node_id,feature,threshold,left,right,leaf_value
    0,0,2,41.5,1,2,38.0
    ...

Floats are written with ``repr`` so a round trip is bit-exact. Leaves carry
``feature=-1`` and ``left=right=-1``. The per-node split gain and sample count
are appended as two extra trailing columns so gain tables survive reloading.
"""

from __future__ import annotations

import ast

import numpy as np

from .base import Regressor
from .ensemble import GradientBoosting, RandomForest
from .linear import LinearModel
from .neighbors import AverageBaseline, KNNRegressor
from .tree import DecisionTree, Tree

MAGIC = "pmfuse-model"
VERSION = 1
TREE_HEADER = "tree_id,node_id,feature,threshold,left,right,leaf_value,gain,n_samples"


def _tree_lines(tree_id: int, t: Tree):
    for i in range(t.n_nodes):
        yield (f"{tree_id},{i},{int(t.feature[i])},{float(t.threshold[i])!r},{int(t.left[i])},"
               f"{int(t.right[i])},{float(t.value[i])!r},{float(t.gain[i])!r},{int(t.n_samples[i])}")


def dumps(model: Regressor) -> str:
    lines = [f"{MAGIC} {VERSION}", f"kind {model.kind}", "features " + ",".join(model.feature_names)]
    params = {}
    trees = []
    if isinstance(model, LinearModel):
        params["intercept"] = model.intercept
        if model.alpha is not None:
            params["alpha"] = model.alpha
    elif isinstance(model, GradientBoosting):
        params["base"] = model.base
        params["learning_rate"] = model.learning_rate
        params.update({f"hp.{k}": v for k, v in model.params.items()})
        trees = model.trees
    elif isinstance(model, RandomForest):
        params.update({f"hp.{k}": v for k, v in model.params.items()})
        trees = model.trees
    elif isinstance(model, DecisionTree):
        params["max_depth"] = model.max_depth
        params["min_leaf"] = model.min_leaf
        trees = [model.tree]
    elif isinstance(model, AverageBaseline):
        params["passthrough"] = model.passthrough
    elif isinstance(model, KNNRegressor):
        params["k"] = model.k
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    for k, v in params.items():
        lines.append(f"param {k} {v!r}")
    if isinstance(model, LinearModel):
        for name, c in zip(model.feature_names, model.coef):
            lines.append(f"coef {name} {float(c)!r}")
    if isinstance(model, KNNRegressor):
        lines.append("mu " + " ".join(repr(float(v)) for v in model.mu))
        lines.append("sd " + " ".join(repr(float(v)) for v in model.sd))
        for row, target in zip(model.X_train, model.y_train):
            lines.append("row " + " ".join(repr(float(v)) for v in row) + f" {float(target)!r}")
    if trees:
        lines.append(TREE_HEADER)
        for i, t in enumerate(trees):
            lines.extend(_tree_lines(i, t))
    return "\n".join(lines) + "\n"


def _parse_trees(rows):
    by_tree = {}
    for r in rows:
        parts = r.split(",")
        by_tree.setdefault(int(parts[0]), []).append(parts)
    trees = []
    for tid in sorted(by_tree):
        nodes = sorted(by_tree[tid], key=lambda p: int(p[1]))
        trees.append(Tree(
            np.array([int(p[2]) for p in nodes], dtype=np.int64),
            np.array([float(p[3]) for p in nodes]),
            np.array([int(p[4]) for p in nodes], dtype=np.int64),
            np.array([int(p[5]) for p in nodes], dtype=np.int64),
            np.array([float(p[6]) for p in nodes]),
            np.array([float(p[7]) if len(p) > 7 else 0.0 for p in nodes]),
            np.array([int(p[8]) if len(p) > 8 else 0 for p in nodes], dtype=np.int64),
        ))
    return trees


def loads(text: str) -> Regressor:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split()
    if head[0] != MAGIC or int(head[1]) != VERSION:
        raise ValueError(f"not a {MAGIC} v{VERSION} file")
    kind = None
    features = ()
    params, coef, knn_rows, tree_rows = {}, {}, [], []
    mu = sd = None
    in_trees = False
    for ln in lines[1:]:
        if in_trees:
            tree_rows.append(ln)
            continue
        key, _, rest = ln.partition(" ")
        if ln.startswith("tree_id,"):
            in_trees = True
        elif key == "kind":
            kind = rest.strip()
        elif key == "features":
            features = tuple(rest.strip().split(",")) if rest.strip() else ()
        elif key == "param":
            name, _, val = rest.partition(" ")
            params[name] = ast.literal_eval(val)
        elif key == "coef":
            name, _, val = rest.rpartition(" ")
            coef[name] = float(val)
        elif key == "mu":
            mu = np.array([float(v) for v in rest.split()])
        elif key == "sd":
            sd = np.array([float(v) for v in rest.split()])
        elif key == "row":
            knn_rows.append([float(v) for v in rest.split()])
        else:
            raise ValueError(f"unrecognised model line: {ln!r}")
    hp = {k[3:]: v for k, v in params.items() if k.startswith("hp.")}
    if kind in ("ols", "lasso"):
        return LinearModel(kind, features, params["intercept"], [coef[f] for f in features], params.get("alpha"))
    if kind == "gbt":
        return GradientBoosting(features, params["base"], params["learning_rate"], _parse_trees(tree_rows), hp)
    if kind == "forest":
        return RandomForest(features, _parse_trees(tree_rows), hp)
    if kind == "tree":
        return DecisionTree(features, _parse_trees(tree_rows)[0], params.get("max_depth"), params.get("min_leaf", 1))
    if kind == "average":
        return AverageBaseline(features, params["passthrough"])
    if kind == "knn":
        data = np.array(knn_rows).reshape(len(knn_rows), len(features) + 1)
        return KNNRegressor(features, data[:, :-1], data[:, -1], params["k"], mu, sd)
    raise ValueError(f"unknown model kind {kind!r}")


def save(model: Regressor, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(model))


def load(path) -> Regressor:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
