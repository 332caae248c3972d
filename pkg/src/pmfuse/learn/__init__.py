"""From-scratch regressors used for calibration and for the mapping model."""

from .base import Dataset, Regressor
from .ensemble import GradientBoosting, RandomForest, fit_forest, fit_gbt
from .linear import LinearModel, fit_lasso, fit_lasso_cv, fit_ols
from .neighbors import AverageBaseline, KNNRegressor, fit_average, fit_knn
from .serialize import dumps, load, loads, save
from .tree import DecisionTree, Tree, build_tree, fit_tree


def gain_table(model: Regressor) -> dict:
    """Per-feature summed squared-error reduction over every split."""
    return model.gain_table()


__all__ = [
    "AverageBaseline",
    "Dataset",
    "DecisionTree",
    "GradientBoosting",
    "KNNRegressor",
    "LinearModel",
    "RandomForest",
    "Regressor",
    "Tree",
    "build_tree",
    "dumps",
    "fit_average",
    "fit_forest",
    "fit_gbt",
    "fit_knn",
    "fit_lasso",
    "fit_lasso_cv",
    "fit_ols",
    "fit_tree",
    "gain_table",
    "load",
    "loads",
    "save",
]
