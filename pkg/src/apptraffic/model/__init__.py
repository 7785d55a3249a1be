from .boosting import GradientBoostedTreesRegressor
from .evaluation import EvaluationReport, evaluate, kfold, r_squared, split
from .linear import LinearRegressor, RidgeRegressor
from .shapley import expected_value, summarize_attributions, tree_shapley

MODEL_KINDS = ("gbdt", "ridge", "linear")


def make_estimator(kind, params=None, seed=None):
    """Estimator for a model kind; ``params`` are passed to the constructor."""
    from ..errors import ConfigError

    params = dict(params or {})
    if kind == "gbdt":
        params.setdefault("random_state", seed)
        return GradientBoostedTreesRegressor(**params)
    if kind == "ridge":
        return RidgeRegressor(**params)
    if kind == "linear":
        return LinearRegressor()
    raise ConfigError(f"unknown model kind {kind!r}", "model.kind")


__all__ = [
    "GradientBoostedTreesRegressor", "RidgeRegressor", "LinearRegressor", "EvaluationReport",
    "evaluate", "kfold", "r_squared", "split", "tree_shapley", "expected_value",
    "summarize_attributions", "make_estimator", "MODEL_KINDS",
]
