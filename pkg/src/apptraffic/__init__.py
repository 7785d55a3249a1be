"""Zone-level socio-economic indicators from per-antenna mobile app traffic.

Stages: ingest raw traffic, tessellate stations into Voronoi cells, move
traffic onto census zones by areal weights, build week-signature, RCA and
cumulative features, then train and explain boosted-tree regressors.
"""

from importlib.metadata import PackageNotFoundError, version

from .config import PipelineConfig
from .errors import (AppTrafficError, ConfigError, FormatError, GeometryError, IngestError,
                     InterpolationError, StageError)
from .features import RCATransformer, SCUTransformer, WeekSignatureTransformer, compute_features
from .geometry import areal_weights, build_tessellation
from .interpolate import interpolate_traffic
from .model import GradientBoostedTreesRegressor, LinearRegressor, RidgeRegressor, evaluate, tree_shapley
from .synthgen import ScenarioSpec, generate, oracle_check

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

__all__ = [
    "PipelineConfig", "AppTrafficError", "ConfigError", "FormatError", "GeometryError",
    "IngestError", "InterpolationError", "StageError", "RCATransformer", "SCUTransformer",
    "WeekSignatureTransformer", "compute_features", "areal_weights", "build_tessellation",
    "interpolate_traffic", "GradientBoostedTreesRegressor", "LinearRegressor", "RidgeRegressor",
    "evaluate", "tree_shapley", "ScenarioSpec", "generate", "oracle_check", "__version__",
]
