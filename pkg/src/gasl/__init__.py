"""Group-sparse neural network training with variance attention and random-vector injection."""

from .errors import (DataError, FormatError, GaslError, InsufficientDataError, LengthError,
                     NumericalError, ParameterError, QueryError, ShapeError)
from .estimator import GaslClassifier
from .nn import Network, build, build_lenet, build_mlp
from .optim import EpochRecord, TrainConfig, train
from .pruning import PruneConfig, SparsityReport, estimate_speedup, prune_groups
from .regularizers import ObjectiveBreakdown, ObjectiveConfig, composite_objective
from .supervisor import GaslConfig, GaslOutcome, apply_gasl, gasl_transform, verify_variance_decomposition

__version__ = "0.1.0"

__all__ = [
    "DataError", "EpochRecord", "FormatError", "GaslClassifier", "GaslConfig", "GaslError",
    "GaslOutcome", "InsufficientDataError", "LengthError", "Network", "NumericalError",
    "ObjectiveBreakdown", "ObjectiveConfig", "ParameterError", "PruneConfig", "QueryError",
    "ShapeError", "SparsityReport", "TrainConfig", "apply_gasl", "build", "build_lenet",
    "build_mlp", "composite_objective", "estimate_speedup", "gasl_transform", "prune_groups",
    "train", "verify_variance_decomposition",
]
