"""Small numpy tensor/autograd engine for the matching and policy networks."""

from .gradcheck import GradCheckResult, check_gradients
from .layers import LayerSpec, Network, conv, fc, pool, trace_shapes
from .ops import concat, conv2d, dense, dropout, flatten, maxpool2x2, relu, reshape, sigmoid
from .optim import Adagrad, Adam, NonFiniteGradientError, OptimizerState
from .serialization import (
    BadMagicError,
    ManifestMismatchError,
    TruncatedWeightsError,
    UnsupportedVersionError,
    WeightsFileError,
    load_weights,
    save_weights,
)
from .tensor import GraphError, ShapeError, Tensor, backward

__all__ = [
    "Adagrad",
    "Adam",
    "BadMagicError",
    "GradCheckResult",
    "GraphError",
    "LayerSpec",
    "ManifestMismatchError",
    "Network",
    "NonFiniteGradientError",
    "OptimizerState",
    "ShapeError",
    "Tensor",
    "TruncatedWeightsError",
    "UnsupportedVersionError",
    "WeightsFileError",
    "backward",
    "check_gradients",
    "concat",
    "conv",
    "conv2d",
    "dense",
    "dropout",
    "fc",
    "flatten",
    "load_weights",
    "maxpool2x2",
    "pool",
    "relu",
    "reshape",
    "save_weights",
    "sigmoid",
    "trace_shapes",
]
