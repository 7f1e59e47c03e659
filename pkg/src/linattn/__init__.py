"""Standard and low-rank projected self-attention with verification tooling."""

__version__ = "0.1.0"

from .attention import (
    AttnConfig,
    HeadOutput,
    LayerWeights,
    attention_backward,
    encoder,
    init_weights,
    linear_head,
    multihead,
    standard_head,
)
from .errors import ConfigError, FormatError, LinAttnError, NumericalError, ShapeError, StateError
from .numkit import FlopCounter, fro_norm, gaussian_matrix, matmul, softmax_rows, svd
from .projections import ProjectionSet, make_projections, structured_projection

__all__ = [
    "AttnConfig",
    "ConfigError",
    "FlopCounter",
    "FormatError",
    "HeadOutput",
    "LayerWeights",
    "LinAttnError",
    "NumericalError",
    "ProjectionSet",
    "ShapeError",
    "StateError",
    "attention_backward",
    "encoder",
    "fro_norm",
    "gaussian_matrix",
    "init_weights",
    "linear_head",
    "make_projections",
    "matmul",
    "multihead",
    "softmax_rows",
    "standard_head",
    "structured_projection",
    "svd",
]
