"""Orthogonal feature maps with gated group biases for imbalanced classification."""

__version__ = "0.1.0"

from ogab.autodiff import (
    GraphError,
    ShapeError,
    SingularMatrixError,
    Tape,
    Tensor,
)

__all__ = [
    "GraphError",
    "ShapeError",
    "SingularMatrixError",
    "Tape",
    "Tensor",
    "__version__",
]
