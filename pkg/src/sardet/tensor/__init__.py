from . import functional
from .core import (
    GraphError,
    NonFiniteError,
    ShapeError,
    Tensor,
    as_tensor,
    backward,
    clamp,
    concat,
    finite_checks,
    graph_of,
    no_grad,
    where,
)
from .gradcheck import GradCheckReport, grad_check

__all__ = [
    "GradCheckReport",
    "GraphError",
    "NonFiniteError",
    "ShapeError",
    "Tensor",
    "as_tensor",
    "backward",
    "clamp",
    "concat",
    "finite_checks",
    "functional",
    "grad_check",
    "graph_of",
    "no_grad",
    "where",
]
