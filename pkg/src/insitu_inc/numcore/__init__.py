from .autodiff import (
    Graph,
    GraphStateError,
    Node,
    NonFiniteError,
    add,
    affine,
    backward,
    concat,
    divide,
    forward,
    getitem,
    linear_map,
    reduce_mean,
    reduce_sum,
    reshape,
    scale,
    sin,
    sqrt,
    square,
    sub,
)
from .fd import finite_diff_gradient
from .radam import RAdamState, radam_step, rho

__all__ = [
    "Graph", "GraphStateError", "Node", "NonFiniteError", "add", "affine", "backward", "concat",
    "divide", "forward", "getitem", "linear_map", "reduce_mean", "reduce_sum", "reshape", "scale",
    "sin", "sqrt", "square", "sub", "finite_diff_gradient", "RAdamState", "radam_step", "rho",
]
