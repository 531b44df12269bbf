"""Tape-based reverse-mode differentiation over a small, closed set of array ops.

Ops execute eagerly and append a node to the tape of their first input. The
tape is already in topological order, so ``backward`` walks it once in
reverse. Every op value is checked for NaN/Inf at creation time.

Example::

    g = Graph()
    W = g.param("W", np.array([[3.0]]))
    x = g.input("x", np.array([[2.0]]))
    y = affine(x, W)
    grads = g.backward(y)          # {"W": [[2.]]}
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """A NaN or Inf showed up in a forward value or a gradient."""


class GraphStateError(RuntimeError):
    pass


class Node:
    __slots__ = ("graph", "value", "parents", "vjp", "op", "name", "index", "requires_grad")

    def __init__(self, graph, value, parents=(), vjp=None, op="leaf", name=None, requires_grad=False):
        self.graph = graph
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.op = op
        self.name = name
        self.requires_grad = requires_grad
        self.index = -1

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape}, name={self.name!r})"


class Graph:
    """Recording tape.

    With ``record=False`` ops compute values only; nothing is kept for a
    backward pass, which keeps pure evaluation cheap.
    """

    def __init__(self, record: bool = True, check_finite: bool = True):
        self.record = record
        self.check_finite = check_finite
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}
        self.inputs: dict[str, Node] = {}
        self.output: Node | None = None

    # leaves -------------------------------------------------------------
    def param(self, name: str, value) -> Node:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        node = self._leaf(value, name, requires_grad=self.record)
        self.params[name] = node
        return node

    def input(self, name: str, value) -> Node:
        node = self._leaf(value, name, requires_grad=False)
        self.inputs[name] = node
        return node

    def const(self, value) -> Node:
        return self._leaf(value, None, requires_grad=False)

    def _leaf(self, value, name, requires_grad):
        value = np.asarray(value)
        if not np.issubdtype(value.dtype, np.floating):
            value = value.astype(np.float64)
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NonFiniteError(f"non-finite value in leaf {name!r}")
        node = Node(self, value, name=name, requires_grad=requires_grad)
        self._append(node)
        return node

    def _append(self, node):
        if self.record:
            node.index = len(self.nodes)
            self.nodes.append(node)

    def _op(self, op, value, parents, vjp):
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NonFiniteError(f"non-finite output from op {op!r}")
        requires_grad = self.record and any(p.requires_grad for p in parents)
        if not requires_grad:
            node = Node(self, value, op=op)
        else:
            node = Node(self, value, parents, vjp, op=op, requires_grad=True)
        self._append(node)
        self.output = node
        return node

    # reverse pass ---------------------------------------------------------
    def backward(self, output: Node | None = None, seed=None) -> dict[str, np.ndarray]:
        """Gradients of ``output`` w.r.t. every named parameter.

        ``seed`` is the upstream gradient (defaults to ones, i.e. d(sum)/d·).
        """
        if not self.record:
            raise GraphStateError("graph was built with record=False")
        output = self.output if output is None else output
        if output is None:
            raise GraphStateError("backward called before any forward op")
        if output.graph is not self:
            raise GraphStateError("output belongs to another graph")
        if seed is None:
            seed = np.ones_like(output.value)
        seed = np.asarray(seed, dtype=output.value.dtype)
        if seed.shape != output.value.shape:
            raise ValueError(f"seed shape {seed.shape} != output shape {output.value.shape}")

        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[output.index] = seed
        for node in reversed(self.nodes[: output.index + 1]):
            g = grads[node.index]
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if grads[parent.index] is None:
                    grads[parent.index] = pg
                else:
                    grads[parent.index] = grads[parent.index] + pg

        out = {}
        for name, node in self.params.items():
            g = grads[node.index]
            g = np.zeros_like(node.value) if g is None else np.asarray(g, dtype=node.value.dtype)
            if self.check_finite and not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
            out[name] = g.reshape(node.value.shape)
        return out


def backward(graph: Graph, seed_gradient=None) -> dict[str, np.ndarray]:
    """Reverse pass from the most recent op on ``graph``."""
    return graph.backward(None, seed_gradient)


def forward(build: Callable[..., Node], inputs: dict, params: dict | None = None, record: bool = True):
    """Bind named inputs/params on a fresh graph and run ``build`` on them.

    Returns ``(graph, output)``; ``graph.backward(output)`` then gives the
    parameter gradients.
    """
    g = Graph(record=record)
    bound = {k: g.input(k, v) for k, v in inputs.items()}
    for k, v in (params or {}).items():
        bound[k] = g.param(k, v)
    out = build(**bound)
    if not isinstance(out, Node):
        raise TypeError("build function must return a Node")
    g.output = out
    return g, out


# helpers --------------------------------------------------------------------

def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _graph_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.graph
    raise TypeError("at least one argument must be a Node")


def _as_node(graph, x):
    return x if isinstance(x, Node) else graph.const(np.asarray(x))


# ops ------------------------------------------------------------------------

def affine(x: Node, W: Node, b: Node | None = None) -> Node:
    """``x @ W + b`` with numpy batch broadcasting; W is laid out (in, out)."""
    g = _graph_of(x, W)
    x, W = _as_node(g, x), _as_node(g, W)
    if x.value.shape[-1] != W.value.shape[-2]:
        raise ValueError(f"affine shape mismatch: x {x.shape} vs W {W.shape}")
    y = np.matmul(x.value, W.value)
    if b is not None:
        b = _as_node(g, b)
        y = y + b.value
    xv, Wv = x.value, W.value
    xshape, Wshape = xv.shape, Wv.shape

    def vjp(gy):
        gx = gW = None
        if x.requires_grad:
            gx = _unbroadcast(np.matmul(gy, np.swapaxes(Wv, -1, -2)), xshape)
        if W.requires_grad:
            if xv.ndim == 1:
                gW = np.multiply.outer(xv, gy)
            else:
                gW = np.matmul(np.swapaxes(xv, -1, -2), gy)
            gW = _unbroadcast(gW, Wshape)
        if b is None:
            return gx, gW
        gb = _unbroadcast(gy, b.value.shape) if b.requires_grad else None
        return gx, gW, gb

    parents = (x, W) if b is None else (x, W, b)
    return g._op("affine", y, parents, vjp)


def sin(x: Node) -> Node:
    xv = x.value
    return x.graph._op("sin", np.sin(xv), (x,), lambda gy: (gy * np.cos(xv),))


def add(a, b) -> Node:
    g = _graph_of(a, b)
    a, b = _as_node(g, a), _as_node(g, b)
    sa, sb = a.value.shape, b.value.shape
    return g._op("add", a.value + b.value, (a, b), lambda gy: (_unbroadcast(gy, sa), _unbroadcast(gy, sb)))


def sub(a, b) -> Node:
    g = _graph_of(a, b)
    a, b = _as_node(g, a), _as_node(g, b)
    sa, sb = a.value.shape, b.value.shape
    return g._op("sub", a.value - b.value, (a, b), lambda gy: (_unbroadcast(gy, sa), -_unbroadcast(gy, sb)))


def scale(x: Node, alpha: float) -> Node:
    alpha = x.value.dtype.type(alpha)
    return x.graph._op("scale", x.value * alpha, (x,), lambda gy: (gy * alpha,))


def square(x: Node) -> Node:
    xv = x.value
    return x.graph._op("square", xv * xv, (x,), lambda gy: (2 * gy * xv,))


def sqrt(x: Node) -> Node:
    """Square root; the gradient at exactly zero is taken as zero."""
    y = np.sqrt(x.value)

    def vjp(gy):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(y > 0, 0.5 / np.where(y > 0, y, 1), 0)
        return (gy * d.astype(y.dtype),)

    return x.graph._op("sqrt", y, (x,), vjp)


def divide(a, b) -> Node:
    g = _graph_of(a, b)
    a, b = _as_node(g, a), _as_node(g, b)
    av, bv = a.value, b.value
    if np.any(bv == 0):
        raise ZeroDivisionError("divide by zero in graph op")
    y = av / bv

    def vjp(gy):
        ga = _unbroadcast(gy / bv, av.shape) if a.requires_grad else None
        gb = _unbroadcast(-gy * av / (bv * bv), bv.shape) if b.requires_grad else None
        return ga, gb

    return g._op("divide", y, (a, b), vjp)


def reduce_sum(x: Node, axis=None, keepdims=False) -> Node:
    xv = x.value
    y = np.sum(xv, axis=axis, keepdims=keepdims)

    def vjp(gy):
        if axis is not None and not keepdims:
            gy = np.expand_dims(gy, axis)
        return (np.broadcast_to(gy, xv.shape).copy(),)

    return x.graph._op("sum", np.asarray(y), (x,), vjp)


def reduce_mean(x: Node, axis=None, keepdims=False) -> Node:
    count = x.value.size if axis is None else np.prod([x.value.shape[a] for a in np.atleast_1d(axis)])
    return scale(reduce_sum(x, axis, keepdims), 1.0 / count)


def concat(xs: Sequence[Node], axis: int = -1) -> Node:
    g = _graph_of(*xs)
    xs = [_as_node(g, x) for x in xs]
    y = np.concatenate([x.value for x in xs], axis=axis)
    splits = np.cumsum([x.value.shape[axis] for x in xs])[:-1]
    return g._op("concat", y, tuple(xs), lambda gy: tuple(np.split(gy, splits, axis=axis)))


def getitem(x: Node, index) -> Node:
    """Basic or advanced indexing; gradient scatters back with add-at semantics."""
    xv = x.value
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)

    def vjp(gy):
        out = np.zeros_like(xv)
        if basic:
            out[index] = gy
        else:
            np.add.at(out, index, gy)
        return (out,)

    return x.graph._op("slice", np.asarray(xv[index]), (x,), vjp)


def reshape(x: Node, shape) -> Node:
    s = x.value.shape
    return x.graph._op("reshape", x.value.reshape(shape), (x,), lambda gy: (gy.reshape(s),))


def linear_map(x: Node, apply: Callable, adjoint: Callable, op: str = "linear_map") -> Node:
    """A fixed linear operator given by its action and its adjoint action."""
    return x.graph._op(op, np.asarray(apply(x.value)), (x,), lambda gy: (adjoint(gy),))
