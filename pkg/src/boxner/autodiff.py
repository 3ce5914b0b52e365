"""Minimal reverse-mode autodiff over numpy arrays.

A Tape records nodes in creation order (ops evaluate eagerly, so building the
graph *is* the forward pass).  backward() walks the tape in reverse and
accumulates gradients into every node, in particular into trainable leaves.

There is no implicit broadcasting: elementwise ops require identical shapes
and row vectors must be expanded explicitly with expand_rows.  Anything not in
the primitive set below has to be composed from it.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tape",
    "Node",
    "ShapeError",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "concat",
    "slice_cols",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "softmax",
    "gather_rows",
    "take",
    "expand_rows",
    "reduce_sum",
    "smooth_l1",
    "backward",
    "grad_check",
]


class ShapeError(ValueError):
    """Operand shapes do not match an op's contract."""


class Node:
    __slots__ = ("tape", "value", "grad_fns", "grad", "index", "trainable")

    def __init__(self, tape: "Tape", value: np.ndarray, grad_fns=(), trainable: bool = False):
        self.tape = tape
        self.value = value
        self.grad_fns = grad_fns  # sequence of (parent, fn(upstream) -> grad wrt parent)
        self.grad = None
        self.trainable = trainable
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Single-use record of one forward computation.

    dtype is float64 by default; tests may pass np.longdouble to get an
    extended-precision forward for finite-difference oracles.
    """

    def __init__(self, dtype=np.float64):
        self.nodes: list[Node] = []
        self.dtype = dtype

    def leaf(self, value, trainable: bool = True) -> Node:
        return Node(self, np.asarray(value, dtype=self.dtype), trainable=trainable)

    def const(self, value) -> Node:
        return Node(self, np.asarray(value, dtype=self.dtype))


def _check(cond: bool, op: str, node_index: int, msg: str) -> None:
    if not cond:
        raise ShapeError(f"{op} (op #{node_index}): {msg}")


def _same_shape(a: Node, b: Node, op: str) -> None:
    _check(a.value.shape == b.value.shape, op, len(a.tape.nodes),
           f"shapes {a.value.shape} and {b.value.shape} must match exactly")


def add(a: Node, b: Node) -> Node:
    _same_shape(a, b, "add")
    return Node(a.tape, a.value + b.value, ((a, lambda g: g), (b, lambda g: g)))


def sub(a: Node, b: Node) -> Node:
    _same_shape(a, b, "sub")
    return Node(a.tape, a.value - b.value, ((a, lambda g: g), (b, lambda g: -g)))


def mul(a: Node, b: Node) -> Node:
    _same_shape(a, b, "mul")
    av, bv = a.value, b.value
    return Node(a.tape, av * bv, ((a, lambda g: g * bv), (b, lambda g: g * av)))


def scale(a: Node, c: float) -> Node:
    return Node(a.tape, a.value * c, ((a, lambda g: g * c),))


def matmul(a: Node, b: Node) -> Node:
    _check(a.value.ndim == 2 and b.value.ndim == 2 and a.value.shape[1] == b.value.shape[0],
           "matmul", len(a.tape.nodes),
           f"incompatible shapes {a.value.shape} @ {b.value.shape}")
    av, bv = a.value, b.value
    return Node(a.tape, av @ bv, ((a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)))


def concat(parts: Sequence[Node], axis: int = 0) -> Node:
    values = [p.value for p in parts]
    out = np.concatenate(values, axis=axis)
    sizes = [v.shape[axis] for v in values]
    offsets = np.cumsum([0] + sizes)

    def make_fn(lo, hi):
        if axis == 0:
            return lambda g: g[lo:hi]
        return lambda g: g[:, lo:hi]

    grad_fns = tuple((p, make_fn(offsets[k], offsets[k + 1])) for k, p in enumerate(parts))
    return Node(parts[0].tape, out, grad_fns)


def slice_cols(a: Node, lo: int, hi: int) -> Node:
    _check(a.value.ndim == 2 and 0 <= lo < hi <= a.value.shape[1], "slice_cols",
           len(a.tape.nodes), f"bad column range [{lo}, {hi}) for shape {a.value.shape}")
    shape = a.value.shape
    dtype = a.value.dtype

    def back(g):
        out = np.zeros(shape, dtype=dtype)
        out[:, lo:hi] = g
        return out

    return Node(a.tape, a.value[:, lo:hi], ((a, back),))


def tanh(a: Node) -> Node:
    y = np.tanh(a.value)
    return Node(a.tape, y, ((a, lambda g: g * (1.0 - y * y)),))


def sigmoid(a: Node) -> Node:
    y = 1.0 / (1.0 + np.exp(-a.value))
    return Node(a.tape, y, ((a, lambda g: g * y * (1.0 - y)),))


def exp(a: Node) -> Node:
    y = np.exp(a.value)
    return Node(a.tape, y, ((a, lambda g: g * y),))


def log(a: Node, floor: float = 0.0) -> Node:
    """Natural log; with floor > 0 the argument is clamped below before log."""
    x = np.maximum(a.value, floor) if floor > 0.0 else a.value
    return Node(a.tape, np.log(x), ((a, lambda g: g / x),))


def softmax(a: Node) -> Node:
    """Row-wise softmax of a 2-D array."""
    _check(a.value.ndim == 2, "softmax", len(a.tape.nodes),
           f"expected 2-D input, got shape {a.value.shape}")
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return y * (g - (g * y).sum(axis=1, keepdims=True))

    return Node(a.tape, y, ((a, back),))


def gather_rows(a: Node, idx) -> Node:
    idx = np.asarray(idx, dtype=np.intp)
    shape = a.value.shape
    dtype = a.value.dtype

    def back(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, idx, g)
        return out

    return Node(a.tape, a.value[idx], ((a, back),))


def take(a: Node, rows, cols) -> Node:
    """Fancy-index a 2-D array at (rows[k], cols[k]); returns a vector."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    shape = a.value.shape
    dtype = a.value.dtype

    def back(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, (rows, cols), g)
        return out

    return Node(a.tape, a.value[rows, cols], ((a, back),))


def expand_rows(a: Node, n: int) -> Node:
    """Tile a 1-D vector into an (n, len) matrix (the explicit broadcast)."""
    _check(a.value.ndim == 1, "expand_rows", len(a.tape.nodes),
           f"expected 1-D input, got shape {a.value.shape}")
    return Node(a.tape, np.repeat(a.value[None, :], n, axis=0), ((a, lambda g: g.sum(axis=0)),))


def reduce_sum(a: Node) -> Node:
    shape = a.value.shape
    dtype = a.value.dtype
    return Node(a.tape, np.asarray(a.value.sum()),
                ((a, lambda g: np.full(shape, g, dtype=dtype)),))


def smooth_l1(a: Node) -> Node:
    """Elementwise robust L1: 0.5 x^2 inside |x| < 1, |x| - 0.5 outside (C1)."""
    x = a.value
    inside = np.abs(x) < 1.0
    y = np.where(inside, 0.5 * x * x, np.abs(x) - 0.5)
    return Node(a.tape, y, ((a, lambda g: g * np.clip(x, -1.0, 1.0)),))


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(node) into .grad for every node reaching loss."""
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
    loss.grad = np.ones_like(loss.value)
    for node in reversed(loss.tape.nodes[: loss.index + 1]):
        g = node.grad
        if g is None:
            continue
        for parent, fn in node.grad_fns:
            pg = fn(g)
            if parent.grad is None:
                parent.grad = pg
            else:
                parent.grad = parent.grad + pg


def grad_check(fn: Callable, params: dict[str, np.ndarray], eps: float = 1e-5) -> float:
    """Max relative error of analytic gradients against central differences.

    fn(params, with_grad) must return (loss, grads-dict) when with_grad is
    True and (loss, None) otherwise; params arrays are perturbed in place and
    restored.  The relative error denominator is max(|analytic|, |numeric|,
    1e-8) per coordinate.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must be in [1e-7, 1e-3], got {eps}")
    _, grads = fn(params, True)
    worst = 0.0
    for name, arr in params.items():
        analytic = grads[name]
        flat = arr.reshape(-1)
        aflat = np.asarray(analytic).reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            fp, _ = fn(params, False)
            flat[k] = orig - eps
            fm, _ = fn(params, False)
            flat[k] = orig
            numeric = (fp - fm) / (2.0 * eps)
            err = abs(aflat[k] - numeric) / max(abs(aflat[k]), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
