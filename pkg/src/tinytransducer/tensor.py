"""Dense float32 tensors (float64 on request) with tape-based reverse-mode differentiation.

Every differentiable op appends a node to the active :class:`Graph`. Calling
``loss.backward()`` walks that tape in exact reverse order and then retires
it, so a second backward without a fresh forward raises.
"""
from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

DTYPE = np.float32
_current_dtype = DTYPE


def _dtype():
    return _current_dtype


@contextmanager
def precision(dtype):
    """Run ops in ``dtype`` (float64 for finite-difference checks); float32 otherwise."""
    global _current_dtype
    prev = _current_dtype
    _current_dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _current_dtype = prev


class GraphError(RuntimeError):
    pass


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_graph", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=_dtype())
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._graph: Graph | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        if self._graph is None:
            raise GraphError("tensor was not produced by a recorded operation")
        self._graph.backward(self, grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar used in tests and model code
    def __add__(self, other):
        return add(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)


class _Node:
    __slots__ = ("out", "parents", "backward_fn", "op")

    def __init__(self, out, parents, backward_fn, op):
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op


class Graph:
    """Ordered record of differentiable ops executed since the last backward."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False
        self.visit_log: list[str] | None = None

    def record(self, out: Tensor, parents: Sequence[Tensor], backward_fn: Callable, op: str):
        if self.consumed:
            raise GraphError("graph already ran backward; start a new forward")
        out._graph = self
        self.nodes.append(_Node(out, tuple(parents), backward_fn, op))

    def backward(self, loss: Tensor, grad: np.ndarray | None = None) -> None:
        if self.consumed:
            raise GraphError("backward called twice on the same graph")
        if grad is None:
            if loss.data.size != 1:
                raise GraphError("implicit gradient only defined for scalar outputs")
            grad = np.ones_like(loss.data)
        self.consumed = True
        loss.grad = np.asarray(grad, dtype=_dtype()).reshape(loss.shape)
        for node in reversed(self.nodes):
            if self.visit_log is not None:
                self.visit_log.append(node.op)
            g = node.out.grad
            if g is None:
                continue
            grads = node.backward_fn(g)
            for parent, pg in zip(node.parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(pg, dtype=_dtype(), copy=True).reshape(parent.shape)
                else:
                    parent.grad = parent.grad + pg
            # intermediates are never read again
            if node.out._graph is self and not _is_leaf(node.out):
                node.out.grad = None
        self.nodes = []
        global _active
        if _active is self:
            _active = Graph()

    def __enter__(self) -> "Graph":
        global _active
        self._prev = _active
        _active = self
        return self

    def __exit__(self, *exc) -> None:
        global _active
        _active = self._prev


def _is_leaf(t: Tensor) -> bool:
    return t._graph is None


_active = Graph()
_grad_enabled = True


def current_graph() -> Graph:
    return _active


def new_graph() -> Graph:
    """Drop whatever the default tape holds and start a fresh one."""
    global _active
    _active = Graph()
    return _active


@contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data if data.dtype == _dtype() else data.astype(_dtype())
    out.grad = None
    out.requires_grad = needs
    out._graph = None
    out.name = None
    if needs:
        _active.record(out, parents, backward_fn, op)
    return out


def _sum_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ----------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as e:
        raise ShapeError(f"add: cannot combine shapes {a.shape} and {b.shape}") from e

    def backward(g):
        return _sum_to_shape(g, a.shape), _sum_to_shape(g, b.shape)

    return _make(out, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as e:
        raise ShapeError(f"mul: cannot combine shapes {a.shape} and {b.shape}") from e

    def backward(g):
        return _sum_to_shape(g * b.data, a.shape), _sum_to_shape(g * a.data, b.shape)

    return _make(out, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = _dtype()(c)

    def backward(g):
        return (g * c,)

    return _make(a.data * c, (a,), backward, "scale")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return _make(a.data * mask, (a,), backward, "relu")


def dropout(a: Tensor, rate: float, train: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rate == 0`` or not training."""
    if not train or rate == 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rng is None:
        raise ValueError("dropout in training mode needs a seeded generator")
    keep = (rng.random(a.shape, dtype=DTYPE) >= rate).astype(DTYPE) * DTYPE(1.0 / (1.0 - rate))

    def backward(g):
        return (g * keep,)

    return _make(a.data * keep, (a,), backward, "dropout")


# ----------------------------------------------------------------------------
# shape plumbing


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: {a.shape} -> {tuple(shape)}") from e

    def backward(g):
        return (g.reshape(a.shape),)

    return _make(out, (a,), backward, "reshape")


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"permute: axes {axes} invalid for rank {a.ndim}")
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,), backward, "permute")


def transpose_last2(a: Tensor) -> Tensor:
    if a.ndim < 2:
        raise ShapeError("transpose_last2 needs rank >= 2")
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return permute(a, axes)


def concat_last(parts: Sequence[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    lead = parts[0].shape[:-1]
    for p in parts:
        if p.shape[:-1] != lead:
            raise ShapeError(f"concat_last: leading shapes differ {p.shape[:-1]} vs {lead}")
    sizes = [p.shape[-1] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=-1), parts, backward, "concat_last")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table`` at integer ``ids`` (any shape)."""
    ids = np.asarray(ids, dtype=np.int64)
    n_rows = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n_rows):
        raise IndexError(f"embedding_lookup: id out of range [0, {n_rows})")
    out = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        kernels.scatter_add_rows(gt, ids.reshape(-1), np.ascontiguousarray(g.reshape(-1, table.shape[1])))
        return (gt,)

    return _make(out, (table,), backward, "embedding_lookup")


# ----------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: inner dimensions differ ({a.shape[-1]} vs {b.shape[-2]}) for {a.shape} x {b.shape}"
        )
    la, lb = a.shape[:-2], b.shape[:-2]
    if la and lb:
        n = max(len(la), len(lb))
        pa = (1,) * (n - len(la)) + la
        pb = (1,) * (n - len(lb)) + lb
        for x, y in zip(pa, pb):
            if x != y and x != 1 and y != 1:
                raise ShapeError(f"matmul: batch dimensions {la} and {lb} do not broadcast")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _sum_to_shape(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _sum_to_shape(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(out, (a, b), backward, "matmul")


# ----------------------------------------------------------------------------
# normalization and losses


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), backward, "softmax")


def log_softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _dtype()(eps))
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        gg = g * gain.data
        gx = inv * (gg - gg.mean(axis=-1, keepdims=True) - xhat * (gg * xhat).mean(axis=-1, keepdims=True))
        flat_g = g.reshape(-1, d)
        ggain = (flat_g * xhat.reshape(-1, d)).sum(axis=0)
        gbias = flat_g.sum(axis=0)
        return gx, ggain, gbias

    return _make(out, (x, gain, bias), backward, "layer_norm")


def cross_entropy_ls(logits: Tensor, targets, epsilon: float, pad_id: int) -> Tensor:
    """Mean label-smoothed cross entropy over non-pad target positions.

    The smoothed target puts ``1 - epsilon`` on the true class and spreads
    ``epsilon`` uniformly over the remaining ``V - 1`` classes.
    """
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"label smoothing must lie in [0, 1), got {epsilon}")
    targets = np.asarray(targets, dtype=np.int64)
    V = logits.shape[-1]
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"cross_entropy_ls: logits {logits.shape} vs targets {targets.shape}")
    if targets.size and targets.max() >= V:
        raise IndexError(f"target id {targets.max()} >= vocab size {V}")
    valid = targets != pad_id
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("cross_entropy_ls: every target position is padding")
    lp = log_softmax_np(logits.data.astype(np.float64))
    off = epsilon / (V - 1) if V > 1 else 0.0
    q = np.full(lp.shape, off)
    np.put_along_axis(q, targets[..., None], 1.0 - epsilon, axis=-1)
    per_pos = -(q * lp).sum(axis=-1)
    loss = (per_pos * valid).sum() / n_valid

    def backward(g):
        p = np.exp(lp)
        grad = (p - q) * (valid[..., None] / n_valid)
        return ((grad * float(g)).astype(_dtype()),)

    return _make(np.asarray(loss, dtype=_dtype()), (logits,), backward, "cross_entropy_ls")


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        return (np.broadcast_to(g, x.shape),)

    return _make(np.asarray(x.data.sum(dtype=np.float64), dtype=_dtype()), (x,), backward, "sum")


# ----------------------------------------------------------------------------
# optimization


class Adam:
    """Adam with the canonical defaults (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, params: Iterable[Tensor], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        step = DTYPE(lr * math.sqrt(c2) / c1)
        eps_hat = DTYPE(self.eps * math.sqrt(c2))
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p.data -= step * m / (np.sqrt(v) + eps_hat)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def adam_step(params: Sequence[Tensor], state: Adam | None, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> Adam:
    """Functional entry point: one Adam update, creating the state on first use."""
    if state is None:
        state = Adam(params, beta1, beta2, eps)
    state.step(lr)
    return state
