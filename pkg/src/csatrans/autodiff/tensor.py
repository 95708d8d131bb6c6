"""Define-by-run reverse-mode differentiation over float64 numpy arrays.

Every op returns a new :class:`Tensor`; when any input requires a gradient the
result records its parents and a backward rule mapping the output gradient to
one gradient per parent. :meth:`Tensor.backward` topologically sorts the
recorded graph (the tape) and replays the rules in reverse.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from ..errors import NotScalar, ShapeError

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad", True)


def is_checked() -> bool:
    return getattr(_state, "checked", False)


@contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = prev


@contextmanager
def checked():
    """Raise FloatingPointError as soon as any op produces NaN or Inf."""
    prev = is_checked()
    _state.checked = True
    try:
        yield
    finally:
        _state.checked = prev


Backward = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "retains_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.retains_grad = False
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Backward | None = None
        self.op = "leaf"

    @classmethod
    def _make(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.retains_grad = False
        out.op = op
        if is_checked() and not np.all(np.isfinite(data)):
            raise FloatingPointError(f"{op} produced a non-finite value")
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def retain_grad(self) -> "Tensor":
        self.retains_grad = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # -- tape ------------------------------------------------------------
    def tape(self) -> list["Tensor"]:
        """Recorded tensors reachable from ``self``, inputs before outputs."""
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for p in t._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise NotScalar(f"backward() needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for t in reversed(self.tape()):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if not t._parents or t.retains_grad:
                t.grad = g.copy() if t.grad is None else t.grad + g
            if not t._parents:
                continue
            for p, pg in zip(t._parents, t._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.shape:
                    pg = unbroadcast(pg, p.shape)
                key = id(p)
                grads[key] = grads[key] + pg if key in grads else pg

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, c: float):
        return scale(self, 1.0 / c)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self):
        return swapaxes(self, -1, -2)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` over broadcast leading/unit axes."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor._make(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(a: Tensor) -> Tensor:
    on = a.data > 0
    return Tensor._make(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor._make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return Tensor._make(y, (a,), lambda g: (g * y,), "exp")


def mask_fill(a: Tensor, mask: np.ndarray, value: float = 0.0) -> Tensor:
    """Entries where ``mask`` is True are replaced by ``value`` (no gradient there)."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    return Tensor._make(np.where(mask, value, a.data), (a,), lambda g: (np.where(mask, 0.0, g),), "mask_fill")


# -- reductions and shape ---------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), back, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum_(a, axis, keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return Tensor._make(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),), "swapaxes")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[d] != ref[d] for d in range(len(ref)) if d != ax):
            raise ShapeError(f"concat shapes {ref} and {t.shape} disagree off axis {axis}")
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return Tensor._make(
        np.concatenate([t.data for t in tensors], axis=ax),
        tensors,
        lambda g: tuple(np.split(g, splits, axis=ax)),
        "concat",
    )


def getitem(a: Tensor, key) -> Tensor:
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, key, g)
        return (out,)

    return Tensor._make(np.array(a.data[key]), (a,), back, "getitem")


# -- linear algebra ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs operands with at least two dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        if not b.requires_grad:
            gb = None
        elif b.ndim == 2 and a.ndim > 2:
            # fold batch dims instead of building a per-batch outer product
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return Tensor._make(a.data @ b.data, (a, b), back, "matmul")


def gather_rows(table: Tensor, indices) -> Tensor:
    """``table[indices]`` with scatter-add backward (repeated rows accumulate)."""
    idx = np.asarray(indices, dtype=np.int64)
    v, d = table.shape
    if idx.size and (idx.min() < 0 or idx.max() >= v):
        raise IndexError(f"row index out of range for table with {v} rows")

    def back(g):
        flat = g.reshape(-1, d)
        out = np.zeros((v, d))
        np.add.at(out, idx.reshape(-1), flat)
        return (out,)

    return Tensor._make(table.data[idx], (table,), back, "gather_rows")


def take_along_last(a: Tensor, indices: np.ndarray) -> Tensor:
    """``out[..., i, j] = a[..., i, indices[..., i, j]]``; ``indices`` broadcasts over leading axes."""
    idx = np.broadcast_to(np.asarray(indices, dtype=np.int64), a.shape[:-1] + np.shape(indices)[-1:])
    m = a.shape[-1]
    if idx.size and (idx.min() < 0 or idx.max() >= m):
        raise IndexError("take_along_last index out of range")
    shape = a.shape

    def back(g):
        rows = np.prod(shape[:-1], dtype=np.int64)
        flat = (np.arange(rows).reshape(shape[:-1] + (1,)) * m + idx).reshape(-1)
        out = np.bincount(flat, weights=g.reshape(-1), minlength=rows * m)
        return (out.reshape(shape),)

    return Tensor._make(np.take_along_axis(a.data, idx, axis=-1), (a,), back, "take_along_last")


# -- normalisation / probability -------------------------------------------

def _masked_softmax(x: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    mx = np.max(x, axis=-1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.exp(x - mx)
    s = e.sum(axis=-1, keepdims=True)
    return e / np.where(s > 0, s, 1.0)


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row softmax over the last axis; ``mask`` False entries get exactly zero weight.

    Rows with every entry masked return all zeros.
    """
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    y = _masked_softmax(a.data, mask)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._make(y, (a,), back, "softmax")


def log_softmax(a: Tensor) -> Tensor:
    x = a.data
    mx = x.max(axis=-1, keepdims=True)
    lse = mx + np.log(np.exp(x - mx).sum(axis=-1, keepdims=True))
    y = x - lse
    p = np.exp(y)
    return Tensor._make(y, (a,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),), "log_softmax")


def cross_entropy(logits: Tensor, targets, pad_id: int | None = 0) -> Tensor:
    """Mean negative log-likelihood over positions whose target is not ``pad_id``."""
    tgt = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != tgt.shape:
        raise ShapeError(f"logits {logits.shape} do not match targets {tgt.shape}")
    keep = np.ones(tgt.shape, dtype=bool) if pad_id is None else tgt != pad_id
    count = int(keep.sum())
    if count == 0:
        raise ValueError("cross_entropy needs at least one non-pad target")
    x = logits.data
    mx = x.max(axis=-1, keepdims=True)
    e = np.exp(x - mx)
    s = e.sum(axis=-1, keepdims=True)
    logp = np.take_along_axis(x - mx - np.log(s), tgt[..., None], axis=-1)[..., 0]
    loss = -(logp * keep).sum() / count

    def back(g):
        grad = e / s
        np.put_along_axis(grad, tgt[..., None], np.take_along_axis(grad, tgt[..., None], -1) - 1.0, -1)
        return (grad * (keep[..., None] * (g / count)),)

    return Tensor._make(np.asarray(loss), (logits,), back, "cross_entropy")


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gdata = 1.0 if gamma is None else gamma.data
    y = xhat * gdata + (0.0 if beta is None else beta.data)
    parents = [x] + [t for t in (gamma, beta) if t is not None]

    def back(g):
        gx_hat = g * gdata
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True) - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        out = [gx]
        lead = tuple(range(g.ndim - 1))
        if gamma is not None:
            out.append((g * xhat).sum(axis=lead))
        if beta is not None:
            out.append(g.sum(axis=lead))
        return out

    return Tensor._make(y, parents, back, "layer_norm")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``rate == 0``."""
    if not train or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an rng stream")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return Tensor._make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def ste_mask(scores: Tensor, link_prob: Tensor, mask: np.ndarray, straight_through: bool = True) -> Tensor:
    """``mask * scores`` whose gradient reaches ``link_prob`` as if it were the mask.

    d/d link_prob[i, j] = g[i, j] * scores[i, j] where mask is set, 0 elsewhere.
    With ``straight_through=False`` the probabilities receive no gradient.
    """
    m = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
    s = scores.data

    def back(g):
        gm = np.where(m, g, 0.0)
        return gm, (gm * s if straight_through else None)

    return Tensor._make(np.where(m, s, 0.0), (scores, link_prob), back, "ste_mask")
