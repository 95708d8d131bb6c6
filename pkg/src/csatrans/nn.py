"""Parameter containers and the transformer building blocks shared by every model."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import (
    Tensor,
    dropout,
    gather_rows,
    layer_norm,
    matmul,
    relu,
    reshape,
    softmax,
    swapaxes,
    transpose,
)


class Module:
    """Walks attributes to find parameters; names are stable dotted paths."""

    training = False

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[path] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(path + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{path}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state is missing {sorted(missing)[:5]}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)


def normal(rng: np.random.Generator, *shape: int, std: float = 0.02) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True):
        self.weight = glorot(rng, d_in, d_out)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Embedding(Module):
    def __init__(self, rng: np.random.Generator, num: int, dim: int):
        self.weight = normal(rng, num, dim)

    def __call__(self, ids) -> Tensor:
        return gather_rows(self.weight, ids)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.weight = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.weight, self.bias, self.eps)


class FeedForward(Module):
    def __init__(self, rng: np.random.Generator, d_model: int, d_ff: int, rate: float = 0.1):
        self.fc1 = Linear(rng, d_model, d_ff)
        self.fc2 = Linear(rng, d_ff, d_model)
        self.rate = rate

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        h = dropout(relu(self.fc1(x)), self.rate, rng, self.training)
        return self.fc2(h)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """[..., N, D] -> [..., H, N, D/H]."""
    *lead, n, d = x.shape
    y = reshape(x, (*lead, n, heads, d // heads))
    return swapaxes(y, -2, -3)


def merge_heads(x: Tensor) -> Tensor:
    """[..., H, N, Dh] -> [..., N, H*Dh]."""
    *lead, h, n, dh = x.shape
    return reshape(swapaxes(x, -2, -3), (*lead, n, h * dh))


class MultiHeadAttention(Module):
    """Scaled dot-product attention (vanilla); used for decoder self/cross attention."""

    def __init__(self, rng: np.random.Generator, d_model: int, heads: int, d_kv: int | None = None, rate: float = 0.1):
        d_kv = d_model if d_kv is None else d_kv
        self.q = Linear(rng, d_model, d_model)
        self.k = Linear(rng, d_kv, d_model)
        self.v = Linear(rng, d_kv, d_model)
        self.o = Linear(rng, d_model, d_model)
        self.heads = heads
        self.rate = rate

    def __call__(self, x: Tensor, memory: Tensor | None = None, mask: np.ndarray | None = None,
                 rng: np.random.Generator | None = None) -> Tensor:
        src = x if memory is None else memory
        q = split_heads(self.q(x), self.heads)
        k = split_heads(self.k(src), self.heads)
        v = split_heads(self.v(src), self.heads)
        dh = q.shape[-1]
        scores = matmul(q, transpose_last(k)) / math.sqrt(dh)
        weights = dropout(softmax(scores, mask), self.rate, rng, self.training)
        self.last_weights = weights.data
        return self.o(merge_heads(matmul(weights, v)))


def transpose_last(x: Tensor) -> Tensor:
    return swapaxes(x, -1, -2)


__all__ = [
    "Module",
    "Linear",
    "Embedding",
    "LayerNorm",
    "FeedForward",
    "MultiHeadAttention",
    "split_heads",
    "merge_heads",
    "glorot",
    "normal",
    "transpose",
]
