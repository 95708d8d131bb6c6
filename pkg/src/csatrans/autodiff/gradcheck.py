"""Central finite-difference checks of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def numeric_grad(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> list[np.ndarray]:
    grads = []
    with no_grad():
        for x in inputs:
            g = np.zeros_like(x.data)
            flat, gflat = x.data.reshape(-1), g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = f(*inputs).item()
                flat[i] = orig - eps
                lo = f(*inputs).item()
                flat[i] = orig
                gflat[i] = (hi - lo) / (2 * eps)
            grads.append(g)
    return grads


def analytic_grad(f: Callable[..., Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    for x in inputs:
        x.requires_grad = True
        x.zero_grad()
    f(*inputs).backward()
    return [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]


def relative_error(a: np.ndarray, n: np.ndarray) -> float:
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))))


def gradcheck(f: Callable[..., Tensor], x: Tensor | Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between backward() and central differences.

    ``f`` maps the input tensor(s) to a scalar tensor.
    """
    inputs = [x] if isinstance(x, Tensor) else list(x)
    analytic = analytic_grad(f, inputs)
    numeric = numeric_grad(f, inputs, eps)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
