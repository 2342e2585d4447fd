"""Shared building blocks for the backbone implementations."""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..tensor import Tensor


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) in float64; cast by caller."""
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return rng.uniform(-bound, bound, size=shape)


def affine(params: dict, name: str, x: Tensor) -> Tensor:
    return T.matmul(x, params[f"{name}.w"]) + params[f"{name}.b"]


def layer_norm_affine(params: dict, name: str, x: Tensor, eps: float) -> Tensor:
    return T.layer_norm(x, eps) * params[f"{name}.g"] + params[f"{name}.b"]


def silu(x: Tensor) -> Tensor:
    return x * T.sigmoid(x)


def token_shift(x: Tensor) -> Tensor:
    """Previous timestep along axis 1, zeros at t = 0."""
    b, s, e = x.shape
    pad = Tensor(np.zeros((b, 1, e), dtype=x.data.dtype))
    if s == 1:
        return pad
    return T.concatenate([pad, x[:, : s - 1, :]], axis=1)


def stack_steps(steps: list, batch: int, width: int) -> Tensor:
    """Concatenate per-step (B, width) tensors into (B, S, width)."""
    return T.concatenate([h.reshape(batch, 1, width) for h in steps], axis=1)
