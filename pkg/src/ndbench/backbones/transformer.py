"""Encoder/decoder transformer decoder.

The binned window is projected per timestep (A = W x + b), added to a
learned positional embedding, and passed through dropout; the same embedded
sequence feeds both the encoder stack and the decoder stack, with the
decoder attending to encoder output through unmasked cross-attention while
its self-attention is causally masked.  Attention uses zero-bias Q/K/V
affine maps, ``softmax(Q K^T / sqrt(d_k)) V`` per head, and a concatenating
output projection; residual connections are wrapped in post-layer-norm.
"""

from __future__ import annotations

import math

import numpy as np

from .. import tensor as T
from ..tensor import Tensor
from . import ModelConfig, SequenceLengthError, check_finite
from ._common import affine, layer_norm_affine, uniform_init


def param_shapes(cfg: ModelConfig) -> dict:
    shapes: dict[str, tuple] = {}
    e = cfg.embed
    f = cfg.ffn_ratio * e
    shapes["in_proj.w"] = (cfg.input_channels, e)
    shapes["in_proj.b"] = (e,)
    shapes["pos"] = (cfg.max_timesteps, e)

    def attn(prefix: str) -> None:
        for mat in ("wq", "wk", "wv", "wo"):
            shapes[f"{prefix}.{mat}"] = (e, e)

    def norm(prefix: str) -> None:
        shapes[f"{prefix}.g"] = (e,)
        shapes[f"{prefix}.b"] = (e,)

    def ffn(prefix: str) -> None:
        shapes[f"{prefix}.w1"] = (e, f)
        shapes[f"{prefix}.b1"] = (f,)
        shapes[f"{prefix}.w2"] = (f, e)
        shapes[f"{prefix}.b2"] = (e,)

    for i in range(cfg.layers):
        attn(f"enc.{i}.attn")
        norm(f"enc.{i}.ln1")
        ffn(f"enc.{i}.ffn")
        norm(f"enc.{i}.ln2")
    for i in range(cfg.layers):
        attn(f"dec.{i}.self")
        norm(f"dec.{i}.ln1")
        attn(f"dec.{i}.cross")
        norm(f"dec.{i}.ln2")
        ffn(f"dec.{i}.ffn")
        norm(f"dec.{i}.ln3")
    shapes["head.w"] = (e, 2)
    shapes["head.b"] = (2,)
    return shapes


def init_group(cfg: ModelConfig, name: str, shape, rng: np.random.Generator) -> np.ndarray:
    if name.endswith(".g"):
        return np.ones(shape)
    if name == "pos":
        return rng.normal(0.0, 0.02, size=shape)
    if name.endswith((".b", ".b1", ".b2")):
        return np.zeros(shape)
    return uniform_init(rng, shape, shape[0])


def multi_head_attention(
    params: dict,
    prefix: str,
    query: Tensor,
    memory: Tensor,
    heads: int,
    mask: Tensor | None = None,
) -> Tensor:
    """Scaled dot-product attention over ``heads`` parallel subspaces."""
    b, sq, e = query.shape
    sk = memory.shape[1]
    dk = e // heads
    q = T.matmul(query, params[f"{prefix}.wq"]).reshape(b, sq, heads, dk).transpose(0, 2, 1, 3)
    k = T.matmul(memory, params[f"{prefix}.wk"]).reshape(b, sk, heads, dk).transpose(0, 2, 1, 3)
    v = T.matmul(memory, params[f"{prefix}.wv"]).reshape(b, sk, heads, dk).transpose(0, 2, 1, 3)
    scores = T.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dk))
    if mask is not None:
        scores = scores + mask
    weights = T.softmax(scores, axis=-1)
    ctx = T.matmul(weights, v).transpose(0, 2, 1, 3).reshape(b, sq, e)
    return T.matmul(ctx, params[f"{prefix}.wo"])


def causal_mask(s: int, dtype=np.float32) -> Tensor:
    """Additive mask hiding future positions from decoder self-attention."""
    m = np.triu(np.full((s, s), -1e9, dtype=dtype), k=1)
    return Tensor(m)


def _drop(x: Tensor, cfg: ModelConfig, train: bool, rng) -> Tensor:
    return T.dropout(x, cfg.dropout_rate, rng=rng, train=train)


def forward(params: dict, x: Tensor, cfg: ModelConfig, train: bool = False, rng=None) -> Tensor:
    b, s, _ = x.shape
    if s > cfg.max_timesteps:
        raise SequenceLengthError(
            f"window of {s} timesteps exceeds the positional table ({cfg.max_timesteps})"
        )
    eps = cfg.layer_norm_eps
    embedded = affine(params, "in_proj", x) + params["pos"][:s, :]
    embedded = _drop(embedded, cfg, train, rng)

    memory = embedded
    for i in range(cfg.layers):
        att = multi_head_attention(params, f"enc.{i}.attn", memory, memory, cfg.heads)
        memory = layer_norm_affine(params, f"enc.{i}.ln1", memory + _drop(att, cfg, train, rng), eps)
        hidden = T.relu(T.matmul(memory, params[f"enc.{i}.ffn.w1"]) + params[f"enc.{i}.ffn.b1"])
        ff = T.matmul(hidden, params[f"enc.{i}.ffn.w2"]) + params[f"enc.{i}.ffn.b2"]
        memory = layer_norm_affine(params, f"enc.{i}.ln2", memory + _drop(ff, cfg, train, rng), eps)
        check_finite(memory, f"encoder block {i}")

    mask = causal_mask(s, dtype=params["head.w"].data.dtype)
    out = embedded
    for i in range(cfg.layers):
        self_att = multi_head_attention(params, f"dec.{i}.self", out, out, cfg.heads, mask=mask)
        out = layer_norm_affine(params, f"dec.{i}.ln1", out + _drop(self_att, cfg, train, rng), eps)
        cross = multi_head_attention(params, f"dec.{i}.cross", out, memory, cfg.heads)
        out = layer_norm_affine(params, f"dec.{i}.ln2", out + _drop(cross, cfg, train, rng), eps)
        hidden = T.relu(T.matmul(out, params[f"dec.{i}.ffn.w1"]) + params[f"dec.{i}.ffn.b1"])
        ff = T.matmul(hidden, params[f"dec.{i}.ffn.w2"]) + params[f"dec.{i}.ffn.b2"]
        out = layer_norm_affine(params, f"dec.{i}.ln3", out + _drop(ff, cfg, train, rng), eps)
        check_finite(out, f"decoder block {i}")

    return affine(params, "head", out)
