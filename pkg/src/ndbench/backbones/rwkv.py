"""RWKV decoder: linear-attention time mixing plus squared-ReLU channel mixing.

The time-mix block computes, per channel,

    wkv_t = (sum_{i<t} e^{-(t-1-i) w + k_i} v_i + e^{u + k_t} v_t)
          / (sum_{i<t} e^{-(t-1-i) w + k_i}      + e^{u + k_t})

with a learned positive decay ``w`` (stored in log space) and a bonus ``u``
for the current token.  The scan is evaluated as a streaming recurrence on
numerator/denominator accumulators that track a running maximum exponent,
so no intermediate ``e^k`` can overflow and the result is invariant to a
constant shift of ``k``.  Receptance gates the scan output; token-shift
interpolation (``mu * x_t + (1 - mu) * x_{t-1}``) feeds every projection.
The channel-mix block gates a squared-ReLU feed-forward the same way.
"""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..tensor import Tensor
from . import ModelConfig, RecurrentState, check_finite
from ._common import affine, layer_norm_affine, stack_steps, token_shift, uniform_init

# Start the running-max exponent far below any reachable logit so the first
# step reduces exactly to wkv_1 = v_1 (the stale accumulator weight
# underflows to 0 while e^0 = 1 weights the current token).
_NEG_INF_START = -1e30


def param_shapes(cfg: ModelConfig) -> dict:
    shapes: dict[str, tuple] = {}
    e = cfg.embed
    f = cfg.ffn_ratio * e
    shapes["in_proj.w"] = (cfg.input_channels, e)
    shapes["in_proj.b"] = (e,)
    for i in range(cfg.layers):
        att = f"layers.{i}.att"
        shapes[f"{att}.ln.g"] = (e,)
        shapes[f"{att}.ln.b"] = (e,)
        for mu in ("mu_r", "mu_k", "mu_v"):
            shapes[f"{att}.{mu}"] = (e,)
        for mat in ("wr", "wk", "wv"):
            shapes[f"{att}.{mat}"] = (e, e)
        shapes[f"{att}.decay_log"] = (e,)
        shapes[f"{att}.bonus"] = (e,)
        shapes[f"{att}.wo"] = (e, e)
        ffn = f"layers.{i}.ffn"
        shapes[f"{ffn}.ln.g"] = (e,)
        shapes[f"{ffn}.ln.b"] = (e,)
        shapes[f"{ffn}.mu_r"] = (e,)
        shapes[f"{ffn}.mu_k"] = (e,)
        shapes[f"{ffn}.wr"] = (e, e)
        shapes[f"{ffn}.wk"] = (e, f)
        shapes[f"{ffn}.wv"] = (f, e)
    shapes["out_norm.g"] = (e,)
    shapes["out_norm.b"] = (e,)
    shapes["head.w"] = (e, 2)
    shapes["head.b"] = (2,)
    return shapes


def init_group(cfg: ModelConfig, name: str, shape, rng: np.random.Generator) -> np.ndarray:
    if name.endswith(".ln.g") or name == "out_norm.g":
        return np.ones(shape)
    if name.endswith(".ln.b") or name in ("out_norm.b", "in_proj.b", "head.b"):
        return np.zeros(shape)
    if ".mu_" in name:
        return np.full(shape, 0.5)
    if name.endswith(".decay_log"):
        # Spread per-channel decay speeds from slow to fast.
        return np.linspace(-5.0, 3.0, shape[0])
    if name.endswith(".bonus"):
        return np.full(shape, -1.0)
    return uniform_init(rng, shape, shape[0])


def wkv_step(kt: Tensor, vt: Tensor, w: Tensor, u: Tensor, aa: Tensor, bb: Tensor, pp: Tensor):
    """One step of the stabilized scan.

    ``aa``/``bb`` hold the numerator/denominator scaled by ``e^pp``, where
    ``pp`` is the running maximum exponent.  Returns the step output and the
    updated accumulators.  Shapes: all (B, E).
    """
    ww = u + kt
    q = T.maximum(pp, ww)
    e1 = T.exp(pp - q)
    e2 = T.exp(ww - q)
    out = (e1 * aa + e2 * vt) / (e1 * bb + e2)
    ww = pp - w
    q = T.maximum(ww, kt)
    e1 = T.exp(ww - q)
    e2 = T.exp(kt - q)
    return out, e1 * aa + e2 * vt, e1 * bb + e2, q


def wkv_scan(k: Tensor, v: Tensor, w: Tensor, u: Tensor) -> Tensor:
    """Evaluate the weighted-average scan over a (B, S, E) key/value pair.

    ``w`` is the positive per-channel decay and ``u`` the current-token
    bonus, both (E,).  The output is invariant to ``k -> k + c`` and never
    overflows regardless of the magnitude of ``k``.
    """
    b, s, e = k.shape
    dtype = k.data.dtype
    aa = Tensor(np.zeros((b, e), dtype=dtype))
    bb = Tensor(np.zeros((b, e), dtype=dtype))
    pp = Tensor(np.full((b, e), _NEG_INF_START, dtype=dtype))
    outs = []
    for t in range(s):
        out, aa, bb, pp = wkv_step(k[:, t, :], v[:, t, :], w, u, aa, bb, pp)
        outs.append(out)
    return stack_steps(outs, b, e)


def _time_mix(params: dict, prefix: str, x: Tensor, shifted: Tensor) -> Tensor:
    def mix(mu_name: str) -> Tensor:
        mu = params[f"{prefix}.{mu_name}"]
        return mu * x + (1.0 - mu) * shifted

    r = T.sigmoid(T.matmul(mix("mu_r"), params[f"{prefix}.wr"]))
    k = T.matmul(mix("mu_k"), params[f"{prefix}.wk"])
    v = T.matmul(mix("mu_v"), params[f"{prefix}.wv"])
    w = T.exp(params[f"{prefix}.decay_log"])
    wkv = wkv_scan(k, v, w, params[f"{prefix}.bonus"])
    return T.matmul(r * wkv, params[f"{prefix}.wo"])


def _channel_mix(params: dict, prefix: str, x: Tensor, shifted: Tensor) -> Tensor:
    def mix(mu_name: str) -> Tensor:
        mu = params[f"{prefix}.{mu_name}"]
        return mu * x + (1.0 - mu) * shifted

    r = T.sigmoid(T.matmul(mix("mu_r"), params[f"{prefix}.wr"]))
    k = T.matmul(mix("mu_k"), params[f"{prefix}.wk"])
    k = T.relu(k)
    return r * T.matmul(k * k, params[f"{prefix}.wv"])


def forward(params: dict, x: Tensor, cfg: ModelConfig, train: bool = False, rng=None) -> Tensor:
    eps = cfg.layer_norm_eps
    h = affine(params, "in_proj", x)
    for i in range(cfg.layers):
        att = f"layers.{i}.att"
        xn = layer_norm_affine(params, f"{att}.ln", h, eps)
        h = h + _time_mix(params, att, xn, token_shift(xn))
        check_finite(h, f"rwkv time-mix block {i}")
        ffn = f"layers.{i}.ffn"
        xn = layer_norm_affine(params, f"{ffn}.ln", h, eps)
        h = h + _channel_mix(params, ffn, xn, token_shift(xn))
        check_finite(h, f"rwkv channel-mix block {i}")
        if train and cfg.dropout_rate > 0.0:
            h = T.dropout(h, cfg.dropout_rate, rng=rng, train=True)
    h = layer_norm_affine(params, "out_norm", h, eps)
    return affine(params, "head", h)


def init_state(cfg: ModelConfig) -> RecurrentState:
    e = cfg.embed
    layers = []
    for _ in range(cfg.layers):
        layers.append(
            {
                "att_prev": np.zeros((1, e), dtype=np.float32),
                "aa": np.zeros((1, e), dtype=np.float32),
                "bb": np.zeros((1, e), dtype=np.float32),
                "pp": np.full((1, e), _NEG_INF_START, dtype=np.float32),
                "ffn_prev": np.zeros((1, e), dtype=np.float32),
            }
        )
    return RecurrentState(kind="rwkv", layers=layers)


def streaming_step(params: dict, state: RecurrentState, x_t: np.ndarray, cfg: ModelConfig):
    eps = cfg.layer_norm_eps
    h = affine(params, "in_proj", Tensor(x_t.reshape(1, -1)))
    for i, mem in enumerate(state.layers):
        att = f"layers.{i}.att"
        xn = layer_norm_affine(params, f"{att}.ln", h, eps)
        shifted = Tensor(mem["att_prev"])
        mu_r = params[f"{att}.mu_r"]
        mu_k = params[f"{att}.mu_k"]
        mu_v = params[f"{att}.mu_v"]
        r = T.sigmoid(T.matmul(mu_r * xn + (1.0 - mu_r) * shifted, params[f"{att}.wr"]))
        k = T.matmul(mu_k * xn + (1.0 - mu_k) * shifted, params[f"{att}.wk"])
        v = T.matmul(mu_v * xn + (1.0 - mu_v) * shifted, params[f"{att}.wv"])
        w = T.exp(params[f"{att}.decay_log"])
        out, aa, bb, pp = wkv_step(
            k, v, w, params[f"{att}.bonus"], Tensor(mem["aa"]), Tensor(mem["bb"]), Tensor(mem["pp"])
        )
        mem["att_prev"] = xn.data
        mem["aa"], mem["bb"], mem["pp"] = aa.data, bb.data, pp.data
        h = h + T.matmul(r * out, params[f"{att}.wo"])

        ffn = f"layers.{i}.ffn"
        xn = layer_norm_affine(params, f"{ffn}.ln", h, eps)
        shifted = Tensor(mem["ffn_prev"])
        mu_r = params[f"{ffn}.mu_r"]
        mu_k = params[f"{ffn}.mu_k"]
        rr = T.sigmoid(T.matmul(mu_r * xn + (1.0 - mu_r) * shifted, params[f"{ffn}.wr"]))
        kk = T.relu(T.matmul(mu_k * xn + (1.0 - mu_k) * shifted, params[f"{ffn}.wk"]))
        mem["ffn_prev"] = xn.data
        h = h + rr * T.matmul(kk * kk, params[f"{ffn}.wv"])
    h = layer_norm_affine(params, "out_norm", h, eps)
    y = affine(params, "head", h)
    return y.data[0], state
