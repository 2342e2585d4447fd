"""Selective state-space decoder.

Each block expands the embedding to ``expand * embed`` gated lanes, applies
a depthwise causal convolution and SiLU, and runs a diagonal state-space
recurrence whose step size and input/output couplings are functions of the
input (the selection mechanism):

    dt_t = softplus(W_dt (W_x u_t)[:dt_rank] + b_dt)
    A_bar_t = exp(dt_t * A)          A = -exp(A_log), diagonal per lane
    B_bar_t = dt_t * B_t             first-order (Euler) discretization
    s_t = A_bar_t * s_{t-1} + B_bar_t * u_t
    y_t = C_t . s_t + D * u_t

The scan output is gated by SiLU of the parallel lane and projected back to
the embedding.  ``ssm_scan`` evaluates the recurrence sequentially;
``ssm_scan_assoc`` is an associative (prefix-doubling) evaluation used to
cross-check it.
"""

from __future__ import annotations

import math

import numpy as np

from .. import tensor as T
from ..tensor import Tensor
from . import ModelConfig, RecurrentState, check_finite
from ._common import affine, layer_norm_affine, silu, stack_steps, uniform_init


def param_shapes(cfg: ModelConfig) -> dict:
    shapes: dict[str, tuple] = {}
    e = cfg.embed
    di = cfg.d_inner
    n = cfg.d_state
    r = cfg.dt_rank
    shapes["in_proj.w"] = (cfg.input_channels, e)
    shapes["in_proj.b"] = (e,)
    for i in range(cfg.layers):
        p = f"layers.{i}"
        shapes[f"{p}.ln.g"] = (e,)
        shapes[f"{p}.ln.b"] = (e,)
        shapes[f"{p}.w_in"] = (e, 2 * di)
        shapes[f"{p}.conv.w"] = (cfg.conv_width, di)
        shapes[f"{p}.conv.b"] = (di,)
        shapes[f"{p}.w_x"] = (di, r + 2 * n)
        shapes[f"{p}.w_dt"] = (r, di)
        shapes[f"{p}.b_dt"] = (di,)
        shapes[f"{p}.a_log"] = (di, n)
        shapes[f"{p}.d_skip"] = (di,)
        shapes[f"{p}.w_out"] = (di, e)
    shapes["out_norm.g"] = (e,)
    shapes["out_norm.b"] = (e,)
    shapes["head.w"] = (e, 2)
    shapes["head.b"] = (2,)
    return shapes


def init_group(cfg: ModelConfig, name: str, shape, rng: np.random.Generator) -> np.ndarray:
    if name.endswith(".ln.g") or name == "out_norm.g":
        return np.ones(shape)
    if name.endswith((".ln.b", "in_proj.b", "head.b", ".conv.b")):
        return np.zeros(shape)
    if name.endswith(".a_log"):
        # Real S4D initialization: lane-independent spectrum 1..d_state.
        return np.log(np.tile(np.arange(1, cfg.d_state + 1, dtype=np.float64), (cfg.d_inner, 1)))
    if name.endswith(".d_skip"):
        return np.ones(shape)
    if name.endswith(".b_dt"):
        # Inverse softplus of step sizes log-uniform in [1e-3, 1e-1] keeps
        # the recurrence stable at the first optimizer steps.
        dt = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), size=shape))
        return dt + np.log(-np.expm1(-dt))
    if name.endswith(".conv.w"):
        return uniform_init(rng, shape, cfg.conv_width)
    return uniform_init(rng, shape, shape[0])


def ssm_scan(a_bar: Tensor, b_bar_u: Tensor, c: Tensor) -> Tensor:
    """Sequential diagonal recurrence.

    ``a_bar`` and ``b_bar_u`` are (B, S, D, N); ``c`` is (B, S, N) shared
    across lanes.  Returns (B, S, D) with ``y_t = sum_n c_t[n] * s_t[:, n]``.
    """
    b, s, d, n = a_bar.shape
    state = Tensor(np.zeros((b, d, n), dtype=a_bar.data.dtype))
    outs = []
    for t in range(s):
        state = a_bar[:, t] * state + b_bar_u[:, t]
        y_t = (state * c[:, t].reshape(b, 1, n)).sum(axis=-1)
        outs.append(y_t)
    return stack_steps(outs, b, d)


def ssm_scan_assoc(a_bar: np.ndarray, b_bar_u: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Prefix-doubling evaluation of the same recurrence (numpy only).

    Treats each step as the affine map ``s -> a s + b`` and composes maps
    with the associative rule ``(a2, b2) o (a1, b1) = (a1 a2, a2 b1 + b2)``;
    the inclusive scan of ``b`` parts is the state sequence from s_0 = 0.
    """
    a = np.array(a_bar, dtype=np.float64)
    bv = np.array(b_bar_u, dtype=np.float64)
    s = a.shape[1]
    offset = 1
    while offset < s:
        bv[:, offset:] = a[:, offset:] * bv[:, :-offset] + bv[:, offset:]
        a[:, offset:] = a[:, offset:] * a[:, :-offset]
        offset *= 2
    return (bv * c[:, :, None, :]).sum(axis=-1)


def _block(params: dict, prefix: str, x: Tensor, cfg: ModelConfig) -> Tensor:
    b, s, _ = x.shape
    di = cfg.d_inner
    n = cfg.d_state
    r = cfg.dt_rank
    k = cfg.conv_width
    dtype = x.data.dtype

    xz = T.matmul(x, params[f"{prefix}.w_in"])
    lane = xz[:, :, :di]
    gate = xz[:, :, di:]

    pad = Tensor(np.zeros((b, k - 1, di), dtype=dtype))
    padded = T.concatenate([pad, lane], axis=1)
    conv = None
    for j in range(k):
        tap = padded[:, j : j + s, :] * params[f"{prefix}.conv.w"][j]
        conv = tap if conv is None else conv + tap
    u = silu(conv + params[f"{prefix}.conv.b"])

    dbc = T.matmul(u, params[f"{prefix}.w_x"])
    dt = T.softplus(T.matmul(dbc[:, :, :r], params[f"{prefix}.w_dt"]) + params[f"{prefix}.b_dt"])
    b_in = dbc[:, :, r : r + n]
    c_out = dbc[:, :, r + n :]

    a = -T.exp(params[f"{prefix}.a_log"])  # (D, N), strictly negative
    dt4 = dt.reshape(b, s, di, 1)
    a_bar = T.exp(dt4 * a)
    b_bar_u = dt4 * b_in.reshape(b, s, 1, n) * u.reshape(b, s, di, 1)
    y = ssm_scan(a_bar, b_bar_u, c_out)
    y = y + u * params[f"{prefix}.d_skip"]
    y = y * silu(gate)
    return T.matmul(y, params[f"{prefix}.w_out"])


def forward(params: dict, x: Tensor, cfg: ModelConfig, train: bool = False, rng=None) -> Tensor:
    eps = cfg.layer_norm_eps
    h = affine(params, "in_proj", x)
    for i in range(cfg.layers):
        xn = layer_norm_affine(params, f"layers.{i}.ln", h, eps)
        h = h + _block(params, f"layers.{i}", xn, cfg)
        check_finite(h, f"ssm block {i}")
        if train and cfg.dropout_rate > 0.0:
            h = T.dropout(h, cfg.dropout_rate, rng=rng, train=True)
    h = layer_norm_affine(params, "out_norm", h, eps)
    return affine(params, "head", h)


def init_state(cfg: ModelConfig) -> RecurrentState:
    di = cfg.d_inner
    layers = [
        {
            "conv": np.zeros((cfg.conv_width - 1, di), dtype=np.float32),
            "s": np.zeros((di, cfg.d_state), dtype=np.float32),
        }
        for _ in range(cfg.layers)
    ]
    return RecurrentState(kind="mamba", layers=layers)


def streaming_step(params: dict, state: RecurrentState, x_t: np.ndarray, cfg: ModelConfig):
    eps = cfg.layer_norm_eps
    di = cfg.d_inner
    n = cfg.d_state
    r = cfg.dt_rank
    k = cfg.conv_width
    h = affine(params, "in_proj", Tensor(x_t.reshape(1, -1)))
    for i, mem in enumerate(state.layers):
        prefix = f"layers.{i}"
        xn = layer_norm_affine(params, f"{prefix}.ln", h, eps)
        xz = T.matmul(xn, params[f"{prefix}.w_in"])
        lane = xz[:, :di]
        gate = xz[:, di:]

        window = np.concatenate([mem["conv"], lane.data], axis=0)  # (K, D)
        mem["conv"] = window[1:]
        conv = (Tensor(window) * params[f"{prefix}.conv.w"]).sum(axis=0).reshape(1, di)
        u = silu(conv + params[f"{prefix}.conv.b"])

        dbc = T.matmul(u, params[f"{prefix}.w_x"])
        dt = T.softplus(T.matmul(dbc[:, :r], params[f"{prefix}.w_dt"]) + params[f"{prefix}.b_dt"])
        b_in = dbc[:, r : r + n]
        c_out = dbc[:, r + n :]
        a = -T.exp(params[f"{prefix}.a_log"])
        a_bar = T.exp(dt.reshape(1, di, 1) * a)
        b_bar_u = dt.reshape(1, di, 1) * b_in.reshape(1, 1, n) * u.reshape(1, di, 1)
        s_new = a_bar * Tensor(mem["s"].reshape(1, di, n)) + b_bar_u
        mem["s"] = s_new.data[0]
        y = (s_new * c_out.reshape(1, 1, n)).sum(axis=-1)
        y = y + u * params[f"{prefix}.d_skip"]
        y = y * silu(gate)
        h = h + T.matmul(y, params[f"{prefix}.w_out"])
    h = layer_norm_affine(params, "out_norm", h, eps)
    y = affine(params, "head", h)
    return y.data[0], state
