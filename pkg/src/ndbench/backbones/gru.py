"""Gated recurrent unit decoder.

Update rule per timestep, with the update gate weighting the candidate:

    r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_wr + b_ur)
    z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_wz + b_uz)
    cand_t = tanh(W_h x_t + b_wh + U_h (r_t * h_{t-1}) + b_uh)
    h_t = (1 - z_t) * h_{t-1} + z_t * cand_t

Gates read the raw spike-count channels directly (no input projection);
stacked layers feed the previous layer's hidden sequence forward, and a
linear head maps hidden state to 2D velocity.  Each gate carries separate
input-side and hidden-side bias vectors.
"""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..tensor import Tensor
from . import ModelConfig, RecurrentState, check_finite
from ._common import stack_steps, uniform_init


def param_shapes(cfg: ModelConfig) -> dict:
    shapes: dict[str, tuple] = {}
    e = cfg.embed
    for i in range(cfg.layers):
        d_in = cfg.input_channels if i == 0 else e
        for gate in ("r", "z", "h"):
            shapes[f"layers.{i}.w_{gate}"] = (d_in, e)
            shapes[f"layers.{i}.u_{gate}"] = (e, e)
            shapes[f"layers.{i}.b_w{gate}"] = (e,)
            shapes[f"layers.{i}.b_u{gate}"] = (e,)
    shapes["head.w"] = (e, 2)
    shapes["head.b"] = (2,)
    return shapes


def init_group(cfg: ModelConfig, name: str, shape, rng: np.random.Generator) -> np.ndarray:
    if name.endswith((".b_wr", ".b_ur", ".b_wz", ".b_uz", ".b_wh", ".b_uh", "head.b")):
        return np.zeros(shape)
    return uniform_init(rng, shape, shape[0])


def _cell(params: dict, prefix: str, x_t: Tensor, h: Tensor) -> Tensor:
    r = T.sigmoid(
        T.matmul(x_t, params[f"{prefix}.w_r"]) + params[f"{prefix}.b_wr"]
        + T.matmul(h, params[f"{prefix}.u_r"]) + params[f"{prefix}.b_ur"]
    )
    z = T.sigmoid(
        T.matmul(x_t, params[f"{prefix}.w_z"]) + params[f"{prefix}.b_wz"]
        + T.matmul(h, params[f"{prefix}.u_z"]) + params[f"{prefix}.b_uz"]
    )
    cand = T.tanh(
        T.matmul(x_t, params[f"{prefix}.w_h"]) + params[f"{prefix}.b_wh"]
        + T.matmul(r * h, params[f"{prefix}.u_h"]) + params[f"{prefix}.b_uh"]
    )
    return (1.0 - z) * h + z * cand


def forward(params: dict, x: Tensor, cfg: ModelConfig, train: bool = False, rng=None) -> Tensor:
    b, s, _ = x.shape
    dtype = params["head.w"].data.dtype
    out = x
    for i in range(cfg.layers):
        h = Tensor(np.zeros((b, cfg.embed), dtype=dtype))
        steps = []
        for t in range(s):
            h = _cell(params, f"layers.{i}", out[:, t, :], h)
            check_finite(h, f"gru layer {i} at step {t}")
            steps.append(h)
        out = stack_steps(steps, b, cfg.embed)
        if train and cfg.dropout_rate > 0.0 and i < cfg.layers - 1:
            out = T.dropout(out, cfg.dropout_rate, rng=rng, train=True)
    return T.matmul(out, params["head.w"]) + params["head.b"]


def init_state(cfg: ModelConfig) -> RecurrentState:
    return RecurrentState(
        kind="gru",
        layers=[{"h": np.zeros((1, cfg.embed), dtype=np.float32)} for _ in range(cfg.layers)],
    )


def streaming_step(params: dict, state: RecurrentState, x_t: np.ndarray, cfg: ModelConfig):
    cur = Tensor(x_t.reshape(1, -1))
    for i in range(cfg.layers):
        h = _cell(params, f"layers.{i}", cur, Tensor(state.layers[i]["h"]))
        state.layers[i]["h"] = h.data
        cur = h
    y = T.matmul(cur, params["head.w"]) + params["head.b"]
    return y.data[0], state
