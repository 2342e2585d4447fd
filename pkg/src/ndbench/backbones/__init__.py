"""Four sequence-decoding backbones behind one functional interface.

Every model maps a window of z-scored spike counts (B, S, C) to 2D velocity
(B, S, 2) and is described by the same :class:`ModelConfig`.  Parameters are
flat ``{name: Tensor}`` dicts whose shapes come from :func:`param_shapes`,
which makes :func:`param_count` exact by construction.  The three recurrent
kinds (gru, rwkv, mamba) additionally expose a streaming interface that
consumes one timestep at a time and must match the batch forward pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..tensor import NonFiniteError, Tensor, no_grad

KINDS = ("gru", "transformer", "rwkv", "mamba")


class ConfigError(ValueError):
    """A model configuration violates a structural constraint."""


class SequenceLengthError(ValueError):
    """The input is longer than the model's positional table allows."""


class UnsupportedStreamingError(TypeError):
    """Streaming inference was requested for a model without a recurrent state."""


@dataclass
class ModelConfig:
    """Architecture hyperparameters shared by all backbones.

    ``layers`` counts recurrent/residual blocks; for the transformer it is
    the number of encoder layers and of decoder layers (three means 3 + 3).
    ``ffn_ratio`` scales the feed-forward (or channel-mix) hidden width,
    ``d_state``/``conv_width``/``expand`` apply to the state-space model
    only, and ``max_timesteps`` bounds the learned positional table.
    """

    kind: str
    input_channels: int
    embed: int
    layers: int
    heads: int = 2
    ffn_ratio: int = 1
    d_state: int = 8
    conv_width: int = 4
    expand: int = 2
    dropout_rate: float = 0.0
    max_timesteps: int = 1024
    layer_norm_eps: float = 1e-5

    @property
    def dt_rank(self) -> int:
        return int(math.ceil(self.embed / 16))

    @property
    def d_inner(self) -> int:
        return self.expand * self.embed

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}, expected one of {KINDS}")
        for name in ("input_channels", "embed", "layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.kind == "transformer":
            if self.heads < 1 or self.embed % self.heads != 0:
                raise ConfigError(f"embed {self.embed} must divide evenly into {self.heads} heads")
            if self.max_timesteps < 1:
                raise ConfigError("max_timesteps must be >= 1")
        if self.kind in ("transformer", "rwkv") and self.ffn_ratio < 1:
            raise ConfigError("ffn_ratio must be >= 1")
        if self.kind == "mamba":
            if self.d_state < 1 or self.conv_width < 1 or self.expand < 1:
                raise ConfigError("d_state, conv_width, and expand must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "input_channels": self.input_channels,
            "embed": self.embed,
            "layers": self.layers,
            "heads": self.heads,
            "ffn_ratio": self.ffn_ratio,
            "d_state": self.d_state,
            "conv_width": self.conv_width,
            "expand": self.expand,
            "dropout_rate": self.dropout_rate,
            "max_timesteps": self.max_timesteps,
            "layer_norm_eps": self.layer_norm_eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        cfg = cls(**d)
        cfg.validate()
        return cfg


def default_config(kind: str, input_channels: int = 96, **overrides) -> ModelConfig:
    """Reference configuration per backbone family.

    The widths put the GRU at 272,386 parameters exactly and the RWKV and
    state-space models within ten percent of their 294k / 306k reference
    budgets.  The encoder/decoder transformer lands far above its 316k
    reference at any feed-forward ratio once the positional table and six
    attention blocks are counted; ``param_count`` reports the achieved
    number rather than pretending parity.
    """
    base = {
        "gru": dict(embed=256, layers=1, dropout_rate=0.0),
        "transformer": dict(embed=128, layers=3, heads=2, ffn_ratio=1, dropout_rate=0.1),
        "rwkv": dict(embed=88, layers=2, ffn_ratio=7, dropout_rate=0.0),
        "mamba": dict(embed=144, layers=2, d_state=8, conv_width=4, expand=2, dropout_rate=0.0),
    }
    if kind not in base:
        raise ConfigError(f"unknown model kind {kind!r}, expected one of {KINDS}")
    kwargs = dict(base[kind])
    kwargs.update(overrides)
    cfg = ModelConfig(kind=kind, input_channels=input_channels, **kwargs)
    cfg.validate()
    return cfg


@dataclass
class RecurrentState:
    """Per-layer streaming state for the recurrent backbones."""

    kind: str
    layers: list = field(default_factory=list)


# -- dispatch ------------------------------------------------------------------


def _module(kind: str):
    from . import gru, mamba, rwkv, transformer

    table = {"gru": gru, "transformer": transformer, "rwkv": rwkv, "mamba": mamba}
    if kind not in table:
        raise ConfigError(f"unknown model kind {kind!r}, expected one of {KINDS}")
    return table[kind]


def param_shapes(cfg: ModelConfig) -> dict:
    """Ordered ``{group_name: shape}`` map; the single source of truth."""
    cfg.validate()
    return _module(cfg.kind).param_shapes(cfg)


def param_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for shape in param_shapes(cfg).values())


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> dict:
    """Allocate and initialize all parameter groups deterministically."""
    rng = np.random.default_rng(seed)
    shapes = param_shapes(cfg)
    params: dict[str, Tensor] = {}
    for name, shape in shapes.items():
        params[name] = Tensor(
            _module(cfg.kind).init_group(cfg, name, shape, rng).astype(dtype),
            requires_grad=True,
        )
    return params


def forward(params: dict, x, cfg: ModelConfig, train: bool = False, rng=None) -> Tensor:
    """Run a batch of windows through the model: (B, S, C) -> (B, S, 2)."""
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x))
    if x.ndim != 3:
        raise ValueError(f"forward expects (batch, timesteps, channels), got shape {x.shape}")
    if x.shape[2] != cfg.input_channels:
        raise ValueError(f"input has {x.shape[2]} channels, model expects {cfg.input_channels}")
    if train and cfg.dropout_rate > 0.0 and rng is None:
        raise ValueError("training forward with dropout needs an rng")
    return _module(cfg.kind).forward(params, x, cfg, train=train, rng=rng)


def predict(params: dict, x: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Untaped evaluation forward pass on a numpy batch."""
    with no_grad():
        return forward(params, x, cfg, train=False).data


def init_state(cfg: ModelConfig) -> RecurrentState:
    """Fresh streaming state; transformers have none."""
    if cfg.kind == "transformer":
        raise UnsupportedStreamingError("the encoder/decoder transformer has no streaming state")
    return _module(cfg.kind).init_state(cfg)


def streaming_step(params: dict, state: RecurrentState, x_t: np.ndarray, cfg: ModelConfig):
    """Advance one timestep: (C,) -> (2,).  Mutates and returns ``state``."""
    if cfg.kind == "transformer":
        raise UnsupportedStreamingError("the encoder/decoder transformer has no streaming state")
    x_t = np.asarray(x_t)
    if x_t.shape != (cfg.input_channels,):
        raise ValueError(f"streaming step expects shape ({cfg.input_channels},), got {x_t.shape}")
    with no_grad():
        return _module(cfg.kind).streaming_step(params, state, x_t, cfg)


def check_finite(t: Tensor, where: str) -> Tensor:
    if not np.isfinite(t.data).all():
        raise NonFiniteError(f"non-finite activation in {where}")
    return t


__all__ = [
    "KINDS",
    "ModelConfig",
    "RecurrentState",
    "ConfigError",
    "SequenceLengthError",
    "UnsupportedStreamingError",
    "default_config",
    "param_shapes",
    "param_count",
    "init_params",
    "forward",
    "predict",
    "init_state",
    "streaming_step",
    "check_finite",
    "replace",
]
