"""Experiment protocols: training, fine-tuning, and the scaling sweep.

Four entry points mirror the benchmark's four experiments:

* :func:`train_single_session` fits one model per session and scores the
  held-out 20% of bins.
* :func:`train_multi_session` fits one model across sessions under one of
  three batch-ordering strategies (random over the union, day-by-day
  sequential, or random session order with chronological batches inside).
* :func:`finetune_new_session` starts from a trained checkpoint, measures the
  zero-shot score on an unseen session, then fine-tunes on growing 10-second
  slices of calibration data to trace a recovery curve.
* :func:`scaling_sweep` repeats training at increasing depth and reports
  (parameter count, R²) with across-seed error bars.

Every run is deterministic given (seed, config, data) in single-threaded
mode: parameter init, batch order, and dropout all draw from generators
seeded by the run seed plus fixed salts.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .backbones import ModelConfig, forward, init_params
from .checkpoint import Checkpoint
from .datapipe import (
    PreparedSession,
    WindowSet,
    concat_window_sets,
    make_windows,
    test_windows,
    train_windows,
)
from .metrics import MetricsRecord, evaluate, recovery_time
from .tensor import AdamState, NonFiniteError, Tensor, adam_step, tensor_mean, zero_grads

# Fixed salts keep the independent random streams (init, batch order, dropout)
# decoupled while staying reproducible from one run seed.
_SALT_INIT = 11
_SALT_SCHEDULE = 13
_SALT_DROPOUT = 17


class HarnessError(ValueError):
    """An experiment request is structurally invalid."""


class ScheduleError(HarnessError):
    """Batch scheduling got an empty or inconsistent session list."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or activation."""

    def __init__(self, epoch: int, step: int, reason: str = ""):
        self.epoch = epoch
        self.step = step
        self.reason = reason
        msg = f"training diverged at epoch {epoch}, step {step}"
        super().__init__(msg + (f": {reason}" if reason else ""))


class Strategy(enum.Enum):
    """Batch-partitioning strategies for multi-session training."""

    RANDOM = "random"
    SEQUENTIAL = "sequential"
    RANDOM_SESSION = "random_session"

    @classmethod
    def from_name(cls, name) -> "Strategy":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {"randomsession": "random_session"}
        key = aliases.get(key, key)
        for member in cls:
            if member.value == key:
                return member
        raise HarnessError(f"unknown strategy {name!r}; expected one of {[m.value for m in cls]}")


@dataclass
class TrainConfig:
    """Optimization settings shared by all experiments.

    ``epochs`` defaults to the single-session budget (30); multi-session
    protocols use 50 via :meth:`multi_session`.  A zero-epoch run is allowed
    and returns the untrained baseline.  ``stride`` defaults to half the
    window length for training; evaluation windows always tile without
    overlap.  ``stop_r2`` enables early stopping once the held-out score
    reaches the given value, which never changes which epochs ran, only how
    many.
    """

    epochs: int = 30
    learning_rate: float = 1e-3
    batch_size: int = 16
    window_bins: int = 128
    stride: int | None = None
    strategy: Strategy = Strategy.RANDOM
    seed: int = 0
    stop_r2: float | None = None
    max_retries: int = 3
    finetune_epochs: int = 5
    increment_s: float = 10.0
    aggregate: str = "mean_axes"

    @property
    def train_stride(self) -> int:
        return self.stride if self.stride is not None else max(1, self.window_bins // 2)

    def validate(self) -> None:
        if self.epochs < 0:
            raise HarnessError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise HarnessError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.window_bins < 1:
            raise HarnessError(f"window_bins must be >= 1, got {self.window_bins}")
        if self.stride is not None and self.stride < 1:
            raise HarnessError(f"stride must be >= 1, got {self.stride}")
        if self.learning_rate <= 0:
            raise HarnessError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.max_retries < 0:
            raise HarnessError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.finetune_epochs < 1:
            raise HarnessError(f"finetune_epochs must be >= 1, got {self.finetune_epochs}")
        if self.increment_s <= 0:
            raise HarnessError(f"increment_s must be positive, got {self.increment_s}")
        if self.aggregate not in ("mean_axes", "stacked"):
            raise HarnessError(f"aggregate must be 'mean_axes' or 'stacked', got {self.aggregate!r}")

    @classmethod
    def single_session(cls, **overrides) -> "TrainConfig":
        return cls(**{"epochs": 30, **overrides})

    @classmethod
    def multi_session(cls, **overrides) -> "TrainConfig":
        return cls(**{"epochs": 50, **overrides})


# -- batches and scheduling ---------------------------------------------------------


@dataclass
class Batch:
    """One optimizer step worth of stacked windows."""

    inputs: np.ndarray  # (B, S, C) float32
    targets: np.ndarray  # (B, S, 2) float32
    tags: tuple


@dataclass
class SessionBatches:
    """A session's chronological batch list plus its identity."""

    session_id: str
    date_index: int
    batches: list


def session_batches(windows: WindowSet, batch_size: int) -> list:
    """Chunk chronological windows into consecutive fixed-size batches."""
    if batch_size < 1:
        raise HarnessError(f"batch_size must be >= 1, got {batch_size}")
    out = []
    for lo in range(0, len(windows), batch_size):
        hi = min(lo + batch_size, len(windows))
        out.append(
            Batch(
                inputs=windows.inputs[lo:hi],
                targets=windows.targets[lo:hi],
                tags=tuple(windows.tags[lo:hi]),
            )
        )
    return out


def schedule_batches(sessions: list, strategy: Strategy, seed) -> list:
    """Order the per-session batch lists for one epoch.

    random: a seeded uniform permutation of the union of all batches.
    sequential: sessions in ascending date_index, chronological inside each.
    random_session: seeded permutation of the session order, chronological
    batches inside each session.
    """
    strategy = Strategy.from_name(strategy)
    if not sessions:
        raise ScheduleError("no sessions to schedule")
    for sess in sessions:
        if not sess.batches:
            raise ScheduleError(f"session {sess.session_id!r} contributed no batches")
    if strategy is Strategy.RANDOM:
        union = [b for sess in sessions for b in sess.batches]
        order = np.random.default_rng(seed).permutation(len(union))
        return [union[i] for i in order]
    if strategy is Strategy.SEQUENTIAL:
        ordered = sorted(sessions, key=lambda s: (s.date_index, s.session_id))
        return [b for sess in ordered for b in sess.batches]
    order = np.random.default_rng(seed).permutation(len(sessions))
    return [b for i in order for b in sessions[i].batches]


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error over every output element of the batch."""
    target_t = Tensor(np.asarray(target, dtype=pred.data.dtype))
    diff = pred - target_t
    return tensor_mean(diff * diff)


def audit_disjoint_windows(train_tags, test_tags, length: int) -> None:
    """Prove no training window shares a bin with any evaluation window."""
    starts_by_session: dict = {}
    for tag in train_tags:
        starts_by_session.setdefault((tag.session_id, tag.date_index), []).append(tag.start_bin)
    sorted_starts = {k: np.sort(np.asarray(v)) for k, v in starts_by_session.items()}
    for tag in test_tags:
        arr = sorted_starts.get((tag.session_id, tag.date_index))
        if arr is None:
            continue
        # windows [t, t+L) and [s, s+L) overlap iff s-L < t < s+L
        i = int(np.searchsorted(arr, tag.start_bin - length, side="right"))
        if i < arr.size and arr[i] < tag.start_bin + length:
            raise HarnessError(
                f"train window at bin {int(arr[i])} overlaps evaluation window at bin "
                f"{tag.start_bin} in session {tag.session_id!r}"
            )


# -- core fitting loop ----------------------------------------------------------------


def _fit(
    model_cfg: ModelConfig,
    params: dict,
    sessions: list,
    train_cfg: TrainConfig,
    *,
    lr: float,
    epochs: int | None = None,
    eval_r2=None,
    seed_extra: tuple = (),
) -> tuple[list, int]:
    """Run the epoch loop in place; returns (per-epoch mean loss, epochs run)."""
    epochs = train_cfg.epochs if epochs is None else epochs
    adam = AdamState(learning_rate=lr)
    drop_rng = np.random.default_rng([train_cfg.seed, _SALT_DROPOUT, *seed_extra])
    needs_dropout = model_cfg.dropout_rate > 0.0
    history: list[float] = []
    for epoch in range(epochs):
        ordered = schedule_batches(
            sessions, train_cfg.strategy, [train_cfg.seed, _SALT_SCHEDULE, *seed_extra, epoch]
        )
        losses = []
        for step, batch in enumerate(ordered):
            try:
                pred = forward(
                    params,
                    batch.inputs,
                    model_cfg,
                    train=True,
                    rng=drop_rng if needs_dropout else None,
                )
                loss = mse_loss(pred, batch.targets)
                if not np.isfinite(loss.data):
                    raise NonFiniteError(f"training loss is {float(loss.data)!r}")
                loss.backward()
                adam_step(params, adam)
            except NonFiniteError as err:
                zero_grads(params)
                raise DivergenceError(epoch=epoch, step=step, reason=str(err)) from err
            losses.append(float(loss.data))
        history.append(float(np.mean(losses)))
        if eval_r2 is not None and train_cfg.stop_r2 is not None:
            if eval_r2(params) >= train_cfg.stop_r2:
                return history, epoch + 1
    return history, epochs


def _fit_with_retries(model_cfg, sessions, train_cfg, eval_r2=None):
    """Init + fit, halving the learning rate on divergence (transformer only)."""
    lr = train_cfg.learning_rate
    attempt = 0
    while True:
        params = init_params(model_cfg, seed=[train_cfg.seed, _SALT_INIT, attempt])
        try:
            history, epochs_run = _fit(
                model_cfg, params, sessions, train_cfg, lr=lr, eval_r2=eval_r2, seed_extra=(attempt,)
            )
            return params, history, epochs_run, attempt, lr
        except DivergenceError:
            attempt += 1
            if model_cfg.kind != "transformer" or attempt > train_cfg.max_retries:
                raise
            lr *= 0.5


def _session_hash(prep: PreparedSession) -> str:
    h = hashlib.sha256()
    h.update(prep.session_id.encode())
    h.update(str(prep.date_index).encode())
    h.update(np.ascontiguousarray(prep.x).tobytes())
    h.update(np.ascontiguousarray(prep.y).tobytes())
    return h.hexdigest()


def _make_eval_fn(model_cfg, norm_stats, eval_windows, aggregate):
    def eval_r2(params) -> float:
        ckpt = Checkpoint(config=model_cfg, params=params, norm_stats=norm_stats)
        return evaluate(ckpt, eval_windows, aggregate=aggregate).r2_avg

    return eval_r2


# -- experiment protocols ---------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    record: MetricsRecord
    history: list  # mean training loss per epoch
    epochs_run: int
    retries: int
    learning_rate: float
    per_session: list = field(default_factory=list)  # multi-session only


def _check_channels(model_cfg: ModelConfig, prep: PreparedSession) -> None:
    if model_cfg.input_channels != prep.x.shape[1]:
        raise HarnessError(
            f"model expects {model_cfg.input_channels} channels, session "
            f"{prep.session_id!r} provides {prep.x.shape[1]}"
        )


def train_single_session(
    prep: PreparedSession,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    *,
    experiment: str = "single_session",
) -> TrainResult:
    """Fit one model on the first 80% of a session, score the last 20%."""
    model_cfg.validate()
    train_cfg.validate()
    _check_channels(model_cfg, prep)
    s = train_cfg.window_bins
    tw = train_windows(prep, s, train_cfg.train_stride)
    ev = test_windows(prep, s)
    if len(tw) == 0 or len(ev) == 0:
        raise HarnessError(
            f"session {prep.session_id!r} is too short for window length {s} "
            f"({len(tw)} train / {len(ev)} evaluation windows)"
        )
    audit_disjoint_windows(tw.tags, ev.tags, s)

    sessions = [SessionBatches(prep.session_id, prep.date_index, session_batches(tw, train_cfg.batch_size))]
    norm_stats = {prep.session_id: prep.stats}
    eval_r2 = (
        _make_eval_fn(model_cfg, norm_stats, ev, train_cfg.aggregate)
        if train_cfg.stop_r2 is not None
        else None
    )
    params, history, epochs_run, retries, lr = _fit_with_retries(model_cfg, sessions, train_cfg, eval_r2)

    ckpt = Checkpoint(
        config=model_cfg,
        params=params,
        norm_stats=norm_stats,
        provenance={
            "experiment": experiment,
            "seed": train_cfg.seed,
            "data_hash": _session_hash(prep),
            "epochs_run": epochs_run,
            "learning_rate": lr,
            "retries": retries,
            "strategy": train_cfg.strategy.value,
            "window_bins": s,
        },
    )
    record = evaluate(ckpt, ev, experiment=experiment, seed=train_cfg.seed, aggregate=train_cfg.aggregate)
    return TrainResult(
        checkpoint=ckpt,
        record=record,
        history=history,
        epochs_run=epochs_run,
        retries=retries,
        learning_rate=lr,
    )


def train_multi_session(
    preps: list,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    *,
    experiment: str = "multi_session",
) -> TrainResult:
    """Fit one model across several sessions under the configured strategy."""
    model_cfg.validate()
    train_cfg.validate()
    if len(preps) < 2:
        raise HarnessError(f"multi-session training needs >= 2 sessions, got {len(preps)}")
    ids = [p.session_id for p in preps]
    if len(set(ids)) != len(ids):
        raise HarnessError(f"duplicate session ids in multi-session training: {sorted(ids)}")

    s = train_cfg.window_bins
    sessions = []
    eval_sets = []
    norm_stats = {}
    for prep in preps:
        _check_channels(model_cfg, prep)
        tw = train_windows(prep, s, train_cfg.train_stride)
        ev = test_windows(prep, s)
        if len(tw) == 0 or len(ev) == 0:
            raise HarnessError(f"session {prep.session_id!r} is too short for window length {s}")
        audit_disjoint_windows(tw.tags, ev.tags, s)
        sessions.append(
            SessionBatches(prep.session_id, prep.date_index, session_batches(tw, train_cfg.batch_size))
        )
        eval_sets.append(ev)
        norm_stats[prep.session_id] = prep.stats
    pooled_eval = concat_window_sets(eval_sets)

    eval_r2 = (
        _make_eval_fn(model_cfg, norm_stats, pooled_eval, train_cfg.aggregate)
        if train_cfg.stop_r2 is not None
        else None
    )
    params, history, epochs_run, retries, lr = _fit_with_retries(model_cfg, sessions, train_cfg, eval_r2)

    joined_hash = hashlib.sha256(
        "".join(_session_hash(p) for p in sorted(preps, key=lambda p: p.session_id)).encode()
    ).hexdigest()
    ckpt = Checkpoint(
        config=model_cfg,
        params=params,
        norm_stats=norm_stats,
        provenance={
            "experiment": experiment,
            "seed": train_cfg.seed,
            "data_hash": joined_hash,
            "epochs_run": epochs_run,
            "learning_rate": lr,
            "retries": retries,
            "strategy": train_cfg.strategy.value,
            "window_bins": s,
        },
    )
    pooled = evaluate(
        ckpt, pooled_eval, experiment=experiment, seed=train_cfg.seed, aggregate=train_cfg.aggregate
    )
    per_session = [
        evaluate(ckpt, ev, experiment=experiment, seed=train_cfg.seed, aggregate=train_cfg.aggregate)
        for ev in eval_sets
    ]
    return TrainResult(
        checkpoint=ckpt,
        record=pooled,
        history=history,
        epochs_run=epochs_run,
        retries=retries,
        learning_rate=lr,
        per_session=per_session,
    )


@dataclass
class FinetuneResult:
    checkpoint: Checkpoint
    record: MetricsRecord  # final scores with zero_shot_r2 and recovery_s filled in
    zero_shot_r2: float
    curve: list  # [(cumulative seconds of calibration data, r2_avg)]
    histories: list  # per-increment loss history


def finetune_new_session(
    base: Checkpoint,
    new_prep: PreparedSession,
    train_cfg: TrainConfig,
    *,
    increment_s: float | None = None,
    max_increments: int | None = None,
    threshold: float = 0.7,
    experiment: str = "finetune",
) -> FinetuneResult:
    """Zero-shot score, then fine-tune on growing slices of calibration data.

    Each increment appends ``increment_s`` seconds of the new session's
    training bins, fine-tunes every parameter for ``finetune_epochs`` epochs
    over the accumulated slice (fresh optimizer state per increment), and
    scores the held-out bins, producing the recovery curve.
    """
    train_cfg.validate()
    _check_channels(base.config, new_prep)
    increment = train_cfg.increment_s if increment_s is None else float(increment_s)
    if increment <= 0:
        raise HarnessError(f"increment_s must be positive, got {increment}")

    s = train_cfg.window_bins
    ev = test_windows(new_prep, s)
    if len(ev) == 0:
        raise HarnessError(f"session {new_prep.session_id!r} is too short for window length {s}")
    norm_stats = dict(base.norm_stats)
    norm_stats[new_prep.session_id] = new_prep.stats

    params = {name: Tensor(t.data.copy(), requires_grad=True) for name, t in base.params.items()}

    def current_ckpt() -> Checkpoint:
        return Checkpoint(config=base.config, params=params, norm_stats=norm_stats)

    zero_shot = evaluate(
        current_ckpt(), ev, experiment=experiment, seed=train_cfg.seed, aggregate=train_cfg.aggregate
    )

    bins_per_inc = int(round(increment * 1000.0 / new_prep.bin_ms))
    n_train_bins = new_prep.train.stop
    total_increments = n_train_bins // bins_per_inc
    if total_increments == 0:
        raise HarnessError(
            f"session {new_prep.session_id!r} provides {n_train_bins * new_prep.bin_ms / 1000.0:g} s "
            f"of calibration data, shorter than one {increment:g} s increment"
        )
    if max_increments is not None:
        total_increments = min(total_increments, max_increments)

    curve: list[tuple[float, float]] = []
    histories: list[list[float]] = []
    final = zero_shot
    for k in range(1, total_increments + 1):
        cut = k * bins_per_inc
        windows = make_windows(
            new_prep.x[:cut],
            new_prep.y[:cut],
            s,
            train_cfg.train_stride,
            session_id=new_prep.session_id,
            date_index=new_prep.date_index,
            start_offset=0,
        )
        if len(windows) == 0:
            raise HarnessError(
                f"{k * increment:g} s of calibration data is shorter than one window of {s} bins"
            )
        audit_disjoint_windows(windows.tags, ev.tags, s)
        sessions = [
            SessionBatches(
                new_prep.session_id, new_prep.date_index, session_batches(windows, train_cfg.batch_size)
            )
        ]
        history, _ = _fit(
            base.config,
            params,
            sessions,
            train_cfg,
            lr=train_cfg.learning_rate,
            epochs=train_cfg.finetune_epochs,
            seed_extra=(k,),
        )
        histories.append(history)
        final = evaluate(
            current_ckpt(), ev, experiment=experiment, seed=train_cfg.seed, aggregate=train_cfg.aggregate
        )
        curve.append((k * increment, final.r2_avg))

    recovery = recovery_time(curve, threshold=threshold) if curve else None
    record = replace(final, zero_shot_r2=zero_shot.r2_avg, recovery_s=recovery)
    ckpt = Checkpoint(
        config=base.config,
        params=params,
        norm_stats=norm_stats,
        provenance={
            **base.provenance,
            "experiment": experiment,
            "seed": train_cfg.seed,
            "finetune_session": new_prep.session_id,
            "finetune_data_hash": _session_hash(new_prep),
            "increment_s": increment,
            "increments_run": total_increments,
            "finetune_epochs": train_cfg.finetune_epochs,
        },
    )
    return FinetuneResult(
        checkpoint=ckpt,
        record=record,
        zero_shot_r2=zero_shot.r2_avg,
        curve=curve,
        histories=histories,
    )


@dataclass
class ScalePoint:
    """One sweep size: depth, parameter count, and across-seed statistics."""

    layers: int
    params: int
    r2_mean: float  # nan when no seed converged
    r2_stderr: float
    n_converged: int
    n_seeds: int

    @property
    def converged(self) -> bool:
        return self.n_converged > 0


def scaling_sweep(
    base_cfg: ModelConfig,
    layer_counts,
    preps: list,
    train_cfg: TrainConfig,
    seeds=(0, 1, 2),
    *,
    experiment: str = "scaling",
) -> list:
    """Train at each depth with several seeds; divergence marks the size, not a crash."""
    layer_counts = [int(n) for n in layer_counts]
    if not layer_counts:
        raise HarnessError("layer_counts is empty")
    if any(b <= a for a, b in zip(layer_counts, layer_counts[1:])):
        raise HarnessError(f"layer_counts must be strictly ascending, got {layer_counts}")
    if not preps:
        raise HarnessError("scaling sweep needs at least one session")
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise HarnessError("scaling sweep needs at least one seed")

    from .backbones import param_count  # local import keeps module init light

    points = []
    for n_layers in layer_counts:
        cfg_n = replace(base_cfg, layers=n_layers)
        cfg_n.validate()
        scores = []
        for seed in seeds:
            tc = replace(train_cfg, seed=seed)
            try:
                if len(preps) == 1:
                    result = train_single_session(preps[0], cfg_n, tc, experiment=experiment)
                else:
                    result = train_multi_session(preps, cfg_n, tc, experiment=experiment)
                scores.append(result.record.r2_avg)
            except DivergenceError:
                continue
        if scores:
            arr = np.asarray(scores, dtype=np.float64)
            stderr = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
            points.append(
                ScalePoint(
                    layers=n_layers,
                    params=param_count(cfg_n),
                    r2_mean=float(arr.mean()),
                    r2_stderr=stderr,
                    n_converged=len(scores),
                    n_seeds=len(seeds),
                )
            )
        else:
            points.append(
                ScalePoint(
                    layers=n_layers,
                    params=param_count(cfg_n),
                    r2_mean=float("nan"),
                    r2_stderr=float("nan"),
                    n_converged=0,
                    n_seeds=len(seeds),
                )
            )
    return points


__all__ = [
    "Strategy",
    "TrainConfig",
    "Batch",
    "SessionBatches",
    "HarnessError",
    "ScheduleError",
    "DivergenceError",
    "TrainResult",
    "FinetuneResult",
    "ScalePoint",
    "session_batches",
    "schedule_batches",
    "mse_loss",
    "audit_disjoint_windows",
    "train_single_session",
    "train_multi_session",
    "finetune_new_session",
    "scaling_sweep",
]
