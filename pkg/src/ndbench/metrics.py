"""Decoding metrics: R², window-set evaluation, latency, and recovery time.

Evaluation always happens in physical units: predictions come out of the
model in normalized space, get de-normalized with the per-session statistics
stored in the checkpoint, and are concatenated chronologically before the
per-axis coefficient of determination is computed over the whole held-out
signal.  Latency is reported as a distribution (median and 95th percentile
over repeated single-window forward passes), never a single-shot number.
"""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .backbones import param_count, predict
from .checkpoint import Checkpoint
from .datapipe import WindowSet, denormalize


class UndefinedR2Error(ValueError):
    """R² is undefined because the target signal is constant (TSS == 0)."""


class EvaluationError(ValueError):
    """An evaluation request is structurally invalid (empty, overlapping...)."""


class _NotRecovered:
    """Sentinel for a recovery curve that never reaches the threshold."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NotRecovered"


NOT_RECOVERED = _NotRecovered()

# The exact column set and order of every metrics CSV this package writes.
METRICS_COLUMNS = (
    "experiment",
    "model",
    "session",
    "date_index",
    "r2_x",
    "r2_y",
    "r2_avg",
    "params",
    "latency_median_s",
    "latency_p95_s",
    "recovery_s",
    "zero_shot_r2",
    "seed",
)


# -- coefficient of determination --------------------------------------------------


def r_squared(y, y_hat) -> float:
    """1 - RSS/TSS over a single axis; negative for worse-than-mean predictors."""
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.shape != y_hat.shape:
        raise ValueError(f"target and prediction disagree on length: {y.shape} vs {y_hat.shape}")
    if y.size < 2:
        raise ValueError(f"r_squared needs at least 2 samples, got {y.size}")
    tss = float(np.sum((y - y.mean()) ** 2))
    if tss == 0.0:
        raise UndefinedR2Error("target signal is constant; R² is undefined (TSS == 0)")
    rss = float(np.sum((y - y_hat) ** 2))
    return 1.0 - rss / tss


# -- records and CSV I/O ------------------------------------------------------------


@dataclass
class MetricsRecord:
    """One row of the metrics table; optional fields stay None when unmeasured."""

    experiment: str
    model: str
    session: str
    date_index: int
    r2_x: float
    r2_y: float
    r2_avg: float
    params: int
    latency_median_s: float | None = None
    latency_p95_s: float | None = None
    recovery_s: object = None  # seconds, NOT_RECOVERED, or None when unmeasured
    zero_shot_r2: float | None = None
    seed: int = 0


def _format_cell(value) -> str:
    if value is None:
        return ""
    if value is NOT_RECOVERED:
        return "not_recovered"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_cell(column: str, text: str):
    if text == "":
        return None
    if column in ("experiment", "model", "session"):
        return text
    if column in ("date_index", "params", "seed"):
        return int(text)
    if column == "recovery_s" and text == "not_recovered":
        return NOT_RECOVERED
    return float(text)


def write_metrics_csv(records, path) -> Path:
    """Write records with the exact documented column order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for rec in records:
            writer.writerow([_format_cell(getattr(rec, col)) for col in METRICS_COLUMNS])
    return path


def read_metrics_csv(path) -> list:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != METRICS_COLUMNS:
            raise EvaluationError(f"{path}: not a metrics CSV (unexpected columns {header})")
        records = []
        for row in reader:
            kwargs = {col: _parse_cell(col, cell) for col, cell in zip(METRICS_COLUMNS, row)}
            records.append(MetricsRecord(**kwargs))
    return records


assert tuple(f.name for f in fields(MetricsRecord)) == METRICS_COLUMNS


# -- evaluation over window sets ------------------------------------------------------


def _sorted_window_order(windows: WindowSet) -> list:
    return sorted(
        range(len(windows)),
        key=lambda i: (
            windows.tags[i].date_index,
            windows.tags[i].session_id,
            windows.tags[i].start_bin,
        ),
    )


def _audit_no_overlap(windows: WindowSet, order) -> None:
    last_seen = {}
    for i in order:
        tag = windows.tags[i]
        key = (tag.session_id, tag.date_index)
        prev = last_seen.get(key)
        if prev is not None and tag.start_bin - prev < windows.length:
            raise EvaluationError(
                f"evaluation windows overlap in session {tag.session_id!r}: "
                f"starts {prev} and {tag.start_bin} with length {windows.length}"
            )
        last_seen[key] = tag.start_bin


def evaluate(
    ckpt: Checkpoint,
    windows: WindowSet,
    *,
    experiment: str = "eval",
    seed: int = 0,
    aggregate: str = "mean_axes",
    batch_size: int = 32,
) -> MetricsRecord:
    """Score a checkpoint on non-overlapping evaluation windows.

    Predictions are concatenated chronologically, de-normalized with each
    window's own session statistics, and scored per axis over the full
    concatenated signal.  ``aggregate`` picks how the two axes combine into
    r2_avg: ``mean_axes`` (default) averages the per-axis scores, ``stacked``
    computes a single R² over the stacked x/y signal.
    """
    if aggregate not in ("mean_axes", "stacked"):
        raise ValueError(f"aggregate must be 'mean_axes' or 'stacked', got {aggregate!r}")
    if len(windows) == 0:
        raise EvaluationError("no evaluation windows")
    order = _sorted_window_order(windows)
    _audit_no_overlap(windows, order)

    missing = sorted({t.session_id for t in windows.tags} - set(ckpt.norm_stats))
    if missing:
        raise EvaluationError(f"checkpoint has no normalization stats for session(s): {missing}")

    pred_parts = []
    true_parts = []
    for lo in range(0, len(order), batch_size):
        chunk = order[lo : lo + batch_size]
        batch_pred = predict(ckpt.params, windows.inputs[chunk], ckpt.config)
        for j, i in enumerate(chunk):
            stats = ckpt.norm_stats[windows.tags[i].session_id]
            pred_parts.append(denormalize(batch_pred[j].astype(np.float64), stats.vel_mean, stats.vel_std))
            true_parts.append(
                denormalize(windows.targets[i].astype(np.float64), stats.vel_mean, stats.vel_std)
            )
    pred = np.concatenate(pred_parts, axis=0)
    true = np.concatenate(true_parts, axis=0)

    r2_x = r_squared(true[:, 0], pred[:, 0])
    r2_y = r_squared(true[:, 1], pred[:, 1])
    if aggregate == "mean_axes":
        r2_avg = (r2_x + r2_y) / 2.0
    else:
        r2_avg = r_squared(
            np.concatenate([true[:, 0], true[:, 1]]), np.concatenate([pred[:, 0], pred[:, 1]])
        )

    session_ids = sorted({t.session_id for t in windows.tags})
    date_indices = sorted({t.date_index for t in windows.tags})
    return MetricsRecord(
        experiment=experiment,
        model=ckpt.config.kind,
        session=session_ids[0] if len(session_ids) == 1 else "pooled",
        date_index=date_indices[0] if len(date_indices) == 1 else -1,
        r2_x=r2_x,
        r2_y=r2_y,
        r2_avg=r2_avg,
        params=param_count(ckpt.config),
        seed=seed,
    )


# -- latency -------------------------------------------------------------------------


@dataclass
class LatencyReport:
    """Wall-clock distribution for single-window forward passes."""

    s: int
    window_ms: int
    samples: int
    median_s: float
    p95_s: float
    threads: int = 1


def bench_latency(ckpt: Checkpoint, s: int, warmup: int = 10, samples: int = 100, seed: int = 0) -> LatencyReport:
    """Time the full forward pass on one fixed random window of length ``s``.

    The warmup iterations never enter the reported distribution; timing wraps
    the whole window forward (input projection through output head) with a
    monotonic clock.
    """
    if s < 1 or samples < 1 or warmup < 0:
        raise ValueError("need s >= 1, samples >= 1, warmup >= 0")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, s, ckpt.config.input_channels)).astype(np.float32)
    for _ in range(warmup):
        predict(ckpt.params, x, ckpt.config)
    times = np.empty(samples, dtype=np.float64)
    for i in range(samples):
        t0 = time.perf_counter()
        predict(ckpt.params, x, ckpt.config)
        times[i] = time.perf_counter() - t0
    return LatencyReport(
        s=s,
        window_ms=s * 10,
        samples=samples,
        median_s=float(np.median(times)),
        p95_s=float(np.percentile(times, 95)),
        threads=int(os.environ.get("NDBENCH_THREADS", "1")),
    )


@dataclass
class ComplexityReport:
    """Latency at several window lengths plus the long/short cost ratio."""

    s_list: tuple
    reports: dict  # {s: LatencyReport}
    ratio: float  # median(max S) / median(min S)


def complexity_probe(ckpt: Checkpoint, s_list=(128, 1024), warmup: int = 10, samples: int = 100, seed: int = 0) -> ComplexityReport:
    """Measure how latency grows with window length for one model."""
    s_list = tuple(int(s) for s in s_list)
    if len(s_list) < 2:
        raise ValueError("complexity probe needs at least two window lengths")
    if list(s_list) != sorted(s_list):
        raise ValueError(f"window lengths must be ascending, got {s_list}")
    reports = {s: bench_latency(ckpt, s, warmup=warmup, samples=samples, seed=seed) for s in s_list}
    ratio = reports[s_list[-1]].median_s / reports[s_list[0]].median_s
    return ComplexityReport(s_list=s_list, reports=reports, ratio=ratio)


# -- recovery time ---------------------------------------------------------------------


def recovery_time(curve, threshold: float = 0.7):
    """Smallest seconds-of-data whose R² reaches the threshold.

    ``curve`` is a list of (seconds, r2) pairs with strictly increasing
    seconds; returns NOT_RECOVERED when no point reaches the threshold.
    """
    curve = list(curve)
    if not curve:
        raise EvaluationError("empty recovery curve")
    seconds = [float(s) for s, _ in curve]
    if any(b <= a for a, b in zip(seconds, seconds[1:])):
        raise EvaluationError(f"recovery curve seconds must be strictly increasing, got {seconds}")
    for s, r2 in curve:
        if not math.isnan(r2) and r2 >= threshold:
            return float(s)
    return NOT_RECOVERED


__all__ = [
    "METRICS_COLUMNS",
    "NOT_RECOVERED",
    "UndefinedR2Error",
    "EvaluationError",
    "MetricsRecord",
    "LatencyReport",
    "ComplexityReport",
    "r_squared",
    "evaluate",
    "bench_latency",
    "complexity_probe",
    "recovery_time",
    "write_metrics_csv",
    "read_metrics_csv",
]
