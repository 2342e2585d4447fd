"""Data pipeline: spike binning, velocity targets, windows, synthetic sessions.

A recording session pairs per-channel spike event times with a 250 Hz
kinematics table (finger, cursor, and target positions).  The pipeline turns
that into aligned model inputs and targets:

* spike counts in half-open 10 ms bins, the trailing partial bin dropped;
* cursor (or finger) velocity from positions linearly upsampled to 1 kHz,
  differentiated with central differences, then averaged per bin;
* Gaussian smoothing along time with a truncated, renormalized kernel;
* per-channel z-scoring with statistics fit on the training bins only;
* fixed-length windows cut at a configurable stride.

Sessions round-trip through an on-disk bundle (``ndbench-session-v1``): a
``manifest.json`` next to ``spikes.csv`` (``channel,time_s``) and
``kinematics.csv`` (one row per 250 Hz sample).  A synthetic generator with
cosine-tuned Poisson channels provides ground-truth-known sessions, with
optional day-to-day drift (rate decay plus channel permutation).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.ndimage import convolve1d

SESSION_FORMAT = "ndbench-session-v1"
KIN_RATE_HZ = 250
INTERP_RATE_HZ = 1000
BIN_MS = 10
KIN_COLUMNS = ("finger_x", "finger_y", "cursor_x", "cursor_y", "target_x", "target_y")


class SessionFormatError(ValueError):
    """A session bundle or in-memory session violates the format contract."""


class ManifestError(SessionFormatError):
    """manifest.json is missing, unreadable, or inconsistent with the data."""


class SpikeOrderError(SessionFormatError):
    """Spike times within a channel are not strictly ascending."""


class SampleCountError(SessionFormatError):
    """The kinematics row count disagrees with the declared duration."""


# -- session containers --------------------------------------------------------


@dataclass
class RawSession:
    """One recording: per-channel spike times plus 250 Hz kinematics."""

    session_id: str
    date_index: int
    duration_s: float
    spikes: list  # list of float64 arrays, one per channel, strictly ascending
    kin: np.ndarray  # (n_samples, 6) float64, columns KIN_COLUMNS

    @property
    def channels(self) -> int:
        return len(self.spikes)

    def validate(self) -> None:
        n_expected = round(self.duration_s * KIN_RATE_HZ)
        if self.kin.ndim != 2 or self.kin.shape[1] != len(KIN_COLUMNS):
            raise SessionFormatError(f"kinematics must be (n, {len(KIN_COLUMNS)}), got {self.kin.shape}")
        if self.kin.shape[0] != n_expected:
            raise SampleCountError(
                f"session {self.session_id}: {self.kin.shape[0]} kinematic samples, "
                f"expected {n_expected} for {self.duration_s} s at {KIN_RATE_HZ} Hz"
            )
        for ch, times in enumerate(self.spikes):
            if times.size == 0:
                continue
            if times[0] < 0.0 or times[-1] >= self.duration_s:
                raise SessionFormatError(
                    f"session {self.session_id}: channel {ch} has spike times outside [0, {self.duration_s})"
                )
            if np.any(np.diff(times) <= 0.0):
                raise SpikeOrderError(f"session {self.session_id}: channel {ch} spike times not strictly ascending")


@dataclass
class BinnedSession:
    """Aligned per-bin spike counts and velocity targets."""

    session_id: str
    date_index: int
    counts: np.ndarray  # (T, C) float64
    velocity: np.ndarray | None = None  # (T, 2) float64
    bin_ms: int = BIN_MS

    @property
    def n_bins(self) -> int:
        return self.counts.shape[0]


@dataclass
class NormStats:
    """Z-scoring statistics fit on training bins."""

    count_mean: np.ndarray
    count_std: np.ndarray
    vel_mean: np.ndarray
    vel_std: np.ndarray

    def to_dict(self) -> dict:
        return {
            "count_mean": self.count_mean.tolist(),
            "count_std": self.count_std.tolist(),
            "vel_mean": self.vel_mean.tolist(),
            "vel_std": self.vel_std.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(
            count_mean=np.asarray(d["count_mean"], dtype=np.float64),
            count_std=np.asarray(d["count_std"], dtype=np.float64),
            vel_mean=np.asarray(d["vel_mean"], dtype=np.float64),
            vel_std=np.asarray(d["vel_std"], dtype=np.float64),
        )


@dataclass(frozen=True)
class WindowTag:
    session_id: str
    date_index: int
    start_bin: int


@dataclass
class WindowSet:
    """Stacked fixed-length training or evaluation windows."""

    inputs: np.ndarray  # (n, S, C) float32
    targets: np.ndarray  # (n, S, 2) float32
    tags: list
    length: int
    stride: int

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def __getitem__(self, i: int):
        return self.inputs[i], self.targets[i]


# -- binning and velocity -------------------------------------------------------


def n_bins_for(duration_s: float, bin_ms: int = BIN_MS) -> int:
    return int(math.floor(duration_s * 1000.0 / bin_ms + 1e-9))


def bin_spikes(raw: RawSession, bin_ms: int = BIN_MS) -> np.ndarray:
    """Count spikes per channel in half-open ``[t, t + bin)`` bins.

    The trailing partial bin is dropped; events falling inside it are
    discarded.  Returns a (T, C) float64 array.
    """
    t_bins = n_bins_for(raw.duration_s, bin_ms)
    counts = np.zeros((t_bins, raw.channels), dtype=np.float64)
    scale = 1000.0 / bin_ms
    for ch, times in enumerate(raw.spikes):
        if times.size == 0:
            continue
        if times[0] < 0.0 or times[-1] >= raw.duration_s:
            raise SessionFormatError(f"channel {ch}: spike time outside [0, {raw.duration_s})")
        # The small offset keeps decimal times written as text (e.g. 0.01)
        # in the bin they name; all real spike times sit far from edges.
        idx = np.floor(times * scale + 1e-9).astype(np.int64)
        idx = idx[idx < t_bins]
        np.add.at(counts[:, ch], idx, 1.0)
    return counts


def interpolate_positions(positions: np.ndarray) -> np.ndarray:
    """Linearly upsample 250 Hz positions to the 1 kHz grid they span."""
    n = positions.shape[0]
    if n < 2:
        raise SessionFormatError("need at least two kinematic samples to interpolate")
    ratio = INTERP_RATE_HZ // KIN_RATE_HZ
    m = ratio * (n - 1) + 1
    t_src = np.arange(n, dtype=np.float64) / KIN_RATE_HZ
    t_dst = np.arange(m, dtype=np.float64) / INTERP_RATE_HZ
    out = np.empty((m, positions.shape[1]), dtype=np.float64)
    for col in range(positions.shape[1]):
        out[:, col] = np.interp(t_dst, t_src, positions[:, col])
    return out


def _central_differences(x: np.ndarray, rate_hz: float) -> np.ndarray:
    """Differentiate samples along axis 0; one-sided at the endpoints."""
    v = np.empty_like(x)
    v[1:-1] = (x[2:] - x[:-2]) * (rate_hz / 2.0)
    v[0] = (x[1] - x[0]) * rate_hz
    v[-1] = (x[-1] - x[-2]) * rate_hz
    return v


def derive_velocity(raw: RawSession, target: str = "cursor", bin_ms: int = BIN_MS) -> np.ndarray:
    """Per-bin mean velocity of the cursor (or finger) in units per second.

    Positions are upsampled to 1 kHz with linear interpolation and
    differentiated with central differences (one-sided at the ends); each
    10 ms bin averages its ten 1 kHz velocity samples, fewer in the last
    bin if the grid ends early.
    """
    if target not in ("cursor", "finger"):
        raise ValueError(f"velocity target must be 'cursor' or 'finger', got {target!r}")
    cols = (2, 3) if target == "cursor" else (0, 1)
    pos = raw.kin[:, cols]
    pos_1k = interpolate_positions(pos)
    vel_1k = _central_differences(pos_1k, INTERP_RATE_HZ)
    t_bins = n_bins_for(raw.duration_s, bin_ms)
    per_bin = bin_ms  # 1 kHz samples per bin
    out = np.empty((t_bins, 2), dtype=np.float64)
    for t in range(t_bins):
        chunk = vel_1k[t * per_bin : (t + 1) * per_bin]
        if chunk.shape[0] == 0:
            raise SampleCountError(f"bin {t} has no velocity samples; kinematics shorter than duration")
        out[t] = chunk.mean(axis=0)
    return out


def bin_session(raw: RawSession, target: str = "cursor", bin_ms: int = BIN_MS) -> BinnedSession:
    raw.validate()
    return BinnedSession(
        session_id=raw.session_id,
        date_index=raw.date_index,
        counts=bin_spikes(raw, bin_ms),
        velocity=derive_velocity(raw, target, bin_ms),
        bin_ms=bin_ms,
    )


# -- smoothing -------------------------------------------------------------------


def gaussian_kernel(sigma_ms: float, bin_ms: float = BIN_MS) -> np.ndarray:
    """Gaussian kernel truncated at three sigma and renormalized to sum 1."""
    if sigma_ms <= 0.0:
        return np.array([1.0])
    sigma_bins = sigma_ms / bin_ms
    radius = int(math.ceil(3.0 * sigma_bins))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma_bins) ** 2)
    return k / k.sum()


def gaussian_smooth(series: np.ndarray, sigma_ms: float, bin_ms: float = BIN_MS) -> np.ndarray:
    """Smooth along axis 0 with reflected-boundary padding; sigma 0 is a copy."""
    series = np.asarray(series, dtype=np.float64)
    if sigma_ms <= 0.0:
        return series.copy()
    kernel = gaussian_kernel(sigma_ms, bin_ms)
    return convolve1d(series, kernel, axis=0, mode="mirror")


# -- normalization ------------------------------------------------------------------


def fit_norm_stats(counts: np.ndarray, velocity: np.ndarray, train_bins: slice) -> NormStats:
    """Fit per-channel z-scoring statistics on the training bins only.

    Standard deviations are population (ddof 0) and floored at 1e-6 so a
    silent channel normalizes to zeros rather than NaNs.
    """
    c = counts[train_bins]
    v = velocity[train_bins]
    if c.shape[0] == 0:
        raise ValueError("cannot fit normalization on an empty training range")
    return NormStats(
        count_mean=c.mean(axis=0),
        count_std=np.maximum(c.std(axis=0), 1e-6),
        vel_mean=v.mean(axis=0),
        vel_std=np.maximum(v.std(axis=0), 1e-6),
    )


def normalize(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (x - mean) / std


def denormalize(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return x * std + mean


def split_train_test(n_bins: int, train_frac: float = 0.8) -> tuple[slice, slice]:
    """Chronological split: the first ``train_frac`` of bins train, the rest test."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"train_frac must be in (0, 1), got {train_frac}")
    cut = int(math.floor(n_bins * train_frac))
    return slice(0, cut), slice(cut, n_bins)


# -- windowing ------------------------------------------------------------------------


def make_windows(
    x: np.ndarray,
    y: np.ndarray,
    length: int,
    stride: int,
    session_id: str = "",
    date_index: int = 0,
    start_offset: int = 0,
) -> WindowSet:
    """Cut aligned (T, C) inputs and (T, 2) targets into windows.

    Only complete windows are kept; a tail shorter than ``length`` is
    dropped.  ``start_offset`` shifts the recorded start bins so tags stay
    absolute when windowing a slice of the session.
    """
    if length < 1 or stride < 1:
        raise ValueError("window length and stride must be positive")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"inputs and targets disagree on bins: {x.shape[0]} vs {y.shape[0]}")
    t_total = x.shape[0]
    starts = list(range(0, t_total - length + 1, stride))
    n = len(starts)
    inputs = np.empty((n, length, x.shape[1]), dtype=np.float32)
    targets = np.empty((n, length, y.shape[1]), dtype=np.float32)
    tags = []
    for i, s in enumerate(starts):
        inputs[i] = x[s : s + length]
        targets[i] = y[s : s + length]
        tags.append(WindowTag(session_id=session_id, date_index=date_index, start_bin=start_offset + s))
    return WindowSet(inputs=inputs, targets=targets, tags=tags, length=length, stride=stride)


def concat_window_sets(sets: list) -> WindowSet:
    sets = [s for s in sets if len(s) > 0]
    if not sets:
        raise ValueError("no windows to concatenate")
    length = sets[0].length
    if any(s.length != length for s in sets):
        raise ValueError("window sets disagree on window length")
    return WindowSet(
        inputs=np.concatenate([s.inputs for s in sets], axis=0),
        targets=np.concatenate([s.targets for s in sets], axis=0),
        tags=[t for s in sets for t in s.tags],
        length=length,
        stride=sets[0].stride,
    )


# -- prepared sessions -----------------------------------------------------------------


@dataclass
class PipelineConfig:
    """Knobs for turning a raw session into model-ready arrays."""

    count_sigma_ms: float = 40.0
    velocity_sigma_ms: float = 40.0
    train_frac: float = 0.8
    target: str = "cursor"
    bin_ms: int = BIN_MS


@dataclass
class PreparedSession:
    """Smoothed, z-scored arrays plus the split and the fitted statistics."""

    session_id: str
    date_index: int
    x: np.ndarray  # (T, C) normalized smoothed counts
    y: np.ndarray  # (T, 2) normalized smoothed velocity
    stats: NormStats
    train: slice
    test: slice
    bin_ms: int = BIN_MS

    @property
    def n_bins(self) -> int:
        return self.x.shape[0]


def prepare_session(raw: RawSession, cfg: PipelineConfig | None = None) -> PreparedSession:
    """Run the full pipeline: bin, smooth, split, fit stats on train, z-score."""
    cfg = cfg or PipelineConfig()
    binned = bin_session(raw, target=cfg.target, bin_ms=cfg.bin_ms)
    counts = gaussian_smooth(binned.counts, cfg.count_sigma_ms, cfg.bin_ms)
    velocity = gaussian_smooth(binned.velocity, cfg.velocity_sigma_ms, cfg.bin_ms)
    train, test = split_train_test(binned.n_bins, cfg.train_frac)
    stats = fit_norm_stats(counts, velocity, train)
    return PreparedSession(
        session_id=raw.session_id,
        date_index=raw.date_index,
        x=normalize(counts, stats.count_mean, stats.count_std),
        y=normalize(velocity, stats.vel_mean, stats.vel_std),
        stats=stats,
        train=train,
        test=test,
        bin_ms=cfg.bin_ms,
    )


def train_windows(prep: PreparedSession, length: int, stride: int) -> WindowSet:
    return make_windows(
        prep.x[prep.train],
        prep.y[prep.train],
        length,
        stride,
        session_id=prep.session_id,
        date_index=prep.date_index,
        start_offset=prep.train.start,
    )


def test_windows(prep: PreparedSession, length: int, stride: int | None = None) -> WindowSet:
    """Evaluation windows over the held-out bins; default stride tiles without overlap."""
    return make_windows(
        prep.x[prep.test],
        prep.y[prep.test],
        length,
        stride if stride is not None else length,
        session_id=prep.session_id,
        date_index=prep.date_index,
        start_offset=prep.test.start,
    )


# -- synthetic sessions -------------------------------------------------------------------


@dataclass
class SynthConfig:
    """Cosine-tuned Poisson population driven by a random-target reach loop.

    Per-channel firing follows ``max(0, baseline + modulation *
    cos(theta - pd_c) * speed / reference_speed)``; day-to-day drift scales
    rates by ``rate_decay_per_day ** day`` and, when ``permutation_seed`` is
    set, permutes channel identities on every day after day 0.
    """

    channels: int = 64
    duration_s: float = 300.0
    baseline_rate_hz: float = 10.0
    modulation_rate_hz: float = 8.0
    preferred_directions: tuple | None = None  # default: evenly spaced on the circle
    noise: bool = True  # Poisson counts; False gives deterministic integrate-and-fire
    rate_decay_per_day: float = 1.0
    permutation_seed: int | None = None
    seed: int = 0
    # trajectory shape
    target_half_width: float = 1.0
    reach_speed: float = 0.4
    trajectory_sigma_ms: float = 150.0

    def validate(self) -> None:
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")
        if self.duration_s <= 0:
            raise ValueError(f"duration_s must be positive, got {self.duration_s}")
        if self.baseline_rate_hz < 0 or self.modulation_rate_hz < 0:
            raise ValueError("firing rates must be non-negative")
        if not 0.0 < self.rate_decay_per_day <= 1.0:
            raise ValueError(
                f"rate_decay_per_day must be in (0, 1], got {self.rate_decay_per_day}"
            )
        if self.reach_speed <= 0 or self.target_half_width <= 0:
            raise ValueError("reach_speed and target_half_width must be positive")


def _reach_trajectory(cfg: SynthConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random-target reaching at 250 Hz: positions and the active target."""
    n = round(cfg.duration_s * KIN_RATE_HZ)
    dt = 1.0 / KIN_RATE_HZ
    step = cfg.reach_speed * dt
    box = cfg.target_half_width
    pos = np.empty((n, 2), dtype=np.float64)
    tgt_series = np.empty((n, 2), dtype=np.float64)
    p = rng.uniform(-0.2, 0.2, size=2) * box
    tgt = rng.uniform(-box, box, size=2)
    for i in range(n):
        delta = tgt - p
        dist = math.hypot(delta[0], delta[1])
        if dist <= step:
            p = tgt.copy()
            tgt = rng.uniform(-box, box, size=2)
        else:
            p = p + (delta / dist) * step
        pos[i] = p
        tgt_series[i] = tgt
    # Smooth the corners so speed and heading vary continuously.
    pos = gaussian_smooth(pos, cfg.trajectory_sigma_ms, bin_ms=1000.0 / KIN_RATE_HZ)
    return pos, tgt_series


def _channel_rates(cfg: SynthConfig, pos_250: np.ndarray, day: int) -> np.ndarray:
    """Per-sample, per-channel firing rates in Hz at 250 Hz resolution."""
    vel = _central_differences(pos_250, KIN_RATE_HZ)
    speed = np.hypot(vel[:, 0], vel[:, 1])
    theta = np.arctan2(vel[:, 1], vel[:, 0])
    c = cfg.channels
    if cfg.preferred_directions is not None:
        pd_angles = np.asarray(cfg.preferred_directions, dtype=np.float64)
        if pd_angles.shape != (c,):
            raise ValueError(f"need {c} preferred directions, got shape {pd_angles.shape}")
    else:
        pd_angles = 2.0 * np.pi * np.arange(c) / c
    speed_scale = speed / cfg.reach_speed
    tuning = np.cos(theta[:, None] - pd_angles[None, :]) * speed_scale[:, None]
    rates = np.maximum(0.0, cfg.baseline_rate_hz + cfg.modulation_rate_hz * tuning)
    rates *= cfg.rate_decay_per_day**day
    if cfg.permutation_seed is not None and day > 0:
        perm = np.random.default_rng([cfg.permutation_seed, day]).permutation(c)
        rates = rates[:, perm]
    return rates


def generate_synthetic_session(cfg: SynthConfig, day: int = 0, session_id: str | None = None) -> RawSession:
    """Deterministic synthetic session for the given config and day."""
    rng = np.random.default_rng([cfg.seed, day])
    pos, tgt = _reach_trajectory(cfg, rng)
    rates = _channel_rates(cfg, pos, day)
    rates_1k = np.repeat(rates, INTERP_RATE_HZ // KIN_RATE_HZ, axis=0).astype(np.float64)
    n_ms = rates_1k.shape[0]
    lam = rates_1k * 1e-3  # expected events per 1 ms step
    spikes = []
    for ch in range(cfg.channels):
        if cfg.noise:
            counts = rng.poisson(lam[:, ch])
            nz = np.nonzero(counts)[0]
            reps = np.repeat(nz, counts[nz])
            times = (reps + rng.random(reps.size)) * 1e-3
            times.sort()
        else:
            cum = np.cumsum(lam[:, ch])
            k = int(math.floor(cum[-1]))
            idx = np.searchsorted(cum, np.arange(1, k + 1))
            times = (idx + 0.5) * 1e-3
        spikes.append(times)
    kin = np.empty((pos.shape[0], len(KIN_COLUMNS)), dtype=np.float64)
    kin[:, 0:2] = pos  # finger tracks the cursor in synthetic sessions
    kin[:, 2:4] = pos
    kin[:, 4:6] = tgt
    raw = RawSession(
        session_id=session_id or f"synth-s{cfg.seed}-d{day}",
        date_index=day,
        duration_s=float(cfg.duration_s),
        spikes=spikes,
        kin=kin,
    )
    raw.validate()
    return raw


# -- session bundles on disk ------------------------------------------------------------------


def save_session(raw: RawSession, out_dir) -> Path:
    """Write a session bundle; identical sessions produce identical bytes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": SESSION_FORMAT,
        "session_id": raw.session_id,
        "date_index": raw.date_index,
        "channels": raw.channels,
        "duration_s": raw.duration_s,
        "kin_rate_hz": KIN_RATE_HZ,
        "files": {"spikes": "spikes.csv", "kinematics": "kinematics.csv"},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    channel_col = np.concatenate(
        [np.full(t.size, ch, dtype=np.int64) for ch, t in enumerate(raw.spikes)]
    ) if raw.spikes else np.empty(0, dtype=np.int64)
    time_col = np.concatenate(raw.spikes) if raw.spikes else np.empty(0, dtype=np.float64)
    pd.DataFrame({"channel": channel_col, "time_s": time_col}).to_csv(
        out / "spikes.csv", index=False, lineterminator="\n"
    )

    t = np.arange(raw.kin.shape[0], dtype=np.float64) / KIN_RATE_HZ
    frame = pd.DataFrame({"t_s": t})
    for i, col in enumerate(KIN_COLUMNS):
        frame[col] = raw.kin[:, i]
    frame.to_csv(out / "kinematics.csv", index=False, lineterminator="\n")
    return out


def load_session(bundle_dir) -> RawSession:
    """Read a session bundle, checking format, ordering, and sample counts."""
    bundle = Path(bundle_dir)
    manifest_path = bundle / "manifest.json"
    if not manifest_path.exists():
        raise ManifestError(f"{bundle}: manifest.json not found")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as err:
        raise ManifestError(f"{bundle}: manifest.json is not valid JSON: {err}") from err
    if manifest.get("format") != SESSION_FORMAT:
        raise ManifestError(f"{bundle}: expected format {SESSION_FORMAT!r}, got {manifest.get('format')!r}")
    for key in ("session_id", "date_index", "channels", "duration_s", "files"):
        if key not in manifest:
            raise ManifestError(f"{bundle}: manifest missing key {key!r}")

    spikes_path = bundle / manifest["files"].get("spikes", "spikes.csv")
    kin_path = bundle / manifest["files"].get("kinematics", "kinematics.csv")
    if not spikes_path.exists():
        raise ManifestError(f"{bundle}: spike file {spikes_path.name} not found")
    if not kin_path.exists():
        raise ManifestError(f"{bundle}: kinematics file {kin_path.name} not found")

    channels = int(manifest["channels"])
    duration = float(manifest["duration_s"])
    # round_trip parsing: the bundle contract is load(save(x)) == x exactly
    spike_table = pd.read_csv(spikes_path, float_precision="round_trip")
    if list(spike_table.columns) != ["channel", "time_s"]:
        raise ManifestError(f"{bundle}: spikes.csv must have columns channel,time_s")
    spikes = [np.empty(0, dtype=np.float64) for _ in range(channels)]
    ch_col = spike_table["channel"].to_numpy()
    t_col = spike_table["time_s"].to_numpy(dtype=np.float64)
    if ch_col.size:
        if ch_col.min() < 0 or ch_col.max() >= channels:
            raise ManifestError(f"{bundle}: spike channel index outside [0, {channels})")
        order = np.argsort(ch_col, kind="stable")
        ch_sorted = ch_col[order]
        t_sorted = t_col[order]
        bounds = np.searchsorted(ch_sorted, np.arange(channels + 1))
        for ch in range(channels):
            times = t_sorted[bounds[ch] : bounds[ch + 1]]
            if times.size and np.any(np.diff(times) <= 0.0):
                raise SpikeOrderError(f"{bundle}: channel {ch} spike times not strictly ascending")
            spikes[ch] = times

    kin_table = pd.read_csv(kin_path, float_precision="round_trip")
    expected_cols = ["t_s", *KIN_COLUMNS]
    if list(kin_table.columns) != expected_cols:
        raise ManifestError(f"{bundle}: kinematics.csv must have columns {','.join(expected_cols)}")
    n_expected = round(duration * KIN_RATE_HZ)
    if len(kin_table) != n_expected:
        raise SampleCountError(
            f"{bundle}: kinematics has {len(kin_table)} rows, expected {n_expected} "
            f"for {duration} s at {KIN_RATE_HZ} Hz"
        )
    kin = kin_table[list(KIN_COLUMNS)].to_numpy(dtype=np.float64)

    raw = RawSession(
        session_id=str(manifest["session_id"]),
        date_index=int(manifest["date_index"]),
        duration_s=duration,
        spikes=spikes,
        kin=kin,
    )
    raw.validate()
    return raw
