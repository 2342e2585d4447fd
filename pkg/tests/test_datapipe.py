"""Pipeline tests: binning, velocity, smoothing, windows, synthetic data, bundles."""

import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ndbench import datapipe as dp


def linear_motion_session(duration_s=2.0, vx=0.3, vy=-0.2, channels=2):
    n = round(duration_s * dp.KIN_RATE_HZ)
    t = np.arange(n) / dp.KIN_RATE_HZ
    kin = np.zeros((n, 6))
    kin[:, 2] = vx * t
    kin[:, 3] = vy * t
    kin[:, 0:2] = kin[:, 2:4]
    spikes = [np.array([0.005, 0.0099]), np.array([0.010, 0.0199, 1.995])]
    spikes += [np.empty(0) for _ in range(channels - 2)]
    return dp.RawSession("lin", 0, duration_s, spikes, kin)


# -- binning -----------------------------------------------------------------


def test_bin_spikes_half_open_bins():
    raw = linear_motion_session()
    counts = dp.bin_spikes(raw)
    assert counts.shape == (200, 2)
    assert counts[0, 0] == 2  # 0.005 and 0.0099 in [0.00, 0.01)
    assert counts[1, 0] == 0
    assert counts[1, 1] == 2  # 0.010 lands in [0.01, 0.02), not bin 0
    assert counts[199, 1] == 1
    assert counts.sum() == 5


def test_bin_spikes_drops_trailing_partial_bin():
    n = round(1.207 * dp.KIN_RATE_HZ)
    kin = np.zeros((n, 6))
    raw = dp.RawSession("tail", 0, 1.207, [np.array([1.195, 1.2005, 1.2069])], kin)
    counts = dp.bin_spikes(raw)
    assert counts.shape[0] == 120  # floor(1.207 * 100) bins covering [0, 1.20)
    assert counts.sum() == 1  # events at and past 1.20 s are discarded


def test_bin_spikes_rejects_out_of_range():
    kin = np.zeros((250, 6))
    raw = dp.RawSession("bad", 0, 1.0, [np.array([1.0])], kin)
    with pytest.raises(dp.SessionFormatError):
        dp.bin_spikes(raw)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(min_value=0.0, max_value=0.999, exclude_max=True), max_size=60),
    st.integers(min_value=0, max_value=2**31 - 1),
)
def test_binning_conserves_events_inside_kept_bins(times, seed):
    del seed
    times = np.sort(np.unique(np.asarray(times, dtype=np.float64)))
    kin = np.zeros((round(1.004 * dp.KIN_RATE_HZ), 6))
    raw = dp.RawSession("h", 0, 1.004, [times], kin)
    counts = dp.bin_spikes(raw)
    kept = np.sum(times < counts.shape[0] * 0.01)
    assert counts.sum() == kept


# -- velocity ----------------------------------------------------------------


def test_interpolation_fills_1khz_grid():
    pos = np.array([[0.0], [1.0]])
    out = dp.interpolate_positions(pos)
    assert np.allclose(out[:, 0], [0.0, 0.25, 0.5, 0.75, 1.0])


def test_velocity_exact_for_linear_motion():
    raw = linear_motion_session(duration_s=2.0, vx=0.3, vy=-0.2)
    vel = dp.derive_velocity(raw, target="cursor")
    assert vel.shape == (200, 2)
    assert np.allclose(vel[:, 0], 0.3, atol=1e-9)
    assert np.allclose(vel[:, 1], -0.2, atol=1e-9)


def test_velocity_matches_np_gradient_oracle():
    # Independent route: numpy's gradient uses the same central/one-sided
    # scheme, so interp + gradient + per-bin mean must reproduce the op.
    duration = 1.0
    n = round(duration * dp.KIN_RATE_HZ)
    t = np.arange(n) / dp.KIN_RATE_HZ
    kin = np.zeros((n, 6))
    kin[:, 2] = t**2
    kin[:, 3] = np.sin(3.0 * t)
    raw = dp.RawSession("quad", 0, duration, [np.empty(0)], kin)
    vel = dp.derive_velocity(raw)
    pos_1k = dp.interpolate_positions(kin[:, 2:4])
    vel_oracle = np.gradient(pos_1k, 1.0 / 1000.0, axis=0)
    t_bins = vel.shape[0]
    for b in range(t_bins):
        chunk = vel_oracle[b * 10 : (b + 1) * 10]
        assert np.allclose(vel[b], chunk.mean(axis=0), atol=1e-12)


def test_velocity_finger_column_selection():
    raw = linear_motion_session()
    raw.kin[:, 0] *= 2.0  # finger_x moves twice as fast
    vel = dp.derive_velocity(raw, target="finger")
    assert np.allclose(vel[:, 0], 0.6, atol=1e-9)


# -- smoothing -----------------------------------------------------------------


def test_kernel_sums_to_one_and_peaks_at_center():
    k = dp.gaussian_kernel(40.0)
    assert abs(k.sum() - 1.0) < 1e-12
    assert k.argmax() == k.size // 2
    assert k.size == 2 * int(np.ceil(3 * 4.0)) + 1
    assert np.allclose(k, k[::-1])


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=1.0, max_value=200.0))
def test_kernel_normalization_property(sigma_ms):
    assert abs(dp.gaussian_kernel(sigma_ms).sum() - 1.0) < 1e-12


def test_smoothing_sigma_zero_is_copy():
    x = np.random.default_rng(0).normal(size=(50, 3))
    y = dp.gaussian_smooth(x, 0.0)
    assert np.array_equal(x, y)
    assert y is not x


def test_smoothing_preserves_constant_series():
    x = np.full((64, 2), 3.25)
    assert np.allclose(dp.gaussian_smooth(x, 40.0), 3.25, atol=1e-12)


def test_smoothing_impulse_reproduces_kernel():
    x = np.zeros((101, 1))
    x[50, 0] = 1.0
    out = dp.gaussian_smooth(x, 40.0)[:, 0]
    k = dp.gaussian_kernel(40.0)
    r = k.size // 2
    assert np.allclose(out[50 - r : 50 + r + 1], k, atol=1e-12)


# -- normalization and splits ----------------------------------------------------


def test_zscore_worked_example():
    counts = np.array([[0.0, 2.0], [2.0, 4.0], [4.0, 6.0]])
    vel = np.array([[1.0, -1.0], [3.0, 1.0], [2.0, 0.0]])
    stats = dp.fit_norm_stats(counts, vel, slice(0, 2))
    assert np.allclose(stats.count_mean, [1.0, 3.0])
    assert np.allclose(stats.count_std, [1.0, 1.0])
    z = dp.normalize(counts, stats.count_mean, stats.count_std)
    assert np.allclose(z[:2], [[-1.0, -1.0], [1.0, 1.0]])


def test_zscore_floors_silent_channel():
    counts = np.zeros((10, 1))
    vel = np.zeros((10, 2))
    stats = dp.fit_norm_stats(counts, vel, slice(0, 10))
    assert stats.count_std[0] == 1e-6
    assert np.isfinite(dp.normalize(counts, stats.count_mean, stats.count_std)).all()


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_zscore_roundtrip(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(20, 3)) * 4.0 + 2.0
    stats = dp.fit_norm_stats(x, rng.normal(size=(20, 2)), slice(0, 20))
    z = dp.normalize(x, stats.count_mean, stats.count_std)
    back = dp.denormalize(z, stats.count_mean, stats.count_std)
    assert np.allclose(back, x, atol=1e-9)
    assert np.allclose(z.mean(axis=0), 0.0, atol=1e-9)
    assert np.allclose(z.std(axis=0), 1.0, atol=1e-6)


def test_split_examples():
    train, test = dp.split_train_test(100)
    assert (train, test) == (slice(0, 80), slice(80, 100))
    train, test = dp.split_train_test(101)
    assert (train, test) == (slice(0, 80), slice(80, 101))


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=2, max_value=100_000))
def test_split_partitions_chronologically(n):
    train, test = dp.split_train_test(n)
    assert train.start == 0 and train.stop == test.start and test.stop == n
    assert train.stop == int(np.floor(n * 0.8))


# -- windows ----------------------------------------------------------------------


def test_make_windows_counts_and_tags():
    x = np.arange(20.0).reshape(10, 2)
    y = np.arange(20.0).reshape(10, 2)
    ws = dp.make_windows(x, y, length=4, stride=2, session_id="s", date_index=3, start_offset=100)
    assert len(ws) == 4
    assert [t.start_bin for t in ws.tags] == [100, 102, 104, 106]
    assert ws.inputs.dtype == np.float32
    assert np.allclose(ws.inputs[1], x[2:6])


def test_make_windows_drops_short_tail():
    x = np.zeros((7, 1))
    y = np.zeros((7, 2))
    ws = dp.make_windows(x, y, length=4, stride=4)
    assert len(ws) == 1  # bins 4..6 cannot fill a second window


@settings(max_examples=50, deadline=None)
@given(
    st.integers(min_value=1, max_value=60),
    st.integers(min_value=1, max_value=12),
    st.integers(min_value=1, max_value=12),
)
def test_window_count_formula(t_total, length, stride):
    x = np.zeros((t_total, 2))
    y = np.zeros((t_total, 2))
    ws = dp.make_windows(x, y, length, stride)
    expected = 0 if t_total < length else (t_total - length) // stride + 1
    assert len(ws) == expected


# -- prepared sessions ---------------------------------------------------------------


def test_prepare_session_train_bins_are_standardized():
    cfg = dp.SynthConfig(channels=8, duration_s=30.0, seed=11)
    raw = dp.generate_synthetic_session(cfg)
    prep = dp.prepare_session(raw)
    xtr = prep.x[prep.train]
    ytr = prep.y[prep.train]
    assert np.allclose(xtr.mean(axis=0), 0.0, atol=1e-9)
    assert np.allclose(xtr.std(axis=0), 1.0, atol=1e-6)
    assert np.allclose(ytr.mean(axis=0), 0.0, atol=1e-9)
    assert prep.train.stop == int(np.floor(prep.n_bins * 0.8))


# -- synthetic sessions ----------------------------------------------------------------


def test_synth_is_deterministic():
    cfg = dp.SynthConfig(channels=6, duration_s=10.0, seed=5)
    a = dp.generate_synthetic_session(cfg)
    b = dp.generate_synthetic_session(cfg)
    assert np.array_equal(a.kin, b.kin)
    for ta, tb in zip(a.spikes, b.spikes):
        assert np.array_equal(ta, tb)


def test_synth_baseline_rate_matches_request():
    cfg = dp.SynthConfig(
        channels=32, duration_s=30.0, baseline_rate_hz=10.0, modulation_rate_hz=0.0, seed=2
    )
    raw = dp.generate_synthetic_session(cfg)
    total = sum(t.size for t in raw.spikes)
    expected = 10.0 * 30.0 * 32
    # Pooled Poisson count: stay within three standard errors.
    assert abs(total - expected) <= 3.0 * np.sqrt(expected)


def test_synth_day_decay_halves_rates():
    base = dict(channels=16, duration_s=20.0, baseline_rate_hz=12.0, modulation_rate_hz=0.0, seed=3)
    day0 = dp.generate_synthetic_session(dp.SynthConfig(**base, rate_decay_per_day=0.5), day=0)
    day1 = dp.generate_synthetic_session(dp.SynthConfig(**base, rate_decay_per_day=0.5), day=1)
    n0 = sum(t.size for t in day0.spikes)
    n1 = sum(t.size for t in day1.spikes)
    assert abs(n1 - 0.5 * n0) <= 4.0 * np.sqrt(0.5 * n0)


def test_synth_day_permutation_relabels_channels():
    cfg = dp.SynthConfig(channels=12, duration_s=5.0, permutation_seed=77, seed=4)
    rng = np.random.default_rng([cfg.seed, 1])
    pos, _ = dp._reach_trajectory(cfg, rng)
    permuted = dp._channel_rates(cfg, pos, day=1)
    plain = dp._channel_rates(dp.SynthConfig(channels=12, duration_s=5.0, seed=4), pos, day=1)
    perm = np.random.default_rng([77, 1]).permutation(12)
    assert np.allclose(permuted, plain[:, perm])
    assert not np.allclose(permuted, plain)  # the relabeling actually moves channels


def test_synth_spike_times_strictly_ascending():
    cfg = dp.SynthConfig(channels=10, duration_s=15.0, baseline_rate_hz=30.0, seed=9)
    raw = dp.generate_synthetic_session(cfg)
    for times in raw.spikes:
        if times.size > 1:
            assert np.all(np.diff(times) > 0.0)
        if times.size:
            assert 0.0 <= times[0] and times[-1] < cfg.duration_s


# -- bundles ------------------------------------------------------------------------------


def bundle_digest(path):
    h = hashlib.sha256()
    for name in ("manifest.json", "spikes.csv", "kinematics.csv"):
        h.update((path / name).read_bytes())
    return h.hexdigest()


def test_bundle_roundtrip_exact(tmp_path):
    cfg = dp.SynthConfig(channels=5, duration_s=8.0, seed=21)
    raw = dp.generate_synthetic_session(cfg)
    out = dp.save_session(raw, tmp_path / "sess")
    back = dp.load_session(out)
    assert back.session_id == raw.session_id
    assert back.date_index == raw.date_index
    assert back.duration_s == raw.duration_s
    assert np.array_equal(back.kin, raw.kin)
    for a, b in zip(raw.spikes, back.spikes):
        assert np.array_equal(a, b)


def test_bundle_bytes_deterministic(tmp_path):
    cfg = dp.SynthConfig(channels=4, duration_s=6.0, seed=13)
    a = dp.save_session(dp.generate_synthetic_session(cfg), tmp_path / "a")
    b = dp.save_session(dp.generate_synthetic_session(cfg), tmp_path / "b")
    assert bundle_digest(a) == bundle_digest(b)


def test_load_missing_manifest(tmp_path):
    with pytest.raises(dp.ManifestError, match="manifest.json"):
        dp.load_session(tmp_path)


def test_load_wrong_format_string(tmp_path):
    raw = dp.generate_synthetic_session(dp.SynthConfig(channels=3, duration_s=2.0))
    out = dp.save_session(raw, tmp_path / "s")
    manifest = json.loads((out / "manifest.json").read_text())
    manifest["format"] = "something-else"
    (out / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(dp.ManifestError, match="format"):
        dp.load_session(out)


def test_load_rejects_unordered_spikes(tmp_path):
    raw = dp.generate_synthetic_session(dp.SynthConfig(channels=3, duration_s=2.0))
    out = dp.save_session(raw, tmp_path / "s")
    (out / "spikes.csv").write_text("channel,time_s\n0,0.5\n0,0.25\n")
    with pytest.raises(dp.SpikeOrderError):
        dp.load_session(out)


def test_load_rejects_sample_count_mismatch(tmp_path):
    raw = dp.generate_synthetic_session(dp.SynthConfig(channels=3, duration_s=2.0))
    out = dp.save_session(raw, tmp_path / "s")
    kin = (out / "kinematics.csv").read_text().splitlines()
    (out / "kinematics.csv").write_text("\n".join(kin[:-5]) + "\n")
    with pytest.raises(dp.SampleCountError):
        dp.load_session(out)
