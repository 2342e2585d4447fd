"""Metric tests: R², evaluation orchestration, latency reports, recovery time."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ndbench import datapipe as dp
from ndbench import metrics as mx
from ndbench.backbones import ModelConfig, init_params, param_count, predict
from ndbench.checkpoint import Checkpoint
from ndbench.harness import TrainConfig, train_single_session

# -- r_squared ---------------------------------------------------------------


def test_perfect_predictor_scores_one():
    y = np.array([0.5, 1.5, -2.0, 3.0])
    assert mx.r_squared(y, y.copy()) == 1.0


def test_mean_predictor_scores_zero():
    y = np.array([1.0, 2.0, 3.0, 6.0])
    y_hat = np.full_like(y, y.mean())
    assert mx.r_squared(y, y_hat) == 0.0


def test_worked_example_half():
    # RSS = (3-2)^2 = 1, TSS = (1-2)^2 + (3-2)^2 = 2
    assert mx.r_squared([1.0, 2.0, 3.0], [1.0, 2.0, 2.0]) == 0.5


def test_worse_than_mean_goes_negative():
    assert mx.r_squared([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]) < 0.0


def test_constant_target_is_undefined():
    with pytest.raises(mx.UndefinedR2Error):
        mx.r_squared([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])


def test_too_short_or_mismatched_inputs():
    with pytest.raises(ValueError, match="at least 2"):
        mx.r_squared([1.0], [1.0])
    with pytest.raises(ValueError, match="disagree"):
        mx.r_squared([1.0, 2.0], [1.0, 2.0, 3.0])


@settings(max_examples=60, deadline=None)
@given(
    st.integers(0, 2**32 - 1),
    st.floats(min_value=0.05, max_value=50.0),
    st.booleans(),
    st.floats(min_value=-100.0, max_value=100.0),
)
def test_r2_invariant_under_common_affine_transform(seed, scale, negate, shift):
    rng = np.random.default_rng(seed)
    y = rng.standard_normal(20)
    y_hat = y + 0.5 * rng.standard_normal(20)
    a = -scale if negate else scale
    base = mx.r_squared(y, y_hat)
    moved = mx.r_squared(a * y + shift, a * y_hat + shift)
    assert abs(base - moved) < 1e-9


# -- recovery time -----------------------------------------------------------


def test_recovery_first_crossing():
    assert mx.recovery_time([(10, 0.3), (20, 0.75)]) == 20.0


def test_recovery_takes_smallest_crossing_not_any_later():
    assert mx.recovery_time([(10, 0.71), (20, 0.5), (30, 0.9)]) == 10.0


def test_recovery_never_reached():
    assert mx.recovery_time([(10, 0.3), (20, 0.5)]) is mx.NOT_RECOVERED


def test_recovery_threshold_parameter():
    assert mx.recovery_time([(5, 0.65)], threshold=0.6) == 5.0
    assert mx.recovery_time([(5, 0.65)], threshold=0.7) is mx.NOT_RECOVERED


def test_recovery_empty_curve_errors():
    with pytest.raises(mx.EvaluationError, match="empty"):
        mx.recovery_time([])


def test_recovery_requires_strictly_increasing_seconds():
    with pytest.raises(mx.EvaluationError, match="strictly increasing"):
        mx.recovery_time([(10, 0.3), (10, 0.8)])


# -- CSV round trip ------------------------------------------------------------


def test_csv_column_order_is_exact(tmp_path):
    rec = mx.MetricsRecord("single_session", "gru", "s1", 0, 0.8, 0.7, 0.75, 1000, seed=3)
    path = mx.write_metrics_csv([rec], tmp_path / "m.csv")
    header = path.read_text().splitlines()[0]
    assert header == (
        "experiment,model,session,date_index,r2_x,r2_y,r2_avg,params,"
        "latency_median_s,latency_p95_s,recovery_s,zero_shot_r2,seed"
    )


def test_csv_roundtrip_with_sentinels(tmp_path):
    records = [
        mx.MetricsRecord("a", "gru", "s1", 0, 0.8123456789012345, 0.7, 0.75, 1000, seed=1),
        mx.MetricsRecord(
            "b", "mamba", "s2", 3, -0.25, 0.5, 0.125, 2000,
            latency_median_s=0.01, latency_p95_s=0.02,
            recovery_s=mx.NOT_RECOVERED, zero_shot_r2=0.4, seed=2,
        ),
        mx.MetricsRecord("c", "rwkv", "pooled", -1, 0.9, 0.9, 0.9, 3000, recovery_s=20.0),
    ]
    path = mx.write_metrics_csv(records, tmp_path / "m.csv")
    loaded = mx.read_metrics_csv(path)
    assert loaded == records


def test_reading_non_metrics_csv_errors(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("foo,bar\n1,2\n")
    with pytest.raises(mx.EvaluationError, match="not a metrics CSV"):
        mx.read_metrics_csv(path)


# -- evaluate -------------------------------------------------------------------


@pytest.fixture(scope="module")
def trained_setup():
    cfg = dp.SynthConfig(channels=16, duration_s=30.0, seed=11)
    prep = dp.prepare_session(dp.generate_synthetic_session(cfg, day=0))
    mcfg = ModelConfig(kind="gru", input_channels=16, embed=32, layers=1)
    tcfg = TrainConfig(epochs=3, window_bins=32, stride=16, batch_size=8, seed=0)
    result = train_single_session(prep, mcfg, tcfg)
    return prep, result.checkpoint


def test_single_window_set_matches_direct_r_squared(trained_setup):
    prep, ckpt = trained_setup
    windows = dp.test_windows(prep, 32)
    # pick a window where both velocity axes actually move (holds give TSS == 0)
    i = next(
        k for k in range(len(windows))
        if (windows.targets[k].std(axis=0) > 1e-3).all()
    )
    one = dp.WindowSet(
        inputs=windows.inputs[i : i + 1], targets=windows.targets[i : i + 1],
        tags=windows.tags[i : i + 1], length=32, stride=32,
    )
    record = mx.evaluate(ckpt, one)
    stats = prep.stats
    pred = dp.denormalize(
        predict(ckpt.params, one.inputs, ckpt.config)[0].astype(np.float64),
        stats.vel_mean, stats.vel_std,
    )
    true = dp.denormalize(one.targets[0].astype(np.float64), stats.vel_mean, stats.vel_std)
    assert record.r2_x == pytest.approx(mx.r_squared(true[:, 0], pred[:, 0]), abs=1e-12)
    assert record.r2_y == pytest.approx(mx.r_squared(true[:, 1], pred[:, 1]), abs=1e-12)
    assert record.r2_avg == pytest.approx((record.r2_x + record.r2_y) / 2, abs=1e-15)


def test_evaluate_is_pure(trained_setup):
    prep, ckpt = trained_setup
    windows = dp.test_windows(prep, 32)
    a = mx.evaluate(ckpt, windows)
    b = mx.evaluate(ckpt, windows)
    assert a == b


def test_evaluate_fills_identity_fields(trained_setup):
    prep, ckpt = trained_setup
    record = mx.evaluate(ckpt, dp.test_windows(prep, 32), experiment="single_session", seed=9)
    assert record.experiment == "single_session"
    assert record.model == "gru"
    assert record.session == prep.session_id
    assert record.date_index == prep.date_index
    assert record.params == param_count(ckpt.config)
    assert record.seed == 9


def test_shuffled_predictions_score_below_aligned(trained_setup):
    prep, ckpt = trained_setup
    windows = dp.test_windows(prep, 32)
    aligned = mx.evaluate(ckpt, windows).r2_avg
    preds = []
    trues = []
    for i in range(len(windows)):
        p = predict(ckpt.params, windows.inputs[i : i + 1], ckpt.config)[0]
        preds.append(dp.denormalize(p.astype(np.float64), prep.stats.vel_mean, prep.stats.vel_std))
        trues.append(
            dp.denormalize(windows.targets[i].astype(np.float64), prep.stats.vel_mean, prep.stats.vel_std)
        )
    pred = np.concatenate(preds)
    true = np.concatenate(trues)
    shifted = np.roll(pred, pred.shape[0] // 2, axis=0)
    shuffled = (mx.r_squared(true[:, 0], shifted[:, 0]) + mx.r_squared(true[:, 1], shifted[:, 1])) / 2
    assert aligned > shuffled


def test_overlapping_windows_rejected(trained_setup):
    prep, ckpt = trained_setup
    overlapping = dp.test_windows(prep, 32, stride=16)
    with pytest.raises(mx.EvaluationError, match="overlap"):
        mx.evaluate(ckpt, overlapping)


def test_empty_window_set_rejected(trained_setup):
    prep, ckpt = trained_setup
    windows = dp.test_windows(prep, 32)
    empty = dp.WindowSet(
        inputs=windows.inputs[:0], targets=windows.targets[:0], tags=[], length=32, stride=32
    )
    with pytest.raises(mx.EvaluationError, match="no evaluation windows"):
        mx.evaluate(ckpt, empty)


def test_missing_session_stats_rejected(trained_setup):
    prep, ckpt = trained_setup
    windows = dp.test_windows(prep, 32)
    stripped = Checkpoint(ckpt.config, ckpt.params, {}, ckpt.provenance)
    with pytest.raises(mx.EvaluationError, match="no normalization stats"):
        mx.evaluate(stripped, windows)


def test_stacked_aggregate_differs_but_same_axes(trained_setup):
    prep, ckpt = trained_setup
    windows = dp.test_windows(prep, 32)
    mean_axes = mx.evaluate(ckpt, windows, aggregate="mean_axes")
    stacked = mx.evaluate(ckpt, windows, aggregate="stacked")
    assert mean_axes.r2_x == stacked.r2_x and mean_axes.r2_y == stacked.r2_y
    assert stacked.r2_avg == pytest.approx(mean_axes.r2_avg, abs=0.2)
    with pytest.raises(ValueError, match="aggregate"):
        mx.evaluate(ckpt, windows, aggregate="nope")


# -- latency ----------------------------------------------------------------------


def untrained_checkpoint(kind="gru", channels=8, **overrides):
    cfg = ModelConfig(kind=kind, input_channels=channels, embed=16, layers=1, **overrides)
    return Checkpoint(cfg, init_params(cfg, seed=0), {}, {})


def test_latency_report_shape():
    ckpt = untrained_checkpoint()
    rep = mx.bench_latency(ckpt, s=16, warmup=2, samples=5)
    assert rep.s == 16
    assert rep.window_ms == 160
    assert rep.samples == 5
    assert rep.p95_s >= rep.median_s > 0.0
    assert rep.threads == 1


def test_latency_runs_warmup_outside_samples(monkeypatch):
    ckpt = untrained_checkpoint()
    calls = []
    real_predict = mx.predict

    def counting_predict(params, x, cfg):
        calls.append(1)
        return real_predict(params, x, cfg)

    monkeypatch.setattr(mx, "predict", counting_predict)
    rep = mx.bench_latency(ckpt, s=8, warmup=3, samples=4)
    assert len(calls) == 3 + 4
    assert rep.samples == 4


def test_latency_argument_validation():
    ckpt = untrained_checkpoint()
    with pytest.raises(ValueError):
        mx.bench_latency(ckpt, s=0)
    with pytest.raises(ValueError):
        mx.bench_latency(ckpt, s=8, samples=0)


def test_complexity_probe_ratio_and_validation():
    ckpt = untrained_checkpoint()
    probe = mx.complexity_probe(ckpt, s_list=(8, 32), warmup=1, samples=3)
    assert set(probe.reports) == {8, 32}
    assert probe.ratio == probe.reports[32].median_s / probe.reports[8].median_s
    with pytest.raises(ValueError, match="ascending"):
        mx.complexity_probe(ckpt, s_list=(32, 8), warmup=1, samples=2)
    with pytest.raises(ValueError, match="at least two"):
        mx.complexity_probe(ckpt, s_list=(8,), warmup=1, samples=2)


def test_longer_windows_never_cheaper():
    # monotone cost: doubling S should not reduce the median (majority of 3 repeats)
    ckpt = untrained_checkpoint()
    wins = 0
    for rep in range(3):
        short = mx.bench_latency(ckpt, s=8, warmup=1, samples=5, seed=rep)
        long = mx.bench_latency(ckpt, s=64, warmup=1, samples=5, seed=rep)
        wins += long.median_s >= short.median_s
    assert wins >= 2
