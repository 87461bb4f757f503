import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oximap.errors import DataError, LengthError, OrderingError, RangeError
from oximap.harness import (
    Metrics,
    _score_rows,
    evaluate,
    interpolate_spo2,
    kfold_split,
    scale_spo2,
    train_model,
    unscale_spo2,
    window_dataset,
)
from oximap.models import ModelConfig
from oximap.synth import SynthParams, gen_subject

TINY = ModelConfig(variant="filter", stage_channels=(2, 2, 4, 4), seed=0)


def small_record(duration_s=30, n_rois=4, seed=21, index=0, **kw):
    p = SynthParams(duration_s=duration_s, n_rois=n_rois, noise_sigma=0.05, seed=seed, **kw)
    return gen_subject(p, f"s{index:03d}", index=index)


# ---- interpolation -------------------------------------------------------------


def test_interpolate_midpoint():
    trace = interpolate_spo2([0.0, 4.0], [98.0, 94.0])
    assert trace.t0 == 0.0
    assert trace.values[2] == pytest.approx(96.0)
    np.testing.assert_allclose(trace.values, [98.0, 97.0, 96.0, 95.0, 94.0])


def test_interpolate_recovers_linear_ramp():
    t = np.array([0.0, 3.7, 8.1, 12.4, 16.0])
    v = 90.0 + 0.5 * t
    trace = interpolate_spo2(t, v)
    np.testing.assert_allclose(trace.values, 90.0 + 0.5 * np.arange(17), atol=1e-12)


def test_interpolate_no_extrapolation():
    # coverage is ceil(t0)..floor(t_last); nothing outside the samples
    trace = interpolate_spo2([0.6, 4.2], [98.0, 94.0])
    assert trace.t0 == 1.0
    assert len(trace.values) == 4  # seconds 1..4
    with pytest.raises(RangeError):
        interpolate_spo2([0.2, 0.8], [98.0, 97.0])  # no integer second inside


def test_interpolate_input_validation():
    with pytest.raises(OrderingError):
        interpolate_spo2([0.0, 4.0, 4.0], [98.0, 97.0, 96.0])
    with pytest.raises(OrderingError):
        interpolate_spo2([4.0, 0.0], [98.0, 94.0])
    with pytest.raises(LengthError):
        interpolate_spo2([0.0], [98.0])
    with pytest.raises(LengthError):
        interpolate_spo2([0.0, 1.0], [98.0, 97.0, 96.0])


# ---- scaling -------------------------------------------------------------------


def test_scale_examples():
    assert scale_spo2(92.5) == pytest.approx(0.5)
    assert scale_spo2(85.0) == pytest.approx(0.0)
    assert scale_spo2(100.0) == pytest.approx(1.0)


def test_scale_unscale_inverse():
    y = np.linspace(85.0, 100.0, 31)
    np.testing.assert_allclose(unscale_spo2(scale_spo2(y)), y, atol=1e-12)


def test_unscale_clamps():
    assert unscale_spo2(-0.2) == 85.0
    assert unscale_spo2(1.3) == 100.0
    np.testing.assert_array_equal(unscale_spo2(np.array([-5.0, 0.5, 5.0])), [85.0, 92.5, 100.0])


# ---- windowing -----------------------------------------------------------------


@pytest.fixture(scope="module")
def record_180():
    return small_record(duration_s=180, seed=33)


def test_window_counts_train_step(record_180):
    samples = window_dataset(record_180, step_s=2.0, mode="train")
    assert len(samples) == 86  # (5400 - 300) / 60 + 1
    assert [s.t_start for s in samples[:3]] == [0.0, 2.0, 4.0]


def test_window_counts_test_step(record_180):
    samples = window_dataset(record_180, step_s=10.0, mode="test")
    assert len(samples) == 18
    assert samples[-1].t_start == 170.0


def test_window_single_at_boundary():
    rec = small_record(duration_s=10)
    for mode in ("train", "test"):
        assert len(window_dataset(rec, step_s=2.0, mode=mode)) == 1


def test_window_sample_shapes(record_180):
    s = window_dataset(record_180, step_s=10.0, mode="test")[0]
    assert s.map_window.shape == (3, 4, 300)
    assert s.dc.shape == s.ac.shape == (3, 4, 300)
    assert s.target.shape == (10,)
    assert s.subject_id == record_180.subject_id


def test_window_rejects_short_record():
    rec = small_record(duration_s=9)
    with pytest.raises(LengthError):
        window_dataset(rec, step_s=2.0, mode="train")
    with pytest.raises(DataError):
        window_dataset(rec, step_s=2.0, mode="sideways")


def test_window_targets_match_trace(record_180):
    samples = window_dataset(record_180, step_s=10.0, mode="test")
    for s in samples[:4]:
        i0 = int(s.t_start)
        expected = scale_spo2(record_180.spo2.values[i0 : i0 + 10])
        np.testing.assert_allclose(s.target, expected, atol=1e-6)


# ---- folds ---------------------------------------------------------------------


def test_kfold_reference_sizes():
    ids = [f"p{i:02d}" for i in range(50)]
    plan = kfold_split(ids, k=5, seed=0)
    assert plan.k == 5 and len(plan.folds) == 5
    for fold in plan.folds:
        assert len(fold.test_ids) == 10
        assert len(fold.val_ids) == 8
        assert len(fold.train_ids) == 32
        combined = set(fold.train_ids) | set(fold.val_ids) | set(fold.test_ids)
        assert combined == set(ids)
        assert not set(fold.train_ids) & set(fold.val_ids)
        assert not set(fold.train_ids) & set(fold.test_ids)
        assert not set(fold.val_ids) & set(fold.test_ids)


def test_kfold_partitions_tests():
    ids = [f"p{i}" for i in range(13)]
    plan = kfold_split(ids, k=4, seed=7)
    seen = [sid for fold in plan.folds for sid in fold.test_ids]
    assert sorted(seen) == sorted(ids)  # each subject tested exactly once


def test_kfold_deterministic():
    ids = [f"p{i}" for i in range(20)]
    assert kfold_split(ids, k=5, seed=3) == kfold_split(ids, k=5, seed=3)
    assert kfold_split(ids, k=5, seed=3) != kfold_split(ids, k=5, seed=4)


def test_kfold_validation():
    with pytest.raises(DataError):
        kfold_split(["a", "a", "b"], k=2, seed=0)
    with pytest.raises(DataError):
        kfold_split(["a", "b"], k=3, seed=0)
    with pytest.raises(DataError):
        kfold_split(["a", "b"], k=1, seed=0)


# ---- training ------------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_split():
    train = [
        w
        for i in (0, 1)
        for w in window_dataset(small_record(duration_s=30, seed=40, index=i), 2.0, "train")
    ]
    val = window_dataset(small_record(duration_s=20, seed=40, index=2), 10.0, "test")
    return train, val


def test_train_history_and_selection(tiny_split):
    train, val = tiny_split
    res = train_model(TINY, train, val, epochs=6, batch_size=8, lr=1e-3, seed=0)
    assert len(res.history["train_loss"]) == 6
    assert len(res.history["val_loss"]) == 6
    assert res.best_epoch == int(np.argmin(res.history["val_loss"]))
    assert res.history["best_epoch"] == res.best_epoch
    assert min(res.history["val_loss"]) == res.history["val_loss"][res.best_epoch]


def test_train_loss_decreases_on_tiny_set(tiny_split):
    train, val = tiny_split
    res = train_model(TINY, train[:16], val, epochs=10, batch_size=8, lr=1e-3, seed=1)
    losses = res.history["train_loss"]
    assert losses[-1] < losses[0]


def test_train_same_seed_same_history(tiny_split):
    train, val = tiny_split
    a = train_model(TINY, train[:12], val, epochs=3, batch_size=8, lr=1e-3, seed=5)
    b = train_model(TINY, train[:12], val, epochs=3, batch_size=8, lr=1e-3, seed=5)
    assert a.history == b.history
    for k in a.model.params:
        np.testing.assert_array_equal(a.model.params[k].data, b.model.params[k].data)


def test_train_rejects_bad_inputs(tiny_split):
    train, val = tiny_split
    with pytest.raises(DataError):
        train_model(TINY, [], val, epochs=1)
    with pytest.raises(DataError):
        train_model(TINY, train, [], epochs=1)
    with pytest.raises(DataError):
        train_model(TINY, train, val, epochs=0)
    bad_cfg = ModelConfig(variant="filter", stage_channels=(2, 2, 4, 4), d_spo2=5)
    with pytest.raises(DataError):
        train_model(bad_cfg, train, val, epochs=1)


# ---- metrics -------------------------------------------------------------------


def test_score_rows_hand_example():
    rows = [("a", 0.0, 96.0, 98.0), ("a", 1.0, 97.0, 93.0)]
    m = _score_rows(rows)
    assert m.mae == pytest.approx(3.0)
    assert m.rmse == pytest.approx(np.sqrt(10.0))


def test_score_rows_perfect():
    rows = [("a", float(t), 90.0 + t, 90.0 + t) for t in range(5)]
    m = _score_rows(rows)
    assert m.mae == 0.0 and m.rmse == 0.0
    assert m.corrcoef == pytest.approx(1.0, abs=1e-12)


def test_score_rows_constant_prediction_zero_corr():
    rows = [("a", float(t), 95.0, 90.0 + t) for t in range(5)]
    assert _score_rows(rows).corrcoef == 0.0
    # mixed with a perfectly tracked subject the mean is 0.5
    rows += [("b", float(t), 90.0 + t, 90.0 + t) for t in range(5)]
    assert _score_rows(rows).corrcoef == pytest.approx(0.5)


def test_score_rows_subject_reorder_invariance():
    rng = np.random.default_rng(0)
    rows = [
        (sid, float(t), float(90 + 5 * rng.random()), float(90 + 5 * rng.random()))
        for sid in ("a", "b", "c")
        for t in range(8)
    ]
    m1 = _score_rows(rows)
    m2 = _score_rows(list(reversed(rows)))
    assert m1.mae == pytest.approx(m2.mae)
    assert m1.rmse == pytest.approx(m2.rmse)
    assert m1.corrcoef == pytest.approx(m2.corrcoef)


@settings(max_examples=30, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.floats(min_value=85, max_value=100),
            st.floats(min_value=85, max_value=100),
        ),
        min_size=1,
        max_size=40,
    )
)
def test_rmse_at_least_mae(pairs):
    rows = [("a", float(i), p, g) for i, (p, g) in enumerate(pairs)]
    m = _score_rows(rows)
    assert m.rmse >= m.mae >= 0.0


def test_metrics_invariant_enforced():
    with pytest.raises(DataError):
        Metrics(mae=2.0, rmse=1.0, corrcoef=0.0)
    with pytest.raises(DataError):
        _score_rows([])


# ---- evaluate ------------------------------------------------------------------


def test_evaluate_rows_and_clamping(tiny_split):
    train, val = tiny_split
    res = train_model(TINY, train[:12], val, epochs=1, batch_size=8, seed=0)
    rec = small_record(duration_s=30, seed=41, index=5)
    samples = window_dataset(rec, 10.0, "test")
    metrics, rows = evaluate(res.model, samples)
    assert len(rows) == len(samples) * 10
    for sid, t_s, pred, gt in rows:
        assert sid == rec.subject_id
        assert 85.0 <= pred <= 100.0
        assert 85.0 <= gt <= 100.0
    times = [r[1] for r in rows[:10]]
    assert times == [float(t) for t in range(10)]
    assert metrics.rmse >= metrics.mae


def test_evaluate_rejects_empty(tiny_split):
    train, val = tiny_split
    res = train_model(TINY, train[:12], val, epochs=1, batch_size=8, seed=0)
    with pytest.raises(DataError):
        evaluate(res.model, [])
