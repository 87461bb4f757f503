import json

import numpy as np
import pytest

from oximap.baselines import (
    LR_FEATURE_NAMES,
    LinearModel,
    RorCalibration,
    bottom_half_mask,
    compute_ror,
    fit_calibration,
    fit_lr,
    lr_features,
    model_from_json,
    model_to_json,
    predict_lr,
    predict_ror,
    window_dc_ac,
)
from oximap.errors import DataError, DegenerateSignalError, LengthError, RankError
from oximap.stmap import SpatioTemporalMap


def series(dc, ac):
    """Two-point series with exact mean dc and population std ac."""
    return np.array([dc - ac, dc + ac], dtype=np.float64)


# ---- window_dc_ac -------------------------------------------------------------


def test_window_dc_ac_constant():
    assert window_dc_ac(np.ones(4)) == (1.0, 0.0)


def test_window_dc_ac_two_point():
    assert window_dc_ac(np.array([0.0, 2.0])) == (1.0, 1.0)


def test_window_dc_ac_sinusoid_rms():
    t = np.arange(300) / 30.0
    dc, ac = window_dc_ac(5 + 0.1 * np.sin(2 * np.pi * 1.2 * t))
    assert dc == pytest.approx(5.0, abs=0.01)
    assert ac == pytest.approx(0.1 / np.sqrt(2), rel=0.02)


def test_window_dc_ac_too_short():
    with pytest.raises(LengthError):
        window_dc_ac(np.array([1.0]))


# ---- compute_ror --------------------------------------------------------------


def test_compute_ror_arithmetic():
    assert compute_ror(series(100, 1), series(50, 1)) == pytest.approx(0.5)


def test_compute_ror_symmetry():
    x = np.array([1.0, 2.0, 4.0])
    assert compute_ror(x, x) == pytest.approx(1.0)


def test_compute_ror_scale_invariance():
    rng = np.random.default_rng(0)
    red = 5 + rng.random(40)
    blue = 3 + rng.random(40)
    base = compute_ror(red, blue)
    for k in (0.1, 2.0, 1000.0):
        assert compute_ror(k * red, blue) == pytest.approx(base, abs=1e-9)
        assert compute_ror(red, k * blue) == pytest.approx(base, abs=1e-9)


def test_compute_ror_degenerate_blue():
    red = series(100, 1)
    with pytest.raises(DegenerateSignalError):
        compute_ror(red, np.full(2, 50.0))  # zero blue AC
    with pytest.raises(DegenerateSignalError):
        compute_ror(red, series(0, 1))  # zero blue DC


def test_compute_ror_on_synth_window(clean_record):
    # constant SpO2 95 with ground-truth line (-30, 110) => ratio 0.5
    win = clean_record.map.data[:, :, :300].astype(np.float64)
    red = win[0].mean(axis=0)
    blue = win[2].mean(axis=0)
    assert compute_ror(red, blue) == pytest.approx(0.5, abs=1e-3)


# ---- calibration --------------------------------------------------------------


def test_fit_calibration_two_point_exact():
    cal = fit_calibration([0.4, 0.6], [98.0, 92.0])
    assert cal.a == pytest.approx(-30.0, abs=1e-9)
    assert cal.b == pytest.approx(110.0, abs=1e-9)


def test_fit_calibration_interpolates_exact_line():
    rors = np.linspace(0.3, 0.7, 9)
    spo2 = -30.0 * rors + 110.0
    cal = fit_calibration(rors, spo2)
    resid = cal.a * rors + cal.b - spo2
    assert np.abs(resid).max() < 1e-9


def test_fit_calibration_normal_equations():
    rng = np.random.default_rng(1)
    rors = rng.uniform(0.3, 0.7, 50)
    spo2 = -30 * rors + 110 + rng.normal(0, 0.5, 50)
    cal = fit_calibration(rors, spo2)
    resid = spo2 - (cal.a * rors + cal.b)
    assert abs(resid.sum()) < 1e-6
    assert abs((resid * rors).sum()) < 1e-6


def test_fit_calibration_rank_error():
    with pytest.raises(RankError):
        fit_calibration([0.5, 0.5, 0.5], [95.0, 95.0, 95.0])


def test_calibration_requires_finite():
    with pytest.raises(DataError):
        RorCalibration(a=float("nan"), b=110.0)


# ---- predict_ror --------------------------------------------------------------


def window_from_channels(red, green, blue):
    data = np.stack([np.atleast_2d(red), np.atleast_2d(green), np.atleast_2d(blue)])
    return SpatioTemporalMap(data.astype(np.float32), fps=30.0)


def test_predict_ror_arithmetic():
    cal = RorCalibration(a=-30.0, b=110.0)
    win = window_from_channels(series(100, 1), series(70, 1), series(50, 1))  # ratio 0.5
    assert predict_ror(cal, win, roi_mask=np.array([0])) == pytest.approx(95.0, abs=1e-6)


def test_predict_ror_clamps_high():
    cal = RorCalibration(a=-30.0, b=110.0)
    # ratio 1/3 => raw prediction 100.0..., must clamp to 100
    win = window_from_channels(series(300, 1), series(70, 1), series(50, 0.5))
    assert predict_ror(cal, win, roi_mask=np.array([0])) <= 100.0


def test_predict_ror_range_property():
    rng = np.random.default_rng(2)
    cal = RorCalibration(a=-30.0, b=110.0)
    for _ in range(20):
        data = 1 + rng.random((3, 4, 60))
        win = SpatioTemporalMap(data.astype(np.float32), fps=30.0)
        y = predict_ror(cal, win)
        assert 85.0 <= y <= 100.0


def test_predict_ror_on_synth_93():
    from oximap.synth import SynthParams, gen_subject

    params = SynthParams(
        duration_s=20, n_rois=8, spo2_baseline=93.0, dip_depth=0.0, drift_amp=0.0, noise_sigma=0.0, seed=3
    )
    rec = gen_subject(params, "s93", index=0)
    cal = RorCalibration(a=-30.0, b=110.0)
    win = SpatioTemporalMap(rec.map.data[:, :, :300], fps=30.0)
    assert predict_ror(cal, win) == pytest.approx(93.0, abs=0.05)


def test_bottom_half_mask():
    m = bottom_half_mask(224)
    assert m.sum() == 112 and not m[:112].any() and m[112:].all()


# ---- linear regression baseline -------------------------------------------------


def test_fit_lr_planted_model():
    rng = np.random.default_rng(4)
    feats = rng.uniform(0.01, 0.1, size=(40, 3))
    spo2 = 100.0 - 10.0 * feats[:, 0]
    model = fit_lr(feats, spo2)
    np.testing.assert_allclose(model.weights, [-10.0, 0.0, 0.0], atol=1e-6)
    assert model.bias == pytest.approx(100.0, abs=1e-6)


def test_fit_lr_duplicate_rows_no_change():
    rng = np.random.default_rng(5)
    feats = rng.uniform(0.01, 0.1, size=(10, 3))
    spo2 = 95 + rng.normal(0, 1, 10)
    m1 = fit_lr(feats, spo2)
    m2 = fit_lr(np.vstack([feats, feats]), np.concatenate([spo2, spo2]))
    np.testing.assert_allclose(m2.weights, m1.weights, atol=1e-8)
    assert m2.bias == pytest.approx(m1.bias, abs=1e-8)


def test_fit_lr_needs_four_windows():
    with pytest.raises(LengthError):
        fit_lr(np.ones((3, 3)), np.ones(3))


def test_fit_lr_singular_design():
    feats = np.ones((6, 3))  # identical rows: rank 1 design
    with pytest.raises(RankError):
        fit_lr(feats, np.full(6, 95.0))


def test_predict_lr_clamped():
    model = LinearModel(weights=np.array([1000.0, 0.0, 0.0]), bias=0.0, feature_names=LR_FEATURE_NAMES)
    assert predict_lr(model, np.array([1.0, 0.0, 0.0])) == 100.0
    assert predict_lr(model, np.array([-1.0, 0.0, 0.0])) == 85.0


def test_lr_features_shape(clean_record):
    win = SpatioTemporalMap(clean_record.map.data[:, :, :300], fps=30.0)
    f = lr_features(win)
    assert f.shape == (3,)
    assert np.all(f > 0)


# ---- serialization --------------------------------------------------------------


def test_ror_json_roundtrip():
    cal = RorCalibration(a=-30.0, b=110.0)
    doc = json.loads(model_to_json(cal))
    assert doc["kind"] == "ror"
    back = model_from_json(model_to_json(cal))
    assert back.a == cal.a and back.b == cal.b


def test_lr_json_roundtrip():
    model = LinearModel(weights=np.array([1.0, -2.0, 0.5]), bias=96.0, feature_names=LR_FEATURE_NAMES)
    back = model_from_json(model_to_json(model))
    np.testing.assert_array_equal(back.weights, model.weights)
    assert back.bias == model.bias
    assert tuple(back.feature_names) == LR_FEATURE_NAMES
