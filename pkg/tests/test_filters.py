import numpy as np
import pytest
from scipy import signal

from oximap.errors import LengthError, ParameterError
from oximap.filters import (
    AC_BAND_HZ,
    DC_CUTOFF_HZ,
    FILTER_ORDER,
    design_bandpass,
    design_lowpass,
    filtfilt,
    magnitude,
    split_dc_ac,
)
from oximap.stmap import SpatioTemporalMap

FS = 30.0


def oracle_gain(spec, f_hz):
    """|H(e^{jw})| from the coefficients directly: sum b_k e^{-jwk} / sum a_k e^{-jwk}."""
    w = 2 * np.pi * f_hz / spec.sample_rate
    k_b = np.arange(len(spec.b))
    k_a = np.arange(len(spec.a))
    num = np.sum(spec.b * np.exp(-1j * w * k_b))
    den = np.sum(spec.a * np.exp(-1j * w * k_a))
    return abs(num / den)


def central(x, frac=0.8):
    n = len(x)
    k = int(round(n * (1 - frac) / 2))
    return x[k : n - k]


def sine(f_hz, dur_s, fs=FS):
    t = np.arange(int(dur_s * fs)) / fs
    return np.sin(2 * np.pi * f_hz * t)


# ---- design -------------------------------------------------------------------


def test_lowpass_gains_single_pass():
    lp = design_lowpass()
    assert oracle_gain(lp, 0.0) == pytest.approx(1.0, abs=1e-9)
    assert oracle_gain(lp, 0.3) == pytest.approx(0.7071, abs=1e-3)
    assert oracle_gain(lp, 1.2) <= 0.01


def test_bandpass_gains_single_pass():
    bp = design_bandpass()
    assert oracle_gain(bp, np.sqrt(0.75 * 2.5)) >= 0.99
    assert oracle_gain(bp, 0.75) == pytest.approx(0.7071, abs=1e-3)
    assert oracle_gain(bp, 0.1) <= 0.01


def test_magnitude_matches_oracle():
    freqs = np.linspace(0.01, 14.9, 50)
    for spec in (design_lowpass(), design_bandpass()):
        got = magnitude(spec, freqs)
        want = np.array([oracle_gain(spec, f) for f in freqs])
        np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-12)


def test_design_validates_cutoffs():
    with pytest.raises(ParameterError):
        design_lowpass(cutoff=0.0)
    with pytest.raises(ParameterError):
        design_lowpass(cutoff=15.0)  # at nyquist
    with pytest.raises(ParameterError):
        design_bandpass(low=2.5, high=0.75)


def test_designed_filters_stable():
    for spec in (design_lowpass(), design_bandpass()):
        assert spec.a[0] == pytest.approx(1.0)
        poles = np.roots(spec.a)
        assert np.all(np.abs(poles) < 1.0)


def test_impulse_response_decays():
    # single-pass impulse response must vanish well before 60 s
    imp = np.zeros(3600)
    imp[0] = 1.0
    for spec in (design_lowpass(), design_bandpass()):
        h = signal.lfilter(spec.b, spec.a, imp)
        assert np.abs(h[1800:]).max() < 1e-9


# ---- filtfilt -----------------------------------------------------------------


def test_filtfilt_constant_through_lowpass():
    x = np.full(900, 3.25)
    y = filtfilt(design_lowpass(), x)
    assert np.abs(y - 3.25).max() < 1e-6


def test_filtfilt_inband_tone_through_bandpass():
    x = sine(1.2, 60)
    y = filtfilt(design_bandpass(), x)
    ratio = central(y).std() / central(x).std()
    assert 0.9 <= ratio <= 1.0
    # same phase: peak cross-correlation at zero lag
    xc = np.correlate(central(y), central(x), mode="full")
    assert int(np.argmax(xc)) - (len(central(x)) - 1) == 0


def test_filtfilt_inband_tone_through_lowpass():
    x = sine(1.2, 60)
    y = filtfilt(design_lowpass(), x)
    assert np.abs(central(y)).max() <= 1e-3


def test_filtfilt_too_short():
    with pytest.raises(LengthError):
        filtfilt(design_lowpass(), np.zeros(3 * FILTER_ORDER))


def test_filtfilt_zero_phase_several_tones():
    bp = design_bandpass()
    for f in (0.9, 1.5, 2.3):
        x = sine(f, 60)
        y = filtfilt(bp, x)
        xc = np.correlate(central(y), central(x), mode="full")
        assert int(np.argmax(xc)) - (len(central(x)) - 1) == 0


# ---- split_dc_ac --------------------------------------------------------------


def two_tone_map(n_rois=2, dur_s=60):
    t = np.arange(int(dur_s * FS)) / FS
    x = 5 + 0.1 * np.sin(2 * np.pi * 1.2 * t)
    data = np.broadcast_to(x, (3, n_rois, t.size)).astype(np.float32).copy()
    return SpatioTemporalMap(data, fps=FS), t


def test_split_two_tone_decomposition():
    m, t = two_tone_map()
    fm = split_dc_ac(m)
    assert fm.dc.data.shape == m.data.shape
    assert fm.ac.data.shape == m.data.shape
    dc = fm.dc.data[0, 0].astype(np.float64)
    ac = fm.ac.data[0, 0].astype(np.float64)
    assert np.abs(central(dc) - 5.0).max() < 0.02
    target = 0.1 * np.sin(2 * np.pi * 1.2 * t)
    amp_ratio = central(ac).std() / central(target).std()
    assert 0.9 <= amp_ratio <= 1.1


def test_split_drift_rejected_from_ac():
    t = np.arange(1800) / FS
    x = np.sin(2 * np.pi * 0.1 * t)
    m = SpatioTemporalMap(np.broadcast_to(x, (3, 1, 1800)).astype(np.float32).copy(), fps=FS)
    fm = split_dc_ac(m)
    assert central(fm.ac.data[0, 0]).std() / central(x).std() <= 0.01


def test_split_linearity():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 2, 900)).astype(np.float32)
    y = rng.normal(size=(3, 2, 900)).astype(np.float32)
    fa = split_dc_ac(SpatioTemporalMap(x, fps=FS))
    fb = split_dc_ac(SpatioTemporalMap(y, fps=FS))
    fc = split_dc_ac(SpatioTemporalMap(2.0 * x + 3.0 * y, fps=FS))
    assert np.abs(fc.dc.data - (2 * fa.dc.data + 3 * fb.dc.data)).max() < 1e-5
    assert np.abs(fc.ac.data - (2 * fa.ac.data + 3 * fb.ac.data)).max() < 1e-5


def test_split_spectral_disjointness():
    # cardiac tones must not leak measurable energy into the dc branch
    lp_map = {}
    for f in (0.9, 1.5, 2.3):
        x = sine(f, 60)
        m = SpatioTemporalMap(np.broadcast_to(x, (3, 1, x.size)).astype(np.float64).copy(), fps=FS)
        fm = split_dc_ac(m)
        leak = (central(fm.dc.data[0, 0]) ** 2).sum() / (central(x) ** 2).sum()
        lp_map[f] = leak
        assert leak <= 1e-4, (f, leak)


def test_split_preserves_identity_fields():
    m, _ = two_tone_map()
    m = SpatioTemporalMap(m.data, fps=FS, subject_id="subj7")
    fm = split_dc_ac(m)
    assert fm.dc.subject_id == fm.ac.subject_id == "subj7"
    assert fm.dc.fps == fm.ac.fps == FS


def test_split_too_short():
    m = SpatioTemporalMap(np.zeros((3, 1, 12 * FILTER_ORDER), dtype=np.float32), fps=FS)
    with pytest.raises(LengthError):
        split_dc_ac(m)


def test_default_band_constants():
    assert DC_CUTOFF_HZ == 0.3
    assert AC_BAND_HZ == (0.75, 2.5)
