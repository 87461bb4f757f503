"""Butterworth DC/AC decomposition of spatio-temporal maps.

The DC map is the low-pass (< 0.3 Hz) component, the AC map is the
band-pass (0.75 to 2.5 Hz) component. Filters are applied forward and
backward, so the effective magnitude is |H|^2 and the phase is zero;
edges are handled by odd-reflection padding of length 3*order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import LengthError, ParameterError
from .stmap import SpatioTemporalMap

__all__ = [
    "FilterSpec",
    "FilteredMaps",
    "design_lowpass",
    "design_bandpass",
    "filtfilt",
    "split_dc_ac",
    "magnitude",
    "DC_CUTOFF_HZ",
    "AC_BAND_HZ",
    "FILTER_ORDER",
]

DC_CUTOFF_HZ = 0.3
AC_BAND_HZ = (0.75, 2.5)
FILTER_ORDER = 4


@dataclass(frozen=True)
class FilterSpec:
    """A designed rational discrete-time filter (b, a coefficients)."""

    kind: str  # "lowpass" or "bandpass"
    cutoffs: tuple[float, ...]
    order: int
    sample_rate: float
    b: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        if self.kind not in ("lowpass", "bandpass"):
            raise ParameterError(f"unknown filter kind {self.kind!r}")
        nyq = self.sample_rate / 2.0
        for c in self.cutoffs:
            if not 0.0 < c < nyq:
                raise ParameterError(f"cutoff {c} Hz outside (0, {nyq}) Hz")
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if abs(a[0] - 1.0) > 1e-12:
            raise ParameterError("denominator must be normalized (a[0] = 1)")
        poles = np.roots(a)
        if poles.size and np.max(np.abs(poles)) >= 1.0:
            raise ParameterError("designed filter is unstable (pole on/outside unit circle)")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "a", a)

    @property
    def padlen(self) -> int:
        return 3 * self.order


def design_lowpass(cutoff: float = DC_CUTOFF_HZ, fs: float = 30.0, order: int = FILTER_ORDER) -> FilterSpec:
    """Butterworth low-pass: unity DC gain, -3 dB at the cutoff (single pass)."""
    if not 0.0 < cutoff < fs / 2.0:
        raise ParameterError(f"lowpass cutoff {cutoff} Hz must lie in (0, {fs / 2.0}) Hz")
    b, a = signal.butter(order, cutoff, btype="lowpass", fs=fs)
    return FilterSpec(kind="lowpass", cutoffs=(float(cutoff),), order=order, sample_rate=float(fs), b=b, a=a)


def design_bandpass(
    low: float = AC_BAND_HZ[0], high: float = AC_BAND_HZ[1], fs: float = 30.0, order: int = FILTER_ORDER
) -> FilterSpec:
    """Butterworth band-pass with -3 dB band edges (single pass)."""
    if not 0.0 < low < high < fs / 2.0:
        raise ParameterError(f"bandpass edges ({low}, {high}) Hz must satisfy 0 < low < high < {fs / 2.0}")
    b, a = signal.butter(order, (low, high), btype="bandpass", fs=fs)
    return FilterSpec(
        kind="bandpass", cutoffs=(float(low), float(high)), order=order, sample_rate=float(fs), b=b, a=a
    )


def magnitude(spec: FilterSpec, freq_hz) -> np.ndarray:
    """Single-pass magnitude |H(e^{j 2 pi f / fs})| at the given frequencies."""
    w = 2.0 * np.pi * np.atleast_1d(np.asarray(freq_hz, dtype=np.float64)) / spec.sample_rate
    zinv = np.exp(-1j * w)
    num = np.polyval(spec.b[::-1], zinv)
    den = np.polyval(spec.a[::-1], zinv)
    return np.abs(num / den)


def filtfilt(spec: FilterSpec, x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Zero-phase forward-backward filtering along `axis`.

    Effective magnitude is the square of the single-pass response.
    """
    x = np.asarray(x)
    n = x.shape[axis]
    if n <= spec.padlen:
        raise LengthError(f"series of length {n} too short for edge padding {spec.padlen}")
    return signal.filtfilt(spec.b, spec.a, x, axis=axis, padtype="odd", padlen=spec.padlen)


def split_dc_ac(
    stmap: SpatioTemporalMap,
    lowpass: FilterSpec | None = None,
    bandpass: FilterSpec | None = None,
) -> "FilteredMaps":
    """Per-trace DC/AC decomposition of a (3, N, T) map."""
    lp = design_lowpass(fs=stmap.fps) if lowpass is None else lowpass
    bp = design_bandpass(fs=stmap.fps) if bandpass is None else bandpass
    t = stmap.n_frames
    min_t = 12 * max(lp.order, bp.order)
    if t <= min_t:
        raise LengthError(f"map with T={t} frames too short to filter (need > {min_t})")
    dc = filtfilt(lp, stmap.data, axis=-1).astype(stmap.data.dtype)
    ac = filtfilt(bp, stmap.data, axis=-1).astype(stmap.data.dtype)
    return FilteredMaps(
        dc=SpatioTemporalMap(data=dc, fps=stmap.fps, subject_id=stmap.subject_id),
        ac=SpatioTemporalMap(data=ac, fps=stmap.fps, subject_id=stmap.subject_id),
    )


@dataclass(frozen=True)
class FilteredMaps:
    """DC and AC component maps sharing shape, fps and subject with the source."""

    dc: SpatioTemporalMap
    ac: SpatioTemporalMap

    def __post_init__(self):
        if self.dc.data.shape != self.ac.data.shape:
            raise ParameterError("dc and ac maps must share shape")
        if self.dc.fps != self.ac.fps or self.dc.subject_id != self.ac.subject_id:
            raise ParameterError("dc and ac maps must share fps and subject")
