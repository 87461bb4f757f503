"""Synthetic subjects with analytically known SpO2.

Each ROI trace follows the ratio-of-ratios physics:

    x_c,n(t) = d_c,n (1 + drift_n(t)) + d_c,n rho_c(t) p(t) + sigma_c,n eta(t)

with one pulse waveform p(t) shared by all channels, so the std-based
AC ratio cancels p exactly and RoR equals rho_R / rho_B in closed form.
The red pulsatile ratio encodes SpO2 through the ground-truth line:
rho_R(t) = RoR*(t) rho_B, RoR*(t) = (spo2(t) - b_star) / a_star.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, RangeError
from .stmap import FrameSequence, RoiGrid, SpatioTemporalMap

__all__ = [
    "SynthParams",
    "Spo2Trace",
    "SubjectRecord",
    "spo2_profile",
    "subject_seed",
    "gen_subject",
    "gen_subjects",
    "render_frames",
]

# base DC reflectance per channel; red brightest on skin
_DC_BASE = {"red": 0.60, "green": 0.40, "blue": 0.25}
_DRIFT_COMPONENTS = 3
_DRIFT_BAND_HZ = (0.02, 0.25)  # strictly below the 0.3 Hz DC cutoff
_HARMONIC_AMPLITUDE = 0.3


@dataclass(frozen=True)
class SynthParams:
    """Generator knobs; defaults follow the breath-hold protocol geometry."""

    duration_s: float = 180.0
    fps: float = 30.0
    n_rois: int = 224
    hr_hz: tuple[float, float] = (0.9, 2.3)
    spo2_baseline: float = 98.0
    dip_depth: float = 6.0
    hold_s: float = 30.0
    rest_s: float = 30.0
    cycles: int = 3
    a_star: float = -30.0
    b_star: float = 110.0
    rho_blue: float = 0.002
    rho_green: float = 0.004
    drift_amp: float = 0.01
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.hr_hz
        if not (0.75 < lo <= hi < 2.5):
            raise RangeError(f"hr range {self.hr_hz} must lie within (0.75, 2.5) Hz")
        if self.rho_blue <= 0 or self.rho_green <= 0:
            raise ParameterError("rho amplitudes must be positive")
        if self.duration_s <= 0 or self.fps <= 0 or self.n_rois < 1:
            raise ParameterError("duration, fps and n_rois must be positive")
        if self.dip_depth < 0:
            raise ParameterError(f"dip_depth must be >= 0, got {self.dip_depth}")
        lo_spo2 = self.spo2_baseline - self.dip_depth
        if not (85.0 <= lo_spo2 and self.spo2_baseline <= 100.0):
            raise RangeError(
                f"spo2 profile spans [{lo_spo2}, {self.spo2_baseline}], must stay within [85, 100]"
            )
        if self.a_star == 0:
            raise ParameterError("a_star must be nonzero")


@dataclass(frozen=True)
class Spo2Trace:
    """Ground-truth SpO2 percentages sampled at 1 Hz starting at t0."""

    values: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if np.any(v < 0) or np.any(v > 100):
            raise RangeError("spo2 values must lie in [0, 100]")
        object.__setattr__(self, "values", v)

    @property
    def duration_s(self) -> float:
        return float(len(self.values))


@dataclass(frozen=True)
class SubjectRecord:
    """One synthetic subject: map + ground truth + parameter snapshot."""

    subject_id: str
    map: SpatioTemporalMap
    spo2: Spo2Trace
    meta: SynthParams


def spo2_profile(params: SynthParams, t) -> np.ndarray:
    """Breath-hold SpO2 profile: rest at baseline, raised-cosine descent to
    baseline - dip_depth over each hold, raised-cosine recovery over the
    following rest. C1 continuous; first rest period sits at baseline.
    """
    t = np.asarray(t, dtype=np.float64)
    base, dip = params.spo2_baseline, params.dip_depth
    period = params.rest_s + params.hold_s
    out = np.full(t.shape, base)
    if dip == 0 or params.cycles == 0:
        return out

    cyc = np.floor_divide(t, period).astype(int)
    tau = t - cyc * period
    in_protocol = (t >= 0) & (cyc < params.cycles)

    resting = in_protocol & (tau < params.rest_s)
    holding = in_protocol & ~resting
    # recovery during rest (cycle 0 rests at baseline: no preceding hold)
    rec = resting & (cyc > 0)
    u = tau[rec] / params.rest_s
    out[rec] = base - dip * (1.0 + np.cos(np.pi * u)) / 2.0
    u = (tau[holding] - params.rest_s) / params.hold_s
    out[holding] = base - dip * (1.0 - np.cos(np.pi * u)) / 2.0
    # one recovery after the final hold, then baseline
    after = (t >= 0) & (cyc >= params.cycles)
    u = np.clip((t[after] - params.cycles * period) / params.rest_s, 0.0, 1.0)
    out[after] = base - dip * (1.0 + np.cos(np.pi * u)) / 2.0
    return out


def subject_seed(master_seed: int, index: int) -> int:
    """Splitmix-style per-subject seed: advance by the golden-ratio step,
    then apply the two xor-multiply finalizers."""
    mask = (1 << 64) - 1
    z = (int(master_seed) + (index + 1) * 0x9E3779B97F4A7C15) & mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    return z ^ (z >> 31)


def gen_subject(params: SynthParams, subject_id: str, index: int = 0) -> SubjectRecord:
    """Generate one subject deterministically from (params.seed, index)."""
    rng = np.random.default_rng(subject_seed(params.seed, index))
    n = params.n_rois
    t_frames = int(round(params.duration_s * params.fps))
    t = np.arange(t_frames, dtype=np.float64) / params.fps

    spo2_t = spo2_profile(params, t)
    ror_star = (spo2_t - params.b_star) / params.a_star
    if np.min(ror_star) <= 0:
        raise ParameterError(
            f"spo2 profile and calibration ({params.a_star}, {params.b_star}) give RoR* <= 0"
        )

    hr = rng.uniform(*params.hr_hz)
    phase0 = rng.uniform(0.0, 2.0 * np.pi)
    phi = 2.0 * np.pi * hr * t + phase0
    pulse = np.sin(phi) + _HARMONIC_AMPLITUDE * np.sin(2.0 * phi)

    # per-ROI DC levels: channel base scaled by +-20% per ROI
    base = np.array([_DC_BASE["red"], _DC_BASE["green"], _DC_BASE["blue"]])
    d = base[:, None] * rng.uniform(0.8, 1.2, size=(3, n))

    # per-ROI band-limited drift shared across channels
    freqs = rng.uniform(*_DRIFT_BAND_HZ, size=(n, _DRIFT_COMPONENTS))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(n, _DRIFT_COMPONENTS))
    drift = params.drift_amp * np.mean(
        np.sin(2.0 * np.pi * freqs[:, :, None] * t[None, None, :] + phases[:, :, None]), axis=1
    )  # (n, T), |drift| <= drift_amp

    rho = np.empty((3, t_frames))
    rho[0] = ror_star * params.rho_blue
    rho[1] = params.rho_green
    rho[2] = params.rho_blue

    data = d[:, :, None] * (1.0 + drift[None, :, :]) + (
        d[:, :, None] * rho[:, None, :] * pulse[None, None, :]
    )
    if params.noise_sigma > 0:
        # sigma is relative to each trace's pulsatile amplitude d*mean(rho)
        sigma = params.noise_sigma * d[:, :, None] * rho.mean(axis=1)[:, None, None]
        data = data + sigma * rng.standard_normal((3, n, t_frames))

    stmap = SpatioTemporalMap(data=data.astype(np.float32), fps=params.fps, subject_id=subject_id)
    seconds = np.arange(int(params.duration_s), dtype=np.float64)
    trace = Spo2Trace(values=spo2_profile(params, seconds), t0=0.0)
    return SubjectRecord(subject_id=subject_id, map=stmap, spo2=trace, meta=params)


def gen_subjects(params: SynthParams, count: int, prefix: str = "s") -> list[SubjectRecord]:
    if count < 1:
        raise ParameterError(f"subject count must be >= 1, got {count}")
    return [gen_subject(params, f"{prefix}{i:03d}", index=i) for i in range(count)]


def render_frames(stmap: SpatioTemporalMap, grid: RoiGrid) -> FrameSequence:
    """Paint each ROI block with its trace value per frame (real-valued).

    Pixels outside the grid's bounding rectangle are 0; build_map over the
    same grid recovers the map exactly up to float32 rounding.
    """
    if grid.n_rois != stmap.n_rois:
        raise ParameterError(f"grid has {grid.n_rois} blocks, map has {stmap.n_rois} ROIs")
    width = max(r.x0 + r.width for r in grid.rects)
    height = max(r.y0 + r.height for r in grid.rects)
    t = stmap.n_frames
    frames = np.zeros((t, height, width, 3), dtype=np.float32)
    for idx, r in enumerate(grid.rects):
        block = stmap.data[:, idx, :].T  # (T, 3)
        frames[:, r.y0 : r.y0 + r.height, r.x0 : r.x0 + r.width, :] = block[:, None, None, :]
    return FrameSequence(frames=frames, fps=stmap.fps)
