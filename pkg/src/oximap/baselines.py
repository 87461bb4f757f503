"""Ratio-of-ratios SpO2 estimation with linear calibration, and the
ordinary-least-squares baseline on per-channel AC/DC features.

Both baselines consume raw (unnormalized) map windows: DC is the window
mean of a trace and AC its population standard deviation, so z-scoring
would destroy the very quantities being ratioed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DegenerateSignalError, LengthError, RankError
from .stmap import SpatioTemporalMap

__all__ = [
    "SPO2_MIN",
    "SPO2_MAX",
    "RorCalibration",
    "LinearModel",
    "window_dc_ac",
    "compute_ror",
    "fit_calibration",
    "predict_ror",
    "bottom_half_mask",
    "lr_features",
    "fit_lr",
    "predict_lr",
    "model_to_json",
    "model_from_json",
]

SPO2_MIN = 85.0
SPO2_MAX = 100.0

LR_FEATURE_NAMES = ("ac_dc_red", "ac_dc_green", "ac_dc_blue")


def clamp_spo2(y):
    return np.clip(y, SPO2_MIN, SPO2_MAX)


@dataclass(frozen=True)
class RorCalibration:
    """SpO2 ~ a * RoR + b."""

    a: float
    b: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise DataError(f"calibration coefficients must be finite, got ({self.a}, {self.b})")


@dataclass(frozen=True)
class LinearModel:
    """OLS plane over named features."""

    weights: tuple[float, ...]
    bias: float
    feature_names: tuple[str, ...] = LR_FEATURE_NAMES

    def __post_init__(self):
        if len(self.weights) != len(self.feature_names):
            raise DataError(
                f"{len(self.weights)} weights for {len(self.feature_names)} features"
            )


def window_dc_ac(trace: np.ndarray) -> tuple[float, float]:
    """(mean, population std) of one raw trace window."""
    trace = np.asarray(trace, dtype=np.float64)
    if trace.ndim != 1 or trace.size < 2:
        raise LengthError(f"trace must be 1-d with >= 2 samples, got shape {trace.shape}")
    return float(trace.mean()), float(trace.std())


def compute_ror(red: np.ndarray, blue: np.ndarray) -> float:
    """(AC_R/DC_R) / (AC_B/DC_B) of two same-length raw windows."""
    red = np.asarray(red, dtype=np.float64)
    blue = np.asarray(blue, dtype=np.float64)
    if red.shape != blue.shape:
        raise LengthError(f"red shape {red.shape} != blue shape {blue.shape}")
    dc_r, ac_r = window_dc_ac(red)
    dc_b, ac_b = window_dc_ac(blue)
    if dc_b == 0.0 or ac_b == 0.0:
        raise DegenerateSignalError("blue channel has zero DC or zero AC in this window")
    if dc_r == 0.0:
        raise DegenerateSignalError("red channel has zero DC in this window")
    return (ac_r / dc_r) / (ac_b / dc_b)


def fit_calibration(rors, spo2) -> RorCalibration:
    """Least-squares line through (RoR, SpO2) points."""
    r = np.asarray(rors, dtype=np.float64)
    y = np.asarray(spo2, dtype=np.float64)
    if r.shape != y.shape or r.ndim != 1 or r.size < 2:
        raise LengthError("need matching 1-d arrays of >= 2 calibration points")
    if np.ptp(r) == 0.0:
        raise RankError("all RoR values identical; slope is unidentifiable")
    design = np.column_stack([r, np.ones_like(r)])
    (a, b), *_ = np.linalg.lstsq(design, y, rcond=None)
    return RorCalibration(a=float(a), b=float(b))


def bottom_half_mask(n_rois: int) -> np.ndarray:
    """Default pooled region: the lower half of the row-major grid
    (rows are top-to-bottom, so the bottom half is the trailing indices)."""
    mask = np.zeros(n_rois, dtype=bool)
    mask[n_rois // 2 :] = True
    return mask


def _pooled_traces(window: SpatioTemporalMap, roi_mask) -> np.ndarray:
    """(3, T) raw traces averaged over the masked ROIs."""
    mask = bottom_half_mask(window.n_rois) if roi_mask is None else np.asarray(roi_mask)
    if mask.dtype == bool:
        if mask.shape != (window.n_rois,):
            raise LengthError(f"mask length {mask.shape} != n_rois {window.n_rois}")
        if not mask.any():
            raise RankError("roi mask selects no ROIs")
        idx = np.flatnonzero(mask)
    else:
        idx = mask.astype(int)
        if idx.size == 0:
            raise RankError("roi mask selects no ROIs")
    return window.data[:, idx, :].mean(axis=1, dtype=np.float64)


def predict_ror(cal: RorCalibration, window: SpatioTemporalMap, roi_mask=None) -> float:
    """a * RoR(window) + b, clamped to the physiological range."""
    pooled = _pooled_traces(window, roi_mask)
    ror = compute_ror(pooled[0], pooled[2])
    return float(clamp_spo2(cal.a * ror + cal.b))


def lr_features(window: SpatioTemporalMap, roi_mask=None) -> np.ndarray:
    """Per-channel AC/DC ratio of the pooled window trace, order (R, G, B)."""
    pooled = _pooled_traces(window, roi_mask)
    feats = np.empty(3)
    for c in range(3):
        dc, ac = window_dc_ac(pooled[c])
        if dc == 0.0:
            raise DegenerateSignalError(f"channel {c} has zero DC in this window")
        feats[c] = ac / dc
    return feats


def fit_lr(features, spo2) -> LinearModel:
    """OLS on the 3 ratio features with intercept."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(spo2, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise LengthError(f"features {x.shape} incompatible with targets {y.shape}")
    if x.shape[0] < 4:
        raise LengthError(f"need >= 4 windows to fit, got {x.shape[0]}")
    design = np.column_stack([x, np.ones(x.shape[0])])
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise RankError("design matrix is singular; features are collinear")
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return LinearModel(weights=tuple(float(w) for w in coef[:-1]), bias=float(coef[-1]))


def predict_lr(model: LinearModel, features) -> float:
    x = np.asarray(features, dtype=np.float64)
    if x.shape != (len(model.weights),):
        raise LengthError(f"expected {len(model.weights)} features, got shape {x.shape}")
    return float(clamp_spo2(np.dot(model.weights, x) + model.bias))


def model_to_json(model) -> str:
    if isinstance(model, RorCalibration):
        doc = {"kind": "ror", "a": model.a, "b": model.b}
    elif isinstance(model, LinearModel):
        doc = {
            "kind": "lr",
            "weights": list(model.weights),
            "bias": model.bias,
            "feature_names": list(model.feature_names),
        }
    else:
        raise DataError(f"cannot serialize {type(model).__name__}")
    return json.dumps(doc, sort_keys=True)


def model_from_json(text: str):
    doc = json.loads(text)
    kind = doc.get("kind")
    if kind == "ror":
        return RorCalibration(a=float(doc["a"]), b=float(doc["b"]))
    if kind == "lr":
        return LinearModel(
            weights=tuple(float(w) for w in doc["weights"]),
            bias=float(doc["bias"]),
            feature_names=tuple(doc["feature_names"]),
        )
    raise DataError(f"unknown model kind {kind!r}")
