"""Dataset preparation, the training loop, and evaluation.

Windows are 10 s of frames. Train windows step by 2 s and are normalized
with whole-recording statistics; test windows step by 10 s and are
normalized causally (statistics over samples seen so far only). Each
window carries its per-window DC/AC decomposition so the dual-branch
variants and the end-to-end reconstruction targets see exactly the same
filtered content.

SpO2 targets are scaled to [0,1] over the physiological 85..100% range;
evaluation unscales, clamps, and scores per predicted second.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .baselines import (
    LinearModel,
    RorCalibration,
    _pooled_traces,
    compute_ror,
    fit_calibration,
    fit_lr,
    lr_features,
    predict_lr,
    predict_ror,
)
from .errors import DataError, LengthError, OrderingError, RangeError
from .filters import design_bandpass, design_lowpass, split_dc_ac
from .models import Model, ModelConfig, build_model, loss_end_to_end, loss_spo2
from .stmap import RunningMoments, SpatioTemporalMap, normalize_test_causal, normalize_train
from .synth import Spo2Trace, SubjectRecord
from .tensornet import Adam, Tensor, mse_loss, no_grad

__all__ = [
    "WINDOW_S",
    "TRAIN_STEP_S",
    "TEST_STEP_S",
    "WindowSample",
    "Metrics",
    "Fold",
    "FoldPlan",
    "TrainResult",
    "interpolate_spo2",
    "scale_spo2",
    "unscale_spo2",
    "window_dataset",
    "kfold_split",
    "train_model",
    "evaluate",
    "fit_ror_baseline",
    "evaluate_ror_baseline",
    "fit_lr_baseline",
    "evaluate_lr_baseline",
]

WINDOW_S = 10.0
TRAIN_STEP_S = 2.0
TEST_STEP_S = 10.0
_SCALE_LO = 85.0
_SCALE_SPAN = 15.0
_HEAD_WARMUP_CAP = 3
_HEAD_WARMUP_LR_SCALE = 4.0


@dataclass
class WindowSample:
    """One 10-s window: normalized map, its DC/AC parts, scaled targets."""

    map_window: np.ndarray  # (3, N, 300) normalized
    dc: np.ndarray  # (3, N, 300)
    ac: np.ndarray  # (3, N, 300)
    target: np.ndarray  # (10,) scaled SpO2
    subject_id: str
    t_start: float


@dataclass(frozen=True)
class Metrics:
    mae: float
    rmse: float
    corrcoef: float

    def __post_init__(self):
        if not (0.0 <= self.mae <= self.rmse + 1e-9):
            raise DataError(f"metrics violate rmse >= mae >= 0: mae={self.mae}, rmse={self.rmse}")

    def to_json(self) -> str:
        return json.dumps(
            {"mae": self.mae, "rmse": self.rmse, "corrcoef": self.corrcoef}, sort_keys=True
        )


@dataclass(frozen=True)
class Fold:
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]


@dataclass(frozen=True)
class FoldPlan:
    k: int
    folds: tuple[Fold, ...]


def interpolate_spo2(times, values) -> Spo2Trace:
    """Linear interpolation of sparse (t, %) samples onto integer seconds.

    Covers ceil(t_first)..floor(t_last) only; no extrapolation.
    """
    t = np.asarray(times, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if t.ndim != 1 or t.shape != v.shape or t.size < 2:
        raise LengthError("need >= 2 (time, value) samples of equal length")
    if np.any(np.diff(t) <= 0):
        raise OrderingError("sample times must be strictly increasing")
    lo = int(np.ceil(t[0]))
    hi = int(np.floor(t[-1]))
    if hi < lo:
        raise RangeError(f"no integer seconds inside [{t[0]}, {t[-1]}]")
    seconds = np.arange(lo, hi + 1, dtype=np.float64)
    return Spo2Trace(values=np.interp(seconds, t, v), t0=float(lo))


def scale_spo2(y):
    """% -> scaled units: (y - 85) / 15."""
    return (np.asarray(y, dtype=np.float64) - _SCALE_LO) / _SCALE_SPAN


def unscale_spo2(s):
    """Scaled units -> %, clamped to the physiological range."""
    y = np.asarray(s, dtype=np.float64) * _SCALE_SPAN + _SCALE_LO
    return np.clip(y, _SCALE_LO, _SCALE_LO + _SCALE_SPAN)


def _trace_segment(trace: Spo2Trace, t_start: float, count: int) -> np.ndarray:
    i0 = t_start - trace.t0
    if i0 != int(i0):
        raise RangeError(f"window start {t_start}s is not aligned to the 1 Hz trace")
    i0 = int(i0)
    if i0 < 0 or i0 + count > len(trace.values):
        raise RangeError(
            f"window seconds [{t_start}, {t_start + count}) outside trace coverage"
        )
    return trace.values[i0 : i0 + count]


def window_dataset(record: SubjectRecord, step_s: float, mode: str) -> list[WindowSample]:
    """Slice one record into 10-s windows with mode-appropriate normalization."""
    if mode not in ("train", "test"):
        raise DataError(f"mode must be train or test, got {mode!r}")
    fps = record.map.fps
    win = int(round(WINDOW_S * fps))
    step = int(round(step_s * fps))
    if step < 1:
        raise LengthError(f"step {step_s}s is shorter than one frame")
    t_total = record.map.n_frames
    if t_total < win:
        raise LengthError(f"record has {t_total} frames, one window needs {win}")
    n_targets = int(WINDOW_S)
    lp = design_lowpass(fs=fps)
    bp = design_bandpass(fs=fps)

    starts = range(0, t_total - win + 1, step)
    samples: list[WindowSample] = []
    if mode == "train":
        normed = normalize_train(record.map)
        for s0 in starts:
            wmap = SpatioTemporalMap(
                data=normed.data[:, :, s0 : s0 + win], fps=fps, subject_id=record.subject_id
            )
            samples.append(_finish_window(record, wmap, s0, fps, n_targets, lp, bp))
    else:
        acc = RunningMoments.create(record.subject_id, record.map.n_rois)
        for s0 in starts:
            raw = SpatioTemporalMap(
                data=record.map.data[:, :, s0 : s0 + win], fps=fps, subject_id=record.subject_id
            )
            wmap, acc = normalize_test_causal(raw, acc)
            samples.append(_finish_window(record, wmap, s0, fps, n_targets, lp, bp))
    return samples


def _finish_window(record, wmap, s0, fps, n_targets, lp, bp) -> WindowSample:
    t_start = s0 / fps
    gt = _trace_segment(record.spo2, t_start, n_targets)
    parts = split_dc_ac(wmap, lowpass=lp, bandpass=bp)
    return WindowSample(
        map_window=wmap.data,
        dc=parts.dc.data,
        ac=parts.ac.data,
        target=scale_spo2(gt).astype(np.float32),
        subject_id=record.subject_id,
        t_start=t_start,
    )


def kfold_split(subject_ids, k: int = 5, seed: int = 0) -> FoldPlan:
    """Seeded shuffle, contiguous split into k test folds; 20% of each
    fold's training subjects (seeded per fold) are held out for validation."""
    ids = list(subject_ids)
    if len(set(ids)) != len(ids):
        raise DataError("subject ids must be unique")
    if k < 2 or k > len(ids):
        raise DataError(f"k={k} incompatible with {len(ids)} subjects")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    base, extra = divmod(len(ids), k)
    folds = []
    pos = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        test = tuple(order[pos : pos + size])
        pos += size
        rest = [s for s in order if s not in test]
        n_val = max(1, round(0.2 * len(rest)))
        val_rng = np.random.default_rng([seed, i])
        val_idx = set(val_rng.choice(len(rest), size=n_val, replace=False).tolist())
        val = tuple(s for j, s in enumerate(rest) if j in val_idx)
        train = tuple(s for j, s in enumerate(rest) if j not in val_idx)
        folds.append(Fold(train_ids=train, val_ids=val, test_ids=test))
    return FoldPlan(k=k, folds=tuple(folds))


# -- training -----------------------------------------------------------------


@dataclass
class TrainResult:
    model: Model
    history: dict
    best_epoch: int


def _batch_arrays(samples: list[WindowSample]):
    x = np.stack([s.map_window for s in samples]).astype(np.float32)
    dc = np.stack([s.dc for s in samples]).astype(np.float32)
    ac = np.stack([s.ac for s in samples]).astype(np.float32)
    y = np.stack([s.target for s in samples]).astype(np.float32)
    return x, dc, ac, y


def _forward_loss(model: Model, samples: list[WindowSample]) -> Tensor:
    x, dc, ac, y = _batch_arrays(samples)
    v = model.cfg.variant
    if v == "plain":
        pred = model.forward(x=x)
        return loss_spo2(pred.y_out, y)
    if v in ("early", "filter"):
        pred = model.forward(x_dc=dc, x_ac=ac)
        return loss_spo2(pred.y_out, y)
    pred = model.forward(x=x)
    return loss_end_to_end(pred, y, dc, ac, model.cfg.alpha)


def _dataset_loss(model: Model, samples: list[WindowSample], batch_size: int) -> float:
    total, count = 0.0, 0
    with no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i : i + batch_size]
            total += _forward_loss(model, chunk).item() * len(chunk)
            count += len(chunk)
    return total / count


def _snapshot(model: Model) -> tuple[dict, dict]:
    params = {k: t.data.copy() for k, t in model.params.items()}
    states = {k: st.copy() for k, st in model.bn.items()}
    return params, states


def _restore(model: Model, snap: tuple[dict, dict]) -> None:
    params, states = snap
    for k, t in model.params.items():
        t.data = params[k].copy()
    for k in model.bn:
        model.bn[k] = states[k].copy()


def train_model(
    cfg: ModelConfig,
    train_samples: list[WindowSample],
    val_samples: list[WindowSample],
    epochs: int = 50,
    batch_size: int = 16,
    lr: float = 1e-4,
    seed: int = 0,
) -> TrainResult:
    """Adam training with per-epoch validation and best-epoch selection.

    For the end-to-end variant with alpha > 0, the first epochs // 10
    epochs (at most 3) update only the DC/AC heads, against the raw
    reconstruction objective and at 4x the step size; joint training then
    restarts from a fresh optimizer. Trained jointly from scratch instead,
    the task branches fit the training windows while the heads stay near
    their initialization and the reconstruction term never recovers.
    Warm-up epochs appear in the history like any other epoch (their
    train_loss entries measure the reconstruction objective), and their
    validation losses are far off the best, so epoch selection ignores them.
    """
    if not train_samples or not val_samples:
        raise DataError("training requires non-empty train and validation sets")
    if epochs < 1:
        raise DataError(f"epochs must be >= 1, got {epochs}")
    d = len(train_samples[0].target)
    if cfg.d_spo2 != d:
        raise DataError(f"model d_spo2={cfg.d_spo2} but window targets have length {d}")

    model = build_model(cfg)
    warmup = 0
    if cfg.variant == "end2end" and cfg.alpha > 0:
        warmup = min(_HEAD_WARMUP_CAP, epochs // 10)
    if warmup:
        heads = {k: t for k, t in model.params.items() if k.startswith("dcac.")}
        opt = Adam(heads, lr=_HEAD_WARMUP_LR_SCALE * lr)
    else:
        opt = Adam(model.params, lr=lr)
    rng = np.random.default_rng(seed)
    history = {"train_loss": [], "val_loss": []}
    best: tuple[dict, dict] | None = None
    best_val = np.inf
    best_epoch = -1

    for epoch in range(epochs):
        if warmup and epoch == warmup:
            opt = Adam(model.params, lr=lr)
        model.train()
        order = rng.permutation(len(train_samples))
        total, count = 0.0, 0
        for i in range(0, len(order), batch_size):
            idx = order[i : i + batch_size]
            if len(idx) < 2:
                continue  # batch norm needs >= 2 samples
            chunk = [train_samples[j] for j in idx]
            opt.zero_grad()
            if epoch < warmup:
                x, dc, ac, _ = _batch_arrays(chunk)
                dc_hat, ac_hat = model.dcac_extract(Tensor(x))
                loss = mse_loss(dc_hat, dc) + mse_loss(ac_hat, ac)
            else:
                loss = _forward_loss(model, chunk)
            loss.backward()
            opt.step()
            total += loss.item() * len(chunk)
            count += len(chunk)
        model.eval()
        val = _dataset_loss(model, val_samples, batch_size)
        history["train_loss"].append(total / max(count, 1))
        history["val_loss"].append(val)
        if val < best_val:
            best_val = val
            best_epoch = epoch
            best = _snapshot(model)

    _restore(model, best)
    model.eval()
    history["best_epoch"] = best_epoch
    return TrainResult(model=model, history=history, best_epoch=best_epoch)


# -- evaluation ---------------------------------------------------------------


def _windows_by_subject(samples: list[WindowSample]) -> dict[str, list[WindowSample]]:
    by: dict[str, list[WindowSample]] = {}
    for s in samples:
        by.setdefault(s.subject_id, []).append(s)
    for lst in by.values():
        lst.sort(key=lambda s: s.t_start)
    return by


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum()) * np.sqrt((b * b).sum())
    if denom == 0.0:
        return 0.0
    return float((a * b).sum() / denom)


def _score_rows(rows: list[tuple[str, float, float, float]]) -> Metrics:
    """rows: (subject_id, t_s, pred_pct, gt_pct)."""
    if not rows:
        raise DataError("no predictions to score")
    pred = np.array([r[2] for r in rows])
    gt = np.array([r[3] for r in rows])
    err = pred - gt
    mae = float(np.abs(err).mean())
    rmse = float(np.sqrt((err * err).mean()))
    subjects = sorted({r[0] for r in rows})
    corrs = []
    for sid in subjects:
        mask = [r[0] == sid for r in rows]
        corrs.append(_pearson(pred[mask], gt[mask]))
    return Metrics(mae=mae, rmse=rmse, corrcoef=float(np.mean(corrs)))


def evaluate(
    model: Model, samples: list[WindowSample], batch_size: int = 16
) -> tuple[Metrics, list[tuple[str, float, float, float]]]:
    """Score a model on test windows; returns metrics and per-second rows."""
    if not samples:
        raise DataError("empty test set")
    model.eval()
    rows: list[tuple[str, float, float, float]] = []
    v = model.cfg.variant
    with no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i : i + batch_size]
            x, dc, ac, _ = _batch_arrays(chunk)
            if v == "plain" or v == "end2end":
                pred = model.forward(x=x)
            else:
                pred = model.forward(x_dc=dc, x_ac=ac)
            y_pct = unscale_spo2(pred.y_out.data)
            for s, yp in zip(chunk, y_pct):
                gt = unscale_spo2(s.target)
                for j in range(len(yp)):
                    rows.append((s.subject_id, s.t_start + j, float(yp[j]), float(gt[j])))
    return _score_rows(rows), rows


# -- baselines over records -----------------------------------------------------


def _raw_windows(record: SubjectRecord):
    fps = record.map.fps
    win = int(round(WINDOW_S * fps))
    step = int(round(TEST_STEP_S * fps))
    for s0 in range(0, record.map.n_frames - win + 1, step):
        raw = SpatioTemporalMap(
            data=record.map.data[:, :, s0 : s0 + win], fps=fps, subject_id=record.subject_id
        )
        t_start = s0 / fps
        gt = _trace_segment(record.spo2, t_start, int(WINDOW_S))
        yield raw, t_start, gt


def fit_ror_baseline(records: list[SubjectRecord], roi_mask=None) -> RorCalibration:
    rors, targets = [], []
    for rec in records:
        for raw, _, gt in _raw_windows(rec):
            pooled = _pooled_traces(raw, roi_mask)
            rors.append(compute_ror(pooled[0], pooled[2]))
            targets.append(gt.mean())
    return fit_calibration(rors, targets)


def evaluate_ror_baseline(
    cal: RorCalibration, records: list[SubjectRecord], roi_mask=None
) -> tuple[Metrics, list[tuple[str, float, float, float]]]:
    rows = []
    for rec in records:
        for raw, t_start, gt in _raw_windows(rec):
            pred = predict_ror(cal, raw, roi_mask)
            for j in range(len(gt)):
                rows.append((rec.subject_id, t_start + j, pred, float(gt[j])))
    return _score_rows(rows), rows


def fit_lr_baseline(records: list[SubjectRecord], roi_mask=None) -> LinearModel:
    feats, targets = [], []
    for rec in records:
        for raw, _, gt in _raw_windows(rec):
            feats.append(lr_features(raw, roi_mask))
            targets.append(gt.mean())
    return fit_lr(np.array(feats), np.array(targets))


def evaluate_lr_baseline(
    model: LinearModel, records: list[SubjectRecord], roi_mask=None
) -> tuple[Metrics, list[tuple[str, float, float, float]]]:
    rows = []
    for rec in records:
        for raw, t_start, gt in _raw_windows(rec):
            pred = predict_lr(model, lr_features(raw, roi_mask))
            for j in range(len(gt)):
                rows.append((rec.subject_id, t_start + j, pred, float(gt[j])))
    return _score_rows(rows), rows
