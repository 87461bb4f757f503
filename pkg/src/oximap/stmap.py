"""ROI grid construction, spatio-temporal map extraction, and the
train-time / causal test-time normalizations.

The map X has shape (3, N, T): channel (red, green, blue), ROI index
(row-major over the block grid), frame index. Entry (c, n, t) is the
spatial mean of channel c over ROI n in frame t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, DimensionError, IdentityError, ShapeError

__all__ = [
    "FaceRect",
    "RoiGrid",
    "FrameSequence",
    "SpatioTemporalMap",
    "RunningMoments",
    "make_grid",
    "build_map",
    "normalize_train",
    "normalize_test_causal",
    "DEFAULT_ROWS",
    "DEFAULT_COLS",
]

DEFAULT_ROWS = 14
DEFAULT_COLS = 16


@dataclass(frozen=True)
class FaceRect:
    """Axis-aligned pixel rectangle (the region below the eyes)."""

    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1:
            raise DimensionError(f"rectangle width must be >= 1, got {self.width}")
        if self.height < 1:
            raise DimensionError(f"rectangle height must be >= 1, got {self.height}")
        if self.x0 < 0 or self.y0 < 0:
            raise DimensionError(f"rectangle origin must be non-negative, got ({self.x0}, {self.y0})")


@dataclass(frozen=True)
class RoiGrid:
    """Row-major list of ROI rectangles tiling a face rectangle."""

    rects: tuple[FaceRect, ...]
    rows: int = DEFAULT_ROWS
    cols: int = DEFAULT_COLS

    def __post_init__(self):
        if len(self.rects) != self.rows * self.cols:
            raise DimensionError(
                f"grid has {len(self.rects)} blocks, expected rows*cols = {self.rows * self.cols}"
            )

    @property
    def n_rois(self) -> int:
        return len(self.rects)


@dataclass(frozen=True)
class FrameSequence:
    """Stack of RGB frames, values in [0,1]. 8-bit input is divided by 255."""

    frames: np.ndarray  # (T, H, W, 3)
    fps: float = 30.0

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 4 or f.shape[-1] != 3:
            raise ShapeError(f"frames must have shape (T, H, W, 3), got {f.shape}")
        if f.dtype == np.uint8:
            f = f.astype(np.float32) / 255.0
        object.__setattr__(self, "frames", f)
        if not self.fps > 0:
            raise DimensionError(f"fps must be positive, got {self.fps}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


@dataclass(frozen=True)
class SpatioTemporalMap:
    """Map X of shape (3, N, T): channel (R,G,B), ROI index, frame index."""

    data: np.ndarray
    fps: float = 30.0
    subject_id: str = ""

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 3 or d.shape[0] != 3:
            raise ShapeError(f"map must have shape (3, N, T), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ShapeError("map contains non-finite entries")
        object.__setattr__(self, "data", d)

    @property
    def n_rois(self) -> int:
        return self.data.shape[1]

    @property
    def n_frames(self) -> int:
        return self.data.shape[2]


def _axis_edges(start: int, length: int, blocks: int) -> list[tuple[int, int]]:
    """Split [start, start+length) into `blocks` spans; remainder pixels go
    to the trailing block."""
    base = length // blocks
    spans = []
    for i in range(blocks):
        lo = start + i * base
        hi = start + (i + 1) * base if i < blocks - 1 else start + length
        spans.append((lo, hi - lo))
    return spans


def make_grid(rect: FaceRect, rows: int = DEFAULT_ROWS, cols: int = DEFAULT_COLS) -> RoiGrid:
    """Tile `rect` with rows x cols non-overlapping blocks, row-major order."""
    if rows < 1 or cols < 1:
        raise DimensionError(f"grid needs at least one row and column, got {rows}x{cols}")
    if rect.width < cols:
        raise DimensionError(f"rectangle width {rect.width} cannot admit {cols} columns of >= 1 px")
    if rect.height < rows:
        raise DimensionError(f"rectangle height {rect.height} cannot admit {rows} rows of >= 1 px")
    col_spans = _axis_edges(rect.x0, rect.width, cols)
    row_spans = _axis_edges(rect.y0, rect.height, rows)
    rects = tuple(
        FaceRect(x0=cx, y0=ry, width=cw, height=rh)
        for ry, rh in row_spans
        for cx, cw in col_spans
    )
    return RoiGrid(rects=rects, rows=rows, cols=cols)


def build_map(frames: FrameSequence, grid: RoiGrid, subject_id: str = "") -> SpatioTemporalMap:
    """Average each ROI per frame and channel: X[c, n, t] = mean over ROI n."""
    h, w = frames.frame_shape
    for r in grid.rects:
        if r.x0 + r.width > w or r.y0 + r.height > h:
            raise BoundsError(
                f"ROI at ({r.x0},{r.y0}) size {r.width}x{r.height} exceeds frame bounds {w}x{h}"
            )
    t = frames.n_frames
    if t < 1:
        raise ShapeError("frame sequence is empty")
    data = np.empty((3, grid.n_rois, t), dtype=np.float32)
    f = frames.frames
    for n, r in enumerate(grid.rects):
        block = f[:, r.y0 : r.y0 + r.height, r.x0 : r.x0 + r.width, :]
        # (T, 3): fixed summation order (numpy reduction), mean in float64
        data[:, n, :] = block.mean(axis=(1, 2), dtype=np.float64).T
    return SpatioTemporalMap(data=data, fps=frames.fps, subject_id=subject_id)


def normalize_train(stmap: SpatioTemporalMap) -> SpatioTemporalMap:
    """Z-score each (channel, ROI) trace over the full recording.

    Population (1/T) variance; zero-variance traces become all zeros.
    """
    d = stmap.data
    if d.shape[2] < 2:
        raise ShapeError("normalization needs at least 2 frames")
    mean = d.mean(axis=2, keepdims=True, dtype=np.float64)
    std = d.std(axis=2, keepdims=True, dtype=np.float64)
    out = np.divide(d - mean, std, out=np.zeros(d.shape, dtype=np.float64), where=std > 0)
    return SpatioTemporalMap(data=out.astype(d.dtype), fps=stmap.fps, subject_id=stmap.subject_id)


@dataclass
class RunningMoments:
    """Streaming per-(channel, ROI) count / mean / M2 accumulator.

    Batches merge by the parallel-variance rule, so the final statistics
    equal the whole-recording batch statistics regardless of chunking.
    """

    subject_id: str
    count: int
    mean: np.ndarray  # (3, N)
    m2: np.ndarray  # (3, N)

    @classmethod
    def create(cls, subject_id: str, n_rois: int) -> "RunningMoments":
        return cls(
            subject_id=subject_id,
            count=0,
            mean=np.zeros((3, n_rois), dtype=np.float64),
            m2=np.zeros((3, n_rois), dtype=np.float64),
        )

    def update(self, samples: np.ndarray) -> None:
        """Fold a (3, N, T_w) block of new samples into the moments."""
        nb = samples.shape[2]
        if nb == 0:
            return
        mean_b = samples.mean(axis=2, dtype=np.float64)
        m2_b = ((samples - mean_b[:, :, None]) ** 2).sum(axis=2, dtype=np.float64)
        na = self.count
        n = na + nb
        delta = mean_b - self.mean
        self.mean = self.mean + delta * (nb / n)
        self.m2 = self.m2 + m2_b + delta * delta * (na * nb / n)
        self.count = n

    def std(self) -> np.ndarray:
        """Population standard deviation per trace (zeros while count < 1)."""
        if self.count < 1:
            return np.zeros_like(self.mean)
        return np.sqrt(self.m2 / self.count)


def normalize_test_causal(
    window: SpatioTemporalMap, history: RunningMoments
) -> tuple[SpatioTemporalMap, RunningMoments]:
    """Z-score a window by statistics over all samples seen so far.

    The window's own samples are folded into the accumulator first, then
    used for scoring, so the first window reduces to its own statistics and
    no future data is ever used.
    """
    if history.subject_id != window.subject_id:
        raise IdentityError(
            f"accumulator belongs to subject {history.subject_id!r}, window to {window.subject_id!r}"
        )
    if history.mean.shape[1] != window.n_rois:
        raise ShapeError(
            f"accumulator tracks {history.mean.shape[1]} ROIs, window has {window.n_rois}"
        )
    d = window.data
    history.update(np.asarray(d, dtype=np.float64))
    std = history.std()[:, :, None]
    mean = history.mean[:, :, None]
    out = np.divide(d - mean, std, out=np.zeros(d.shape, dtype=np.float64), where=std > 0)
    normed = SpatioTemporalMap(data=out.astype(d.dtype), fps=window.fps, subject_id=window.subject_id)
    return normed, history
