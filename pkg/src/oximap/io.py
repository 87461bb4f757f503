"""Bit-exact file formats: STM maps, SpO2 CSV traces, raw frame dumps.

STM layout: 8-byte magic "STMAP\\0\\0\\1", a u32 little-endian byte length,
that many bytes of UTF-8 JSON header (sorted keys), then the map as raw
little-endian 32-bit reals in (channel, roi, time) row-major order.
Identical inputs always produce identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .stmap import FrameSequence, SpatioTemporalMap
from .synth import Spo2Trace

__all__ = [
    "STM_MAGIC",
    "write_stm",
    "read_stm",
    "write_spo2_csv",
    "read_spo2_csv",
    "write_frames",
    "read_frames",
]

STM_MAGIC = b"STMAP\x00\x00\x01"


def write_stm(stmap: SpatioTemporalMap, path) -> None:
    header = {
        "subject_id": stmap.subject_id,
        "channels": 3,
        "n_rois": stmap.n_rois,
        "n_frames": stmap.n_frames,
        "fps": stmap.fps,
        "layout": "c-roi-t",
        "dtype": "f32le",
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = np.ascontiguousarray(stmap.data, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(STM_MAGIC)
        f.write(np.uint32(len(hbytes)).tobytes())
        f.write(hbytes)
        f.write(payload)


def read_stm(path) -> SpatioTemporalMap:
    blob = Path(path).read_bytes()
    if blob[:8] != STM_MAGIC:
        raise DataError(f"{path}: not an STM file (bad magic)")
    hlen = int(np.frombuffer(blob, dtype="<u4", count=1, offset=8)[0])
    try:
        header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: corrupt STM header: {e}") from e
    if header.get("layout") != "c-roi-t" or header.get("dtype") != "f32le":
        raise DataError(f"{path}: unsupported STM layout/dtype")
    shape = (int(header["channels"]), int(header["n_rois"]), int(header["n_frames"]))
    count = shape[0] * shape[1] * shape[2]
    if len(blob) != 12 + hlen + 4 * count:
        raise DataError(f"{path}: STM payload size mismatch")
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=12 + hlen).reshape(shape)
    return SpatioTemporalMap(
        data=data.copy(), fps=float(header["fps"]), subject_id=str(header["subject_id"])
    )


def write_spo2_csv(trace: Spo2Trace, path) -> None:
    lines = ["t_s,spo2_pct"]
    for i, v in enumerate(trace.values):
        lines.append(f"{trace.t0 + i:g},{v:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_spo2_csv(path) -> Spo2Trace:
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not lines or lines[0] != "t_s,spo2_pct":
        raise DataError(f"{path}: expected header 't_s,spo2_pct'")
    times, values = [], []
    for ln, line in enumerate(lines[1:], start=2):
        try:
            t, v = line.split(",")
            times.append(float(t))
            values.append(float(v))
        except ValueError as e:
            raise DataError(f"{path}:{ln}: bad CSV row {line!r}") from e
    if not times:
        raise DataError(f"{path}: empty trace")
    return Spo2Trace(values=np.array(values), t0=times[0])


def write_frames(frames: FrameSequence, out_dir) -> None:
    """Frame dump: meta.json + one raw f32le HWC file per frame."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h, w = frames.frame_shape
    meta = {
        "width": w,
        "height": h,
        "fps": frames.fps,
        "count": frames.n_frames,
        "dtype": "f32le",
        "layout": "hwc",
    }
    with open(out / "meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, sort_keys=True, separators=(",", ":"))
    for i in range(frames.n_frames):
        (out / f"frame_{i:06d}.raw").write_bytes(
            np.ascontiguousarray(frames.frames[i], dtype="<f4").tobytes()
        )


def read_frames(in_dir) -> FrameSequence:
    src = Path(in_dir)
    meta_path = src / "meta.json"
    if not meta_path.exists():
        raise DataError(f"{in_dir}: missing meta.json")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("dtype") != "f32le" or meta.get("layout") != "hwc":
        raise DataError(f"{in_dir}: unsupported frame dump dtype/layout")
    h, w, count = int(meta["height"]), int(meta["width"]), int(meta["count"])
    frames = np.empty((count, h, w, 3), dtype=np.float32)
    for i in range(count):
        fp = src / f"frame_{i:06d}.raw"
        if not fp.exists():
            raise DataError(f"{in_dir}: missing frame {i}")
        raw = fp.read_bytes()
        if len(raw) != h * w * 3 * 4:
            raise DataError(f"{in_dir}: frame {i} has {len(raw)} bytes, expected {h * w * 3 * 4}")
        frames[i] = np.frombuffer(raw, dtype="<f4").reshape(h, w, 3)
    return FrameSequence(frames=frames, fps=float(meta["fps"]))
