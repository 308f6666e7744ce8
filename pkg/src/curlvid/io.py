"""Bit-exact file formats: raw-frame video containers, timeline JSON, clip
manifests, metric reports, and encoder checkpoints.

All writers are atomic (temp file + rename in the target directory) and all
round-trips are bit-exact. Parse failures raise :class:`FormatError` with the
path and a byte offset or JSON key path.
"""

from __future__ import annotations

import csv
import io as _stdio
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import FormatError
from .timeline import LABELS, Segment, SegmentTimeline

VIDEO_MAGIC = b"CURLVID1"
CHECKPOINT_MAGIC = b"CURLCKP1"
CHECKPOINT_VERSION = 1

DTYPE_U8 = 0
DTYPE_F32 = 1


@dataclass(frozen=True)
class RawVideoContainer:
    """Decoded raw-frame video: frames (T, H, W) float32 in [0, 1] plus fps.

    ``dtype_tag`` records the on-disk payload type (0 = u8 intensities scaled
    by 255, 1 = raw float32).
    """

    frames: np.ndarray
    fps: float
    dtype_tag: int = DTYPE_U8


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# raw video container


def encode_video(frames: np.ndarray, fps: float, dtype_tag: int = DTYPE_U8) -> bytes:
    """Serialize a (T, H, W) float array in [0, 1] to container bytes."""
    if frames.ndim != 3:
        raise ValueError(f"frames must be (T, H, W), got shape {frames.shape}")
    t, h, w = frames.shape
    header = VIDEO_MAGIC + struct.pack("<IIIfB", t, h, w, float(fps), dtype_tag)
    if dtype_tag == DTYPE_U8:
        payload = np.clip(np.rint(frames * 255.0), 0, 255).astype(np.uint8).tobytes()
    elif dtype_tag == DTYPE_F32:
        payload = np.ascontiguousarray(frames, dtype="<f4").tobytes()
    else:
        raise ValueError(f"unknown dtype tag {dtype_tag}")
    return header + payload


def decode_video(data: bytes, path=None) -> RawVideoContainer:
    hdr_len = len(VIDEO_MAGIC) + struct.calcsize("<IIIfB")
    if len(data) < hdr_len:
        raise FormatError(f"file too short for header ({len(data)} < {hdr_len} bytes)",
                          path=path, location=0)
    if data[:8] != VIDEO_MAGIC:
        raise FormatError(f"bad magic {data[:8]!r}, expected {VIDEO_MAGIC!r}", path=path, location=0)
    t, h, w, fps, tag = struct.unpack_from("<IIIfB", data, 8)
    if tag not in (DTYPE_U8, DTYPE_F32):
        raise FormatError(f"unknown dtype tag {tag}", path=path, location=hdr_len - 1)
    itemsize = 1 if tag == DTYPE_U8 else 4
    expected = t * h * w * itemsize
    actual = len(data) - hdr_len
    if actual != expected:
        raise FormatError(
            f"payload length mismatch: expected {expected} bytes, got {actual}",
            path=path, location=hdr_len,
        )
    if tag == DTYPE_U8:
        raw = np.frombuffer(data, dtype=np.uint8, offset=hdr_len)
        frames = raw.reshape(t, h, w).astype(np.float32) / np.float32(255.0)
    else:
        raw = np.frombuffer(data, dtype="<f4", offset=hdr_len)
        frames = raw.reshape(t, h, w).astype(np.float32)
        lo, hi = float(frames.min()), float(frames.max())
        if lo < 0.0 or hi > 1.0:
            raise FormatError(
                f"f32 intensities out of [0, 1]: range [{lo}, {hi}]", path=path, location=hdr_len
            )
    return RawVideoContainer(frames=frames, fps=float(fps), dtype_tag=tag)


def write_video(path, frames: np.ndarray, fps: float, dtype_tag: int = DTYPE_U8) -> None:
    atomic_write_bytes(path, encode_video(frames, fps, dtype_tag))


def read_video(path) -> RawVideoContainer:
    data = Path(path).read_bytes()
    return decode_video(data, path=path)


# ---------------------------------------------------------------------------
# timeline JSON


def _require_keys(obj: dict, required: dict, context: str, path) -> None:
    """Check that ``obj`` has exactly the keys of ``required`` (name -> type)."""
    for key in obj:
        if key not in required:
            raise FormatError(f"unknown field {key!r}", path=path, location=f"{context}.{key}")
    for key, typ in required.items():
        if key not in obj:
            raise FormatError(f"missing field {key!r}", path=path, location=context)
        if not isinstance(obj[key], typ):
            raise FormatError(
                f"field {key!r} must be {typ}, got {type(obj[key]).__name__}",
                path=path, location=f"{context}.{key}",
            )


def timeline_to_json(timeline: SegmentTimeline) -> str:
    doc = {
        "recording_id": timeline.recording_id,
        "duration_s": timeline.duration_s,
        "segments": [
            {"start_s": s.start_s, "end_s": s.end_s, "label": s.label, "subtype": s.subtype}
            for s in timeline.segments
        ],
    }
    return json.dumps(doc, indent=2)


def timeline_from_json(text: str, path=None) -> SegmentTimeline:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"invalid JSON: {e.msg}", path=path, location=f"char {e.pos}") from e
    if not isinstance(doc, dict):
        raise FormatError("top level must be an object", path=path, location="$")
    _require_keys(doc, {"recording_id": str, "duration_s": (int, float), "segments": list},
                  "$", path)
    segments = []
    for i, raw in enumerate(doc["segments"]):
        ctx = f"segments[{i}]"
        if not isinstance(raw, dict):
            raise FormatError("segment must be an object", path=path, location=ctx)
        _require_keys(raw, {"start_s": (int, float), "end_s": (int, float),
                            "label": str, "subtype": str}, ctx, path)
        if raw["label"] not in LABELS:
            raise FormatError(f"label must be one of {LABELS}, got {raw['label']!r}",
                              path=path, location=f"{ctx}.label")
        segments.append(Segment(start_s=float(raw["start_s"]), end_s=float(raw["end_s"]),
                                label=raw["label"], subtype=raw["subtype"]))
    return SegmentTimeline(
        recording_id=doc["recording_id"],
        duration_s=float(doc["duration_s"]),
        segments=tuple(segments),
    )


def write_timeline(path, timeline: SegmentTimeline) -> None:
    atomic_write_text(path, timeline_to_json(timeline) + "\n")


def read_timeline(path) -> SegmentTimeline:
    return timeline_from_json(Path(path).read_text("utf-8"), path=path)


# ---------------------------------------------------------------------------
# clip manifests (JSON lines)

_MANIFEST_FIELDS = {"recording_id": str, "start_s": (int, float),
                    "end_s": (int, float), "p_movement": (int, float)}


def write_manifest(path, rows: Iterable[dict]) -> None:
    """Write clip manifest rows {recording_id, start_s, end_s, p_movement} as JSONL.

    ``repr``-roundtrip floats preserve p_movement to full precision.
    """
    lines = []
    for row in rows:
        _require_keys(row, _MANIFEST_FIELDS, "$", path)
        lines.append(json.dumps(row))
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_manifest(path) -> list[dict]:
    rows = []
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as e:
            raise FormatError(f"invalid JSON: {e.msg}", path=path, location=f"line {lineno}") from e
        if not isinstance(row, dict):
            raise FormatError("row must be an object", path=path, location=f"line {lineno}")
        _require_keys(row, _MANIFEST_FIELDS, f"line {lineno}", path)
        row["start_s"] = float(row["start_s"])
        row["end_s"] = float(row["end_s"])
        row["p_movement"] = float(row["p_movement"])
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# metric reports

REPORT_METRIC_KEYS = ("specificity", "sensitivity", "weighted_precision",
                      "weighted_f1", "bacc", "auroc")


def write_report_json(path, report: dict) -> None:
    atomic_write_text(path, json.dumps(report, indent=2) + "\n")


def write_report_csv(path, rows: list[dict], columns: list[str] | None = None) -> None:
    """Write one CSV row per report; missing/None values become empty cells."""
    if columns is None:
        columns = ["fold", *REPORT_METRIC_KEYS]
    buf = _stdio.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in columns})
    atomic_write_text(path, buf.getvalue())


# ---------------------------------------------------------------------------
# encoder checkpoints

def encode_checkpoint(config: dict, arrays: dict[str, np.ndarray]) -> bytes:
    """Serialize named float32 parameter arrays plus a config dict."""
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<I", CHECKPOINT_VERSION)
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    out += struct.pack("<I", len(cfg))
    out += cfg
    names = list(arrays)
    out += struct.pack("<I", len(names))
    for name in names:
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb))
        out += nb
        out += struct.pack("<I", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    return bytes(out)


def decode_checkpoint(data: bytes, path=None) -> tuple[dict, dict[str, np.ndarray]]:
    off = 0
    if data[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {data[:8]!r}, expected {CHECKPOINT_MAGIC!r}",
                          path=path, location=0)
    off = 8
    (version,) = struct.unpack_from("<I", data, off)
    off += 4
    if version != CHECKPOINT_VERSION:
        raise FormatError(
            f"unsupported checkpoint format version {version}, expected {CHECKPOINT_VERSION}",
            path=path, location=8,
        )
    (cfg_len,) = struct.unpack_from("<I", data, off)
    off += 4
    try:
        config = json.loads(data[off:off + cfg_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"bad config block: {e}", path=path, location=off) from e
    off += cfg_len
    (n_records,) = struct.unpack_from("<I", data, off)
    off += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_records):
        try:
            (name_len,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + name_len].decode("utf-8")
            off += name_len
            (ndim,) = struct.unpack_from("<I", data, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            nbytes = count * 4
            if off + nbytes > len(data):
                raise FormatError(
                    f"truncated payload for {name!r}: expected {nbytes} bytes, "
                    f"got {len(data) - off}", path=path, location=off)
            arr = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(shape)
            off += nbytes
            arrays[name] = arr.copy()
        except struct.error as e:
            raise FormatError(f"truncated record: {e}", path=path, location=off) from e
    return config, arrays


def save_checkpoint(path, config: dict, arrays: dict[str, np.ndarray]) -> None:
    atomic_write_bytes(path, encode_checkpoint(config, arrays))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    return decode_checkpoint(Path(path).read_bytes(), path=path)
