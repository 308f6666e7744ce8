"""Clip extraction: clean-cut windows for pretraining, sliding windows with
probabilistic labels for fine-tuning and inference.

Clean-cut sampling trims a guard margin from both ends of every segment and
emits consecutive non-overlapping windows from what remains, so every emitted
window is label-pure and stays clear of segment boundaries. Sliding sampling
covers the whole recording at a fixed stride and labels each window with the
fraction of movement time it contains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .timeline import MOVEMENT, SegmentTimeline, VideoClip, movement_fraction, validate_timeline


class Window(NamedTuple):
    start_s: float
    end_s: float


@dataclass(frozen=True)
class SamplerConfig:
    clip_len_s: float = 5.0
    target_fps: float = 10.0
    delta_s: float = 2.0
    stride_s: float = 1.0

    def __post_init__(self):
        if not self.clip_len_s > 0:
            raise ValueError(f"clip_len_s must be > 0, got {self.clip_len_s}")
        if self.delta_s < 0:
            raise ValueError(f"delta_s must be >= 0, got {self.delta_s}")
        if not self.stride_s > 0:
            raise ValueError(f"stride_s must be > 0, got {self.stride_s}")
        n = self.clip_len_s * self.target_fps
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ValueError(
                f"clip_len_s * target_fps must be a positive integer, got {n}")

    @property
    def frames_per_clip(self) -> int:
        return int(round(self.clip_len_s * self.target_fps))


def clean_cut_windows(timeline: SegmentTimeline,
                      cfg: SamplerConfig) -> list[tuple[Window, str]]:
    """Label-pure windows: per segment, trim delta_s from both ends, then emit
    consecutive non-overlapping clip_len_s windows left-aligned, dropping the
    tail remainder. Segments too short after trimming yield nothing.
    """
    violations = validate_timeline(timeline)
    if violations:
        raise ValueError(f"invalid timeline: {violations[0]}")
    out: list[tuple[Window, str]] = []
    for seg in timeline.segments:
        lo = seg.start_s + cfg.delta_s
        hi = seg.end_s - cfg.delta_s
        n = int(math.floor((hi - lo) / cfg.clip_len_s + 1e-9)) if hi > lo else 0
        for i in range(n):
            a = lo + i * cfg.clip_len_s
            out.append((Window(a, a + cfg.clip_len_s), seg.label))
    return out


def sliding_window_grid(duration_s: float, cfg: SamplerConfig) -> list[Window]:
    """Window starts at 0, stride, 2*stride, ... while the clip still fits."""
    out: list[Window] = []
    i = 0
    while True:
        a = i * cfg.stride_s
        b = a + cfg.clip_len_s
        if b > duration_s + 1e-12:
            break
        out.append(Window(a, min(b, duration_s)))
        i += 1
    return out


def sliding_windows(timeline: SegmentTimeline,
                    cfg: SamplerConfig) -> list[tuple[Window, float]]:
    """Windows at 0, stride, 2*stride, ... while they fit, each labeled with
    its movement fraction. A recording shorter than one clip yields [].
    """
    violations = validate_timeline(timeline)
    if violations:
        raise ValueError(f"invalid timeline: {violations[0]}")
    return [(win, movement_fraction(timeline, win.start_s, win.end_s))
            for win in sliding_window_grid(timeline.duration_s, cfg)]


def resample_indices(window: Window, cfg: SamplerConfig, source_fps: float,
                     n_source_frames: int) -> np.ndarray:
    """Source frame indices for a window, by nearest-index resampling.

    The first selected frame is the earliest source frame at or after the
    window start; subsequent output frames step by source_fps / target_fps,
    rounded to the nearest source index and clamped inside the window.
    Indices are non-decreasing.
    """
    if source_fps + 1e-9 < cfg.target_fps:
        raise ValueError(
            f"source fps {source_fps} below target fps {cfg.target_fps}")
    a, b = window
    if a < 0 or b * source_fps > n_source_frames + 1e-6:
        raise ValueError(
            f"window [{a}, {b}) outside recording of {n_source_frames} frames "
            f"at {source_fps} fps")
    first = int(math.ceil(a * source_fps - 1e-9))
    last = int(math.ceil(b * source_fps - 1e-9)) - 1  # last frame with time < b
    last = min(last, n_source_frames - 1)
    step = source_fps / cfg.target_fps
    idx = first + np.floor(np.arange(cfg.frames_per_clip) * step + 0.5).astype(np.int64)
    return np.minimum(idx, last)


def materialize_clip(frames: np.ndarray, source_fps: float, window: Window,
                     cfg: SamplerConfig, source_id: str = "") -> VideoClip:
    """Extract a clip of exactly frames_per_clip frames from recording frames.

    ``frames`` is (T, H, W), either float in [0, 1] or uint8 (scaled by 255).
    """
    idx = resample_indices(window, cfg, source_fps, frames.shape[0])
    sel = frames[idx]
    if sel.dtype == np.uint8:
        sel = sel.astype(np.float32) / np.float32(255.0)
    else:
        sel = np.ascontiguousarray(sel, dtype=np.float32)
    return VideoClip(frames=sel, fps=cfg.target_fps, source_id=source_id,
                     start_time_s=window.start_s)


def manifest_rows(recording_id: str,
                  windows: list[tuple[Window, float | str]]) -> list[dict]:
    """Manifest rows for a window list; hard labels become p in {0.0, 1.0}."""
    rows = []
    for window, label in windows:
        p = label if isinstance(label, float) else (1.0 if label == MOVEMENT else 0.0)
        rows.append({"recording_id": recording_id, "start_s": window.start_s,
                     "end_s": window.end_s, "p_movement": float(p)})
    return rows
