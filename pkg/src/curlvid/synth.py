"""Deterministic generator of ultrasound-like recordings with ground-truth timelines.

A recording is a static "anatomy" image (a handful of soft blobs) under
multiplicative, per-frame-redrawn speckle. Movement segments add a bright
blob whose trajectory follows one of four motion archetypes:

* respiratory - sinusoidal oscillation of a medium blob around a fixed point
* quick       - a short, fast jerk from one point to another (<= ~1.5 s)
* head        - slow drift of a large blob across the frame
* limb        - a small blob flickering in intensity with slight wobble

Non-movement segments contain anatomy plus speckle only, so their inter-frame
variation is temporally decorrelated noise. Segment boundaries are quantized
to the source frame grid, which makes frame-level label semantics exact.

Generation is a pure function of (config, subject_index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy import ndimage

from . import io as cio
from .timeline import MOVEMENT, NON_MOVEMENT, Segment, SegmentTimeline

ARCHETYPES = ("respiratory", "quick", "head", "limb")

_DEFAULT_DURATION_RANGES = {
    "respiratory": (10.0, 20.0),
    "quick": (0.8, 1.6),
    "head": (6.0, 12.0),
    "limb": (2.0, 5.0),
    "non_movement": (6.0, 14.0),
}
_DEFAULT_WEIGHTS = {"respiratory": 0.3, "quick": 0.2, "head": 0.3, "limb": 0.2}
_DEFAULT_AMPLITUDES = {"respiratory": 0.32, "quick": 0.40, "head": 0.30, "limb": 0.38}

# intensity envelope ramp at segment edges, seconds
_ONSET_S = {"respiratory": 0.5, "quick": 0.1, "head": 0.8, "limb": 0.3}


@dataclass(frozen=True)
class SynthConfig:
    duration_s: float = 240.0
    fps: float = 23.0
    height: int = 64
    width: int = 64
    n_subjects: int = 10
    seed: int = 0
    segment_duration_ranges: dict = field(default_factory=lambda: dict(_DEFAULT_DURATION_RANGES))
    archetype_weights: dict = field(default_factory=lambda: dict(_DEFAULT_WEIGHTS))
    movement_amplitude: dict = field(default_factory=lambda: dict(_DEFAULT_AMPLITUDES))
    speckle_sigma: float = 0.18
    speckle_granularity: float = 1.2
    probe_jitter_px: float = 0.0  # optional global-motion distractor, off by default

    def __post_init__(self):
        if not self.duration_s > 0:
            raise ValueError(f"duration_s must be > 0, got {self.duration_s}")
        if not self.fps > 0:
            raise ValueError(f"fps must be > 0, got {self.fps}")
        if self.height < 8 or self.width < 8:
            raise ValueError("frames must be at least 8x8")
        if self.n_subjects < 1:
            raise ValueError("n_subjects must be >= 1")
        n_frames = self.duration_s * self.fps
        if abs(n_frames - round(n_frames)) > 1e-6:
            raise ValueError(
                f"duration_s * fps must be integral, got {self.duration_s} * {self.fps}"
            )
        for key, (lo, hi) in self.segment_duration_ranges.items():
            if not (0 < lo <= hi):
                raise ValueError(f"bad duration range for {key!r}: ({lo}, {hi})")
        missing = [a for a in self.archetype_weights if a not in ARCHETYPES]
        if missing:
            raise ValueError(f"unknown archetypes in weights: {missing}")
        total = sum(self.archetype_weights.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"archetype weights must sum to 1, got {total}")

    @property
    def n_frames(self) -> int:
        return int(round(self.duration_s * self.fps))


def _subject_rngs(config: SynthConfig, subject_index: int) -> tuple[np.random.Generator, ...]:
    root = np.random.SeedSequence((config.seed, subject_index))
    return tuple(np.random.default_rng(s) for s in root.spawn(3))


def subject_id(subject_index: int) -> str:
    return f"S{subject_index:04d}"


def generate_timeline(config: SynthConfig, subject_index: int,
                      rng: np.random.Generator | None = None) -> SegmentTimeline:
    """Alternating movement / non-movement segments tiling the recording.

    Boundaries land exactly on the source frame grid (multiples of 1/fps).
    """
    if rng is None:
        rng = _subject_rngs(config, subject_index)[0]
    fps = config.fps
    n_total = config.n_frames
    archetypes = sorted(config.archetype_weights)
    weights = np.array([config.archetype_weights[a] for a in archetypes])

    segments: list[Segment] = []
    cur = 0
    label = MOVEMENT if rng.random() < 0.5 else NON_MOVEMENT
    while cur < n_total:
        if label == MOVEMENT:
            subtype = archetypes[int(rng.choice(len(archetypes), p=weights))]
            lo, hi = config.segment_duration_ranges[subtype]
        else:
            subtype = "none"
            lo, hi = config.segment_duration_ranges["non_movement"]
        dur_s = rng.uniform(lo, hi)
        nxt = min(cur + max(1, int(round(dur_s * fps))), n_total)
        segments.append(Segment(start_s=cur / fps, end_s=nxt / fps, label=label, subtype=subtype))
        cur = nxt
        label = NON_MOVEMENT if label == MOVEMENT else MOVEMENT
    return SegmentTimeline(recording_id=subject_id(subject_index),
                           duration_s=n_total / fps, segments=tuple(segments))


def _anatomy(config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Static background: a few soft bright patches on a dim field."""
    h, w = config.height, config.width
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.full((h, w), 0.18)
    for _ in range(rng.integers(3, 6)):
        cy = rng.uniform(0.15 * h, 0.85 * h)
        cx = rng.uniform(0.15 * w, 0.85 * w)
        sy = rng.uniform(0.10 * h, 0.30 * h)
        sx = rng.uniform(0.10 * w, 0.30 * w)
        amp = rng.uniform(0.06, 0.16)
        img += amp * np.exp(-0.5 * (((ys - cy) / sy) ** 2 + ((xs - cx) / sx) ** 2))
    return np.clip(img, 0.0, 0.6)


def _envelope(n: int, fps: float, ramp_s: float) -> np.ndarray:
    """Smooth 0->1->0 intensity envelope with `ramp_s` second edges."""
    if n <= 1:
        return np.ones(n)
    t = np.arange(n) / fps
    total = n / fps
    ramp = min(ramp_s, total / 2)
    up = np.clip(t / ramp, 0.0, 1.0) if ramp > 0 else np.ones(n)
    down = np.clip((total - 1.0 / fps - t) / ramp, 0.0, 1.0) if ramp > 0 else np.ones(n)
    env = np.minimum(up, down)
    return env * env * (3 - 2 * env)  # smoothstep


def _motion_track(subtype: str, n: int, config: SynthConfig,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Per-frame blob center (cy, cx), intensity multiplier, and blob sigma."""
    h, w, fps = config.height, config.width, config.fps
    t = np.arange(n) / fps
    margin = 0.22
    cy0 = rng.uniform(margin * h, (1 - margin) * h)
    cx0 = rng.uniform(margin * w, (1 - margin) * w)
    ones = np.ones(n)

    if subtype == "respiratory":
        freq = rng.uniform(0.5, 1.0)
        phase = rng.uniform(0, 2 * math.pi)
        amp_px = rng.uniform(0.06, 0.11) * w
        angle = rng.uniform(0, math.pi)
        off = amp_px * np.sin(2 * math.pi * freq * t + phase)
        return cy0 + off * math.sin(angle), cx0 + off * math.cos(angle), ones, 0.11 * w
    if subtype == "quick":
        dist = rng.uniform(0.20, 0.35) * w
        angle = rng.uniform(0, 2 * math.pi)
        s = np.clip(t / max(t[-1], 1.0 / fps), 0.0, 1.0)
        s = s * s * (3 - 2 * s)
        return (cy0 + dist * math.sin(angle) * s, cx0 + dist * math.cos(angle) * s,
                ones, 0.09 * w)
    if subtype == "head":
        dist = rng.uniform(0.25, 0.45) * w
        angle = rng.uniform(0, 2 * math.pi)
        s = np.linspace(0.0, 1.0, n)
        return (cy0 + dist * math.sin(angle) * s, cx0 + dist * math.cos(angle) * s,
                ones, 0.17 * w)
    if subtype == "limb":
        freq = rng.uniform(1.5, 3.0)
        phase = rng.uniform(0, 2 * math.pi)
        flicker = 0.5 * (1 + np.sin(2 * math.pi * freq * t + phase))
        wob = 0.02 * w
        return (cy0 + wob * np.sin(2 * math.pi * freq * t),
                cx0 + wob * np.cos(2 * math.pi * freq * t + phase), flicker, 0.055 * w)
    raise ValueError(f"unknown archetype {subtype!r}")


def render_recording(config: SynthConfig, timeline: SegmentTimeline,
                     rng: np.random.Generator,
                     speckle_rng: np.random.Generator) -> np.ndarray:
    """Render (n_frames, H, W) float32 frames in [0, 1] for a timeline."""
    h, w, fps = config.height, config.width, config.fps
    n_total = config.n_frames
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    base = _anatomy(config, rng)

    clean = np.repeat(base[None, :, :], n_total, axis=0)
    for seg in timeline.segments:
        if seg.label != MOVEMENT:
            continue
        f0, f1 = int(round(seg.start_s * fps)), int(round(seg.end_s * fps))
        n = f1 - f0
        cy, cx, inten, sigma = _motion_track(seg.subtype, n, config, rng)
        amp = config.movement_amplitude.get(seg.subtype, 0.3)
        env = _envelope(n, fps, _ONSET_S.get(seg.subtype, 0.3)) * inten * amp
        for k in range(n):
            if env[k] <= 0:
                continue
            blob = np.exp(-0.5 * (((ys - cy[k]) / sigma) ** 2 + ((xs - cx[k]) / sigma) ** 2))
            clean[f0 + k] += env[k] * blob

    if config.probe_jitter_px > 0:
        steps = rng.normal(0.0, config.probe_jitter_px / 4, size=(n_total, 2))
        path = np.cumsum(steps, axis=0)
        path -= path.mean(axis=0)
        path = np.clip(path, -config.probe_jitter_px, config.probe_jitter_px)
        for k in range(n_total):
            clean[k] = ndimage.shift(clean[k], path[k], order=1, mode="nearest")

    noise = speckle_rng.standard_normal((n_total, h, w))
    if config.speckle_granularity > 0:
        noise = ndimage.gaussian_filter(
            noise, sigma=(0.0, config.speckle_granularity, config.speckle_granularity))
        noise /= noise.std()
    frames = clean * (1.0 + config.speckle_sigma * noise)
    return np.clip(frames, 0.0, 1.0).astype(np.float32)


def generate_recording(config: SynthConfig,
                       subject_index: int) -> tuple[np.ndarray, SegmentTimeline]:
    """Frames plus ground-truth timeline, a pure function of (config, subject_index)."""
    tl_rng, render_rng, speckle_rng = _subject_rngs(config, subject_index)
    timeline = generate_timeline(config, subject_index, rng=tl_rng)
    frames = render_recording(config, timeline, render_rng, speckle_rng)
    return frames, timeline


def iter_recordings(config: SynthConfig) -> Iterator[tuple[str, np.ndarray, SegmentTimeline]]:
    for idx in range(config.n_subjects):
        frames, timeline = generate_recording(config, idx)
        yield subject_id(idx), frames, timeline


def generate_dataset(config: SynthConfig, out_dir) -> list[str]:
    """Write one video container + timeline JSON per subject; returns subject ids."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = []
    for sid, frames, timeline in iter_recordings(config):
        cio.write_video(out / f"{sid}.curlvid", frames, config.fps, cio.DTYPE_U8)
        cio.write_timeline(out / f"{sid}.timeline.json", timeline)
        ids.append(sid)
    return ids
