"""Core value types: clips, annotated segment timelines, and the interval algebra.

A recording's annotation is a :class:`SegmentTimeline`: ordered, non-overlapping,
maximal segments that exactly tile ``[0, duration_s)``. All intervals are
half-open ``[start, end)`` so that tiling is unambiguous. Times are seconds;
frame indices are derived as ``floor(t * fps)`` where needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MOVEMENT = "movement"
NON_MOVEMENT = "non_movement"
LABELS = (MOVEMENT, NON_MOVEMENT)

#: Archetype tags carried by movement segments; non-movement segments use "none".
SUBTYPES = ("respiratory", "quick", "head", "limb", "none")


@dataclass(frozen=True)
class VideoClip:
    """A fixed-length grayscale frame stack, the unit fed to the encoder.

    ``frames`` has shape (T, H, W) with intensities in [0, 1]. The array is
    frozen (non-writeable) so clips can be shared across threads freely.
    """

    frames: np.ndarray
    fps: float
    source_id: str = ""
    start_time_s: float = 0.0

    def __post_init__(self):
        f = self.frames
        if f.ndim != 3 or min(f.shape) < 1:
            raise ValueError(f"frames must be a non-empty (T, H, W) array, got shape {f.shape}")
        if not np.issubdtype(f.dtype, np.floating):
            raise ValueError(f"frames must be floating point, got {f.dtype}")
        lo, hi = float(f.min()), float(f.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"intensities must lie in [0, 1], got range [{lo}, {hi}]")
        if not self.fps > 0:
            raise ValueError(f"fps must be > 0, got {self.fps}")
        f.flags.writeable = False

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.frames.shape

    @property
    def duration_s(self) -> float:
        return self.frames.shape[0] / self.fps


@dataclass(frozen=True)
class LabeledClip:
    """A clip with a soft movement-probability label."""

    clip: VideoClip
    p_movement: float

    def __post_init__(self):
        if not 0.0 <= self.p_movement <= 1.0:
            raise ValueError(f"p_movement must be in [0, 1], got {self.p_movement}")


@dataclass(frozen=True)
class Segment:
    """One labeled interval ``[start_s, end_s)`` of a recording."""

    start_s: float
    end_s: float
    label: str
    subtype: str = "none"

    def __post_init__(self):
        if not self.start_s < self.end_s:
            raise ValueError(f"segment must have start < end, got [{self.start_s}, {self.end_s})")
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class SegmentTimeline:
    """Ordered labeled segments covering a recording of ``duration_s`` seconds.

    Construction does not enforce the tiling invariants; run
    :func:`validate_timeline` to collect violations (violations are data,
    not faults: generators and loaders may legitimately produce bad
    timelines that callers want to inspect).
    """

    recording_id: str
    duration_s: float
    segments: tuple[Segment, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.duration_s > 0:
            raise ValueError(f"duration_s must be > 0, got {self.duration_s}")


def validate_timeline(timeline: SegmentTimeline) -> list[str]:
    """Return all invariant violations of a timeline; an empty list means ok.

    Checked: segments sorted, non-overlapping, exactly tiling
    ``[0, duration_s)``, and maximal (adjacent segments carry different
    labels). Boundary comparisons are exact; adjacent segments must share
    the identical float boundary.
    """
    violations: list[str] = []
    segs = timeline.segments
    if not segs:
        violations.append(f"coverage: no segments for duration {timeline.duration_s}")
        return violations

    for prev, cur in zip(segs, segs[1:]):
        if cur.start_s < prev.start_s:
            violations.append(f"unsorted: segment at {cur.start_s} after segment at {prev.start_s}")
        if cur.start_s < prev.end_s:
            violations.append(f"overlap: [{cur.start_s}, ...) begins before {prev.end_s}")
        elif cur.start_s > prev.end_s:
            violations.append(f"gap: [{prev.end_s}, {cur.start_s})")
        if cur.label == prev.label and cur.start_s == prev.end_s:
            violations.append(f"same-label adjacency: {prev.label!r} at {prev.end_s}")

    if segs[0].start_s != 0.0:
        violations.append(f"coverage: first segment starts at {segs[0].start_s}, expected 0")
    if segs[-1].end_s != timeline.duration_s:
        violations.append(
            f"coverage: last segment ends at {segs[-1].end_s}, expected {timeline.duration_s}"
        )
    return violations


def movement_fraction(timeline: SegmentTimeline, start_s: float, end_s: float) -> float:
    """Fraction of ``[start_s, end_s)`` covered by movement-labeled time.

    Raises ``ValueError`` if the window lies outside the recording.
    """
    if not (0.0 <= start_s < end_s <= timeline.duration_s):
        raise ValueError(
            f"window [{start_s}, {end_s}) outside recording [0, {timeline.duration_s})"
        )
    covered = 0.0
    for seg in timeline.segments:
        if seg.label != MOVEMENT:
            continue
        lo = max(seg.start_s, start_s)
        hi = min(seg.end_s, end_s)
        if hi > lo:
            covered += hi - lo
    return covered / (end_s - start_s)


def dominant_movement_subtype(timeline: SegmentTimeline, start_s: float, end_s: float) -> str:
    """Archetype of the movement segment contributing the most time to a window.

    Returns "none" when the window contains no movement.
    """
    totals: dict[str, float] = {}
    for seg in timeline.segments:
        if seg.label != MOVEMENT:
            continue
        lo = max(seg.start_s, start_s)
        hi = min(seg.end_s, end_s)
        if hi > lo:
            totals[seg.subtype] = totals.get(seg.subtype, 0.0) + (hi - lo)
    if not totals:
        return "none"
    return max(sorted(totals), key=lambda k: totals[k])
