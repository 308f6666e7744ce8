import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curlvid.timeline import (MOVEMENT, NON_MOVEMENT, LabeledClip, Segment, SegmentTimeline,
                              VideoClip, dominant_movement_subtype, movement_fraction,
                              validate_timeline)


def tl(segments, duration, rid="rec"):
    return SegmentTimeline(recording_id=rid, duration_s=duration,
                           segments=tuple(Segment(*s) for s in segments))


def random_timeline(rng, max_segments=12):
    """Valid alternating timeline with boundaries on a 0.125 s grid."""
    n = rng.integers(1, max_segments + 1)
    label = MOVEMENT if rng.random() < 0.5 else NON_MOVEMENT
    bounds = np.cumsum(rng.integers(4, 80, size=n)) * 0.125
    segs, start = [], 0.0
    for b in bounds:
        segs.append(Segment(start, float(b), label,
                            "head" if label == MOVEMENT else "none"))
        start = float(b)
        label = NON_MOVEMENT if label == MOVEMENT else MOVEMENT
    return SegmentTimeline(recording_id="r", duration_s=float(bounds[-1]), segments=tuple(segs))


class TestVideoClip:
    def test_valid_clip(self):
        clip = VideoClip(frames=np.zeros((4, 8, 8), dtype=np.float32), fps=10.0)
        assert clip.shape == (4, 8, 8)
        assert clip.duration_s == pytest.approx(0.4)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            VideoClip(frames=np.full((2, 4, 4), 1.5, dtype=np.float32), fps=10.0)

    def test_rejects_bad_fps(self):
        with pytest.raises(ValueError, match="fps"):
            VideoClip(frames=np.zeros((2, 4, 4), dtype=np.float32), fps=0.0)

    def test_frames_frozen(self):
        clip = VideoClip(frames=np.zeros((2, 4, 4), dtype=np.float32), fps=10.0)
        with pytest.raises(ValueError):
            clip.frames[0, 0, 0] = 1.0

    def test_labeled_clip_range(self):
        clip = VideoClip(frames=np.zeros((2, 4, 4), dtype=np.float32), fps=10.0)
        LabeledClip(clip=clip, p_movement=0.7)
        with pytest.raises(ValueError, match="p_movement"):
            LabeledClip(clip=clip, p_movement=1.2)


class TestValidateTimeline:
    def test_ok_tiling(self):
        t = tl([(0, 10, MOVEMENT), (10, 30, NON_MOVEMENT)], 30)
        assert validate_timeline(t) == []

    def test_gap_detected(self):
        t = tl([(0, 10, MOVEMENT), (12, 30, NON_MOVEMENT)], 30)
        violations = validate_timeline(t)
        assert any(v.startswith("gap") for v in violations)

    def test_same_label_adjacency(self):
        t = tl([(0, 10, MOVEMENT), (10, 30, MOVEMENT)], 30)
        violations = validate_timeline(t)
        assert any("same-label" in v for v in violations)

    def test_overlap_detected(self):
        t = tl([(0, 12, MOVEMENT), (10, 30, NON_MOVEMENT)], 30)
        assert any(v.startswith("overlap") for v in validate_timeline(t))

    def test_unsorted_detected(self):
        t = tl([(10, 30, NON_MOVEMENT), (0, 10, MOVEMENT)], 30)
        assert any(v.startswith("unsorted") for v in validate_timeline(t))

    def test_coverage_end(self):
        t = tl([(0, 10, MOVEMENT)], 30)
        assert any(v.startswith("coverage") for v in validate_timeline(t))

    def test_empty(self):
        t = SegmentTimeline(recording_id="r", duration_s=10.0, segments=())
        assert any(v.startswith("coverage") for v in validate_timeline(t))

    def test_validator_agrees_with_frame_scan(self):
        # ok iff every frame cell [k/fps, (k+1)/fps) is covered exactly once
        # and adjacent cells only change label at true boundaries
        rng = np.random.default_rng(0)
        fps = 8.0
        for trial in range(50):
            t = random_timeline(rng)
            mutate = rng.integers(0, 3)
            segs = list(t.segments)
            if mutate == 1 and len(segs) > 1:  # introduce a gap
                victim = rng.integers(1, len(segs))
                s = segs[victim]
                segs[victim] = Segment(s.start_s + 0.125, s.end_s, s.label, s.subtype)
            elif mutate == 2 and len(segs) > 1:  # duplicate a label
                victim = rng.integers(1, len(segs))
                s = segs[victim]
                segs[victim] = Segment(s.start_s, s.end_s, segs[victim - 1].label, s.subtype)
            t = SegmentTimeline("r", t.duration_s, tuple(segs))

            n_frames = int(round(t.duration_s * fps))
            cover = np.zeros(n_frames, dtype=int)
            labels = np.full(n_frames, -1)
            for i, s in enumerate(t.segments):
                lo, hi = int(round(s.start_s * fps)), int(round(s.end_s * fps))
                cover[lo:hi] += 1
                labels[lo:hi] = 1 if s.label == MOVEMENT else 0
            scan_ok = bool((cover == 1).all())
            if scan_ok:  # check maximality on top of tiling
                for a, b in zip(t.segments, t.segments[1:]):
                    if a.label == b.label:
                        scan_ok = False
            assert (validate_timeline(t) == []) == scan_ok, f"trial {trial}"


class TestMovementFraction:
    def setup_method(self):
        self.t = tl([(0, 10, MOVEMENT), (10, 30, NON_MOVEMENT), (30, 40, MOVEMENT)], 40)

    def test_pure_movement_window(self):
        assert movement_fraction(self.t, 2.0, 7.0) == 1.0

    def test_partial_window(self):
        # 3.5 s movement + 1.5 s non-movement of a 5 s window
        assert movement_fraction(self.t, 6.5, 11.5) == pytest.approx(0.7)

    def test_pure_non_movement(self):
        assert movement_fraction(self.t, 12.0, 25.0) == 0.0

    def test_window_outside_recording(self):
        with pytest.raises(ValueError, match="outside"):
            movement_fraction(self.t, 35.0, 45.0)
        with pytest.raises(ValueError):
            movement_fraction(self.t, -1.0, 5.0)

    @given(st.integers(0, 2**32 - 1), st.data())
    @settings(max_examples=60, deadline=None)
    def test_additive_over_splits(self, seed, data):
        rng = np.random.default_rng(seed)
        t = random_timeline(rng)
        a = data.draw(st.floats(0, float(t.duration_s) - 0.25))
        c = data.draw(st.floats(a + 0.25, float(t.duration_s)))
        b = data.draw(st.floats(a + 0.05, c - 0.05))
        whole = movement_fraction(t, a, c) * (c - a)
        parts = movement_fraction(t, a, b) * (b - a) + movement_fraction(t, b, c) * (c - b)
        assert whole == pytest.approx(parts, abs=1e-9)

    def test_complement_label_fraction(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            t = random_timeline(rng)
            flipped = SegmentTimeline("r", t.duration_s, tuple(
                Segment(s.start_s, s.end_s,
                        NON_MOVEMENT if s.label == MOVEMENT else MOVEMENT, s.subtype)
                for s in t.segments))
            a = 0.25
            b = t.duration_s - 0.125 if t.duration_s > 0.5 else t.duration_s
            assert movement_fraction(t, a, b) + movement_fraction(flipped, a, b) == \
                pytest.approx(1.0, abs=1e-12)


class TestDominantSubtype:
    def test_picks_largest_overlap(self):
        t = tl([(0, 4, MOVEMENT, "quick"), (4, 10, NON_MOVEMENT, "none"),
                (10, 20, MOVEMENT, "head")], 20)
        assert dominant_movement_subtype(t, 1.0, 12.0) == "quick"
        assert dominant_movement_subtype(t, 3.9, 15.0) == "head"
        assert dominant_movement_subtype(t, 5.0, 9.0) == "none"
