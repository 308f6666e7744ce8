"""Paired-view construction: temporally consistent spatial augmentations plus
structured temporal masking.

A single :class:`AugmentationSpec` is sampled once per clip and applied
uniformly to every frame, preserving motion cues. Spatial ops run in a fixed
order (rotate, brightness, contrast, noise, blur); temporal masking zeroes
input pixels on the encoder's patch grid before patchification.

The additive noise field and the mask layout are drawn from the spec's own
``rng_seed``, so a spec fully determines the transform: applying it to any
single frame reproduces that frame of the full-clip application exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .timeline import VideoClip

MASK_KINDS = ("none", "tube", "frame", "random")

ROTATION_RANGE = (-30.0, 30.0)
BRIGHTNESS_RANGE = (0.5, 1.5)
CONTRAST_RANGE = (0.5, 1.5)
NOISE_SIGMA = 0.1
BLUR_SIZES = (0, 3)
MASK_RATIO_RANGE = (0.0, 0.3)


@dataclass(frozen=True)
class AugmentationPolicy:
    """Which augmentations a branch may apply; parameters are sampled per clip."""

    rotate: bool = False
    brightness: bool = False
    contrast: bool = False
    noise: bool = False
    blur: bool = False
    mask_kind: str = "none"
    patch_t: int = 2
    patch_h: int = 8
    patch_w: int = 8

    def __post_init__(self):
        if self.mask_kind not in MASK_KINDS:
            raise ValueError(f"mask_kind must be one of {MASK_KINDS}, got {self.mask_kind!r}")

    @classmethod
    def from_ops(cls, ops, patch_t: int = 2, patch_h: int = 8, patch_w: int = 8):
        """Build a policy from op names, e.g. ["rotate", "noise", "tube_mask"]."""
        ops = set(ops)
        masks = {o for o in ops if o.endswith("_mask")}
        if len(masks) > 1:
            raise ValueError(f"at most one mask kind per branch, got {sorted(masks)}")
        kind = masks.pop().removesuffix("_mask") if masks else "none"
        spatial = ops - {f"{kind}_mask"} if kind != "none" else ops
        known = {"rotate", "brightness", "contrast", "noise", "blur"}
        unknown = spatial - known
        if unknown:
            raise ValueError(f"unknown augmentation ops: {sorted(unknown)}")
        return cls(rotate="rotate" in ops, brightness="brightness" in ops,
                   contrast="contrast" in ops, noise="noise" in ops, blur="blur" in ops,
                   mask_kind=kind, patch_t=patch_t, patch_h=patch_h, patch_w=patch_w)


@dataclass(frozen=True)
class AugmentationSpec:
    """Concrete per-clip transform parameters. Identity by default."""

    rotation_deg: float = 0.0
    brightness_factor: float = 1.0
    contrast_factor: float = 1.0
    noise_sigma: float = 0.0
    median_blur_radius: int = 0
    mask_kind: str = "none"
    mask_ratio: float = 0.0
    patch_t: int = 2
    patch_h: int = 8
    patch_w: int = 8
    rng_seed: int = 0

    def __post_init__(self):
        if not ROTATION_RANGE[0] <= self.rotation_deg <= ROTATION_RANGE[1]:
            raise ValueError(f"rotation_deg outside {ROTATION_RANGE}: {self.rotation_deg}")
        if not BRIGHTNESS_RANGE[0] <= self.brightness_factor <= BRIGHTNESS_RANGE[1]:
            raise ValueError(f"brightness_factor outside {BRIGHTNESS_RANGE}: {self.brightness_factor}")
        if not CONTRAST_RANGE[0] <= self.contrast_factor <= CONTRAST_RANGE[1]:
            raise ValueError(f"contrast_factor outside {CONTRAST_RANGE}: {self.contrast_factor}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0: {self.noise_sigma}")
        if self.median_blur_radius not in BLUR_SIZES:
            raise ValueError(f"median_blur_radius must be in {BLUR_SIZES}: {self.median_blur_radius}")
        if self.mask_kind not in MASK_KINDS:
            raise ValueError(f"mask_kind must be one of {MASK_KINDS}: {self.mask_kind!r}")
        if not MASK_RATIO_RANGE[0] <= self.mask_ratio <= MASK_RATIO_RANGE[1]:
            raise ValueError(f"mask_ratio outside {MASK_RATIO_RANGE}: {self.mask_ratio}")


def sample_spec(policy: AugmentationPolicy, rng: np.random.Generator) -> AugmentationSpec:
    """Draw enabled parameters uniformly from their ranges; the rest stay identity."""
    rotation = rng.uniform(*ROTATION_RANGE) if policy.rotate else 0.0
    brightness = rng.uniform(*BRIGHTNESS_RANGE) if policy.brightness else 1.0
    contrast = rng.uniform(*CONTRAST_RANGE) if policy.contrast else 1.0
    sigma = NOISE_SIGMA if policy.noise else 0.0
    blur = int(rng.choice(BLUR_SIZES)) if policy.blur else 0
    ratio = rng.uniform(*MASK_RATIO_RANGE) if policy.mask_kind != "none" else 0.0
    return AugmentationSpec(
        rotation_deg=rotation, brightness_factor=brightness, contrast_factor=contrast,
        noise_sigma=sigma, median_blur_radius=blur,
        mask_kind=policy.mask_kind, mask_ratio=ratio,
        patch_t=policy.patch_t, patch_h=policy.patch_h, patch_w=policy.patch_w,
        rng_seed=int(rng.integers(0, 2**63 - 1)),
    )


def _is_spatial_identity(spec: AugmentationSpec) -> bool:
    return (spec.rotation_deg == 0.0 and spec.brightness_factor == 1.0
            and spec.contrast_factor == 1.0 and spec.noise_sigma == 0.0
            and spec.median_blur_radius == 0)


def apply_spatial(clip: VideoClip, spec: AugmentationSpec) -> VideoClip:
    """Apply the spec's spatial ops with identical parameters to every frame.

    Order: rotate (bilinear, zero fill), brightness scale, contrast scale
    about the 0.5 midpoint, additive Gaussian noise (one field shared by all
    frames), median blur. Output is clipped to [0, 1].
    """
    if _is_spatial_identity(spec):
        return clip
    frames = np.array(clip.frames, dtype=np.float32)
    if spec.rotation_deg != 0.0:
        frames = np.stack([
            ndimage.rotate(f, spec.rotation_deg, reshape=False, order=1,
                           mode="constant", cval=0.0) for f in frames])
    if spec.brightness_factor != 1.0:
        frames = frames * np.float32(spec.brightness_factor)
    if spec.contrast_factor != 1.0:
        frames = (frames - np.float32(0.5)) * np.float32(spec.contrast_factor) + np.float32(0.5)
    if spec.noise_sigma > 0.0:
        rng = np.random.default_rng(np.random.SeedSequence((spec.rng_seed, 0)))
        field = rng.standard_normal(frames.shape[1:]).astype(np.float32)
        frames = frames + np.float32(spec.noise_sigma) * field
    if spec.median_blur_radius:
        size = spec.median_blur_radius
        frames = np.stack([ndimage.median_filter(f, size=size, mode="reflect")
                           for f in frames])
    frames = np.clip(frames, 0.0, 1.0)
    return VideoClip(frames=frames, fps=clip.fps, source_id=clip.source_id,
                     start_time_s=clip.start_time_s)


def mask_unit_count(spec: AugmentationSpec, shape: tuple[int, int, int]) -> tuple[int, int]:
    """(units available, units to zero) for the spec's mask kind on a clip shape."""
    t, h, w = shape
    if spec.mask_kind == "tube":
        if h % spec.patch_h or w % spec.patch_w:
            raise ValueError(f"clip {h}x{w} not divisible by patch {spec.patch_h}x{spec.patch_w}")
        units = (h // spec.patch_h) * (w // spec.patch_w)
    elif spec.mask_kind == "frame":
        units = t
    elif spec.mask_kind == "random":
        if t % spec.patch_t or h % spec.patch_h or w % spec.patch_w:
            raise ValueError(
                f"clip {t}x{h}x{w} not divisible by patch "
                f"{spec.patch_t}x{spec.patch_h}x{spec.patch_w}")
        units = (t // spec.patch_t) * (h // spec.patch_h) * (w // spec.patch_w)
    else:
        return 0, 0
    return units, int(math.floor(spec.mask_ratio * units + 1e-9))


def apply_temporal(clip: VideoClip, spec: AugmentationSpec) -> tuple[VideoClip, np.ndarray]:
    """Zero masked regions; returns the masked clip and a boolean mask of
    zeroed elements.

    tube: ``floor(ratio * cells)`` spatial patch cells zeroed in every frame;
    frame: ``floor(ratio * T)`` whole frames zeroed;
    random: ``floor(ratio * n_patches)`` spatiotemporal patches zeroed.
    """
    t, h, w = clip.frames.shape
    units, n_masked = mask_unit_count(spec, (t, h, w))
    mask = np.zeros((t, h, w), dtype=bool)
    if n_masked == 0:
        return clip, mask
    rng = np.random.default_rng(np.random.SeedSequence((spec.rng_seed, 1)))
    chosen = rng.choice(units, size=n_masked, replace=False)
    if spec.mask_kind == "tube":
        grid_w = w // spec.patch_w
        for cell in chosen:
            r, c = divmod(int(cell), grid_w)
            mask[:, r * spec.patch_h:(r + 1) * spec.patch_h,
                 c * spec.patch_w:(c + 1) * spec.patch_w] = True
    elif spec.mask_kind == "frame":
        mask[np.sort(chosen)] = True
    else:  # random
        grid_h = h // spec.patch_h
        grid_w = w // spec.patch_w
        for cell in chosen:
            l, rest = divmod(int(cell), grid_h * grid_w)
            r, c = divmod(rest, grid_w)
            mask[l * spec.patch_t:(l + 1) * spec.patch_t,
                 r * spec.patch_h:(r + 1) * spec.patch_h,
                 c * spec.patch_w:(c + 1) * spec.patch_w] = True
    frames = np.array(clip.frames, dtype=np.float32)
    frames[mask] = 0.0
    out = VideoClip(frames=frames, fps=clip.fps, source_id=clip.source_id,
                    start_time_s=clip.start_time_s)
    return out, mask


def apply_spec(clip: VideoClip, spec: AugmentationSpec) -> VideoClip:
    """Spatial ops followed by temporal masking."""
    out, _ = apply_temporal(apply_spatial(clip, spec), spec)
    return out


def make_views(clip: VideoClip, policy_a: AugmentationPolicy,
               policy_b: AugmentationPolicy,
               rng: np.random.Generator) -> tuple[VideoClip, VideoClip]:
    """Two correlated views of one clip under independently sampled specs."""
    spec_a = sample_spec(policy_a, rng)
    spec_b = sample_spec(policy_b, rng)
    return apply_spec(clip, spec_a), apply_spec(clip, spec_b)
