"""Spatiotemporal transformer encoder with 3D patchify and separable
positional embeddings, plus the two projection heads and the linear
classifier.

A clip (T, H, W) is split into non-overlapping (t, h, w) voxel patches in
raster order (temporal-major, then row, then column), linearly projected to
the embedding dimension, and offset by the sum of a temporal and a spatial
embedding table. A pre-norm transformer stack follows; the clip embedding is
the mean over final token states.

Defaults are the desk-scale configuration; :meth:`EncoderConfig.paper_scale`
builds the full-scale geometry (useful for shape tests only).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
from torch import nn


@dataclass(frozen=True)
class EncoderConfig:
    input_t: int = 16
    input_h: int = 64
    input_w: int = 64
    patch_t: int = 2
    patch_h: int = 8
    patch_w: int = 8
    embed_dim: int = 96
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 4.0
    proj_dim: int = 128
    n_classes: int = 2

    def __post_init__(self):
        if self.input_t % self.patch_t or self.input_h % self.patch_h or self.input_w % self.patch_w:
            raise ValueError(
                f"input ({self.input_t}, {self.input_h}, {self.input_w}) not divisible by "
                f"patch ({self.patch_t}, {self.patch_h}, {self.patch_w})")
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")

    @classmethod
    def paper_scale(cls) -> "EncoderConfig":
        return cls(input_t=50, input_h=224, input_w=224, patch_t=2, patch_h=16,
                   patch_w=16, embed_dim=768, depth=12, heads=12)

    @property
    def tokens_t(self) -> int:
        return self.input_t // self.patch_t

    @property
    def tokens_h(self) -> int:
        return self.input_h // self.patch_h

    @property
    def tokens_w(self) -> int:
        return self.input_w // self.patch_w

    @property
    def tokens_spatial(self) -> int:
        return self.tokens_h * self.tokens_w

    @property
    def n_tokens(self) -> int:
        return self.tokens_t * self.tokens_spatial

    @property
    def patch_volume(self) -> int:
        return self.patch_t * self.patch_h * self.patch_w

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown encoder config fields: {sorted(unknown)}")
        return cls(**d)


def patchify(frames, cfg: EncoderConfig):
    """(.., T, H, W) -> (.., N, patch_volume) in raster order.

    Works on numpy arrays and torch tensors; leading batch dims pass through.
    """
    t, h, w = cfg.patch_t, cfg.patch_h, cfg.patch_w
    lead = frames.shape[:-3]
    T, H, W = frames.shape[-3:]
    if T != cfg.input_t or H != cfg.input_h or W != cfg.input_w:
        raise ValueError(f"clip shape {(T, H, W)} does not match config "
                         f"({cfg.input_t}, {cfg.input_h}, {cfg.input_w})")
    x = frames.reshape(*lead, T // t, t, H // h, h, W // w, w)
    nd = len(lead)
    order = tuple(range(nd)) + tuple(nd + i for i in (0, 2, 4, 1, 3, 5))
    if isinstance(x, torch.Tensor):
        x = x.permute(*order)
        return x.reshape(*lead, cfg.n_tokens, cfg.patch_volume)
    x = np.transpose(x, order)
    return x.reshape(*lead, cfg.n_tokens, cfg.patch_volume)


def unpatchify(tokens, cfg: EncoderConfig):
    """Inverse of :func:`patchify`."""
    t, h, w = cfg.patch_t, cfg.patch_h, cfg.patch_w
    lead = tokens.shape[:-2]
    if tokens.shape[-2] != cfg.n_tokens or tokens.shape[-1] != cfg.patch_volume:
        raise ValueError(f"token array {tokens.shape[-2:]} does not match config "
                         f"({cfg.n_tokens}, {cfg.patch_volume})")
    x = tokens.reshape(*lead, cfg.tokens_t, cfg.tokens_h, cfg.tokens_w, t, h, w)
    nd = len(lead)
    order = tuple(range(nd)) + tuple(nd + i for i in (0, 3, 1, 4, 2, 5))
    if isinstance(x, torch.Tensor):
        x = x.permute(*order)
        return x.reshape(*lead, cfg.input_t, cfg.input_h, cfg.input_w)
    x = np.transpose(x, order)
    return x.reshape(*lead, cfg.input_t, cfg.input_h, cfg.input_w)


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.scale = self.head_dim ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: float):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class ProjectionHead(nn.Module):
    """Two-layer perceptron, embed_dim -> embed_dim -> out_dim, ReLU between."""

    def __init__(self, dim: int, out_dim: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, dim), nn.ReLU(), nn.Linear(dim, out_dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class VideoEncoder(nn.Module):
    """Encoder f plus projection heads g_sc / g_tc and the linear classifier."""

    def __init__(self, config: EncoderConfig, seed: int = 0):
        super().__init__()
        self.config = config
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.patch_proj = nn.Linear(config.patch_volume, config.embed_dim)
            self.temporal_embed = nn.Parameter(
                torch.randn(config.tokens_t, config.embed_dim) * 0.02)
            self.spatial_embed = nn.Parameter(
                torch.randn(config.tokens_spatial, config.embed_dim) * 0.02)
            self.blocks = nn.ModuleList(
                TransformerBlock(config.embed_dim, config.heads, config.mlp_ratio)
                for _ in range(config.depth))
            self.norm = nn.LayerNorm(config.embed_dim)
            self.spatial_head = ProjectionHead(config.embed_dim, config.proj_dim)
            self.temporal_head = ProjectionHead(config.embed_dim, config.proj_dim)
            self.classifier = nn.Linear(config.embed_dim, config.n_classes)

    def position_table(self) -> torch.Tensor:
        """(N, D) combined embedding: temporal(l) + spatial(m, n), raster order."""
        cfg = self.config
        temp = self.temporal_embed.repeat_interleave(cfg.tokens_spatial, dim=0)
        spat = self.spatial_embed.repeat(cfg.tokens_t, 1)
        return temp + spat

    def add_positions(self, patch_tokens: torch.Tensor) -> torch.Tensor:
        """Project raw patch tokens (B, N, patch_volume) and add positions."""
        if patch_tokens.shape[-2] != self.config.n_tokens:
            raise ValueError(f"expected {self.config.n_tokens} tokens, "
                             f"got {patch_tokens.shape[-2]}")
        return self.patch_proj(patch_tokens) + self.position_table()

    def encode(self, clips: torch.Tensor) -> torch.Tensor:
        """(B, T, H, W) -> clip embeddings (B, D)."""
        if clips.ndim == 3:
            clips = clips.unsqueeze(0)
        x = self.add_positions(patchify(clips, self.config))
        for block in self.blocks:
            x = block(x)
        return self.norm(x).mean(dim=1)

    forward = encode

    def project_spatial(self, h: torch.Tensor) -> torch.Tensor:
        return self.spatial_head(h)

    def project_temporal(self, h: torch.Tensor) -> torch.Tensor:
        return self.temporal_head(h)

    def classify(self, h: torch.Tensor) -> torch.Tensor:
        """Class probabilities (B, n_classes); rows sum to 1."""
        return torch.softmax(self.classifier(h), dim=-1)

    def encoder_parameters(self):
        """Parameters of the backbone and projection heads (not the classifier)."""
        ids = {id(p) for p in self.classifier.parameters()}
        return [p for p in self.parameters() if id(p) not in ids]

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.detach().cpu().numpy().astype(np.float32, copy=True)
                for name, p in self.state_dict().items()}

    @classmethod
    def from_arrays(cls, config: EncoderConfig, arrays: dict[str, np.ndarray],
                    dtype: torch.dtype = torch.float32) -> "VideoEncoder":
        model = cls(config, seed=0).to(dtype)
        state = model.state_dict()
        missing = set(state) - set(arrays)
        extra = set(arrays) - set(state)
        if missing or extra:
            raise ValueError(f"checkpoint mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        model.load_state_dict({k: torch.as_tensor(v, dtype=dtype) for k, v in arrays.items()})
        return model


def clips_to_tensor(clips, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Stack VideoClips or (T, H, W) arrays into a (B, T, H, W) tensor."""
    arrays = [c.frames if hasattr(c, "frames") else c for c in clips]
    return torch.as_tensor(np.stack(arrays), dtype=dtype)
