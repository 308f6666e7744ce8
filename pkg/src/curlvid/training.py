"""The two training phases and sliding-window inference.

Pretraining couples whole micro-batches through the contrastive losses, so
gradient accumulation works in units of full contrastive groups: each
micro-batch computes its own instance/cluster losses over its 2B views, and
an optimizer step averages the gradients of ``accum_groups`` such groups.

Per-clip augmentation streams are seeded from (seed, epoch, clip index), so
results do not depend on loader order or parallelism.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .augment import AugmentationPolicy, make_views
from .encoder import VideoEncoder, clips_to_tensor
from .errors import NumericError
from .losses import ContrastiveBatch, pretrain_loss, soft_cross_entropy
from .sampling import SamplerConfig, Window, materialize_clip, sliding_window_grid
from .timeline import LabeledClip, VideoClip


@dataclass(frozen=True)
class TrainConfig:
    phase: str = "pretrain"
    epochs: int = 20
    seed: int = 0
    # pretraining: AdamW under a warmup + cosine schedule
    base_lr: float = 0.003
    warmup_epochs: float = 3.0
    weight_decay: float = 0.05
    micro_batch: int = 32
    accum_groups: int = 4  # effective batch = micro_batch * accum_groups
    lambda_tc: float = 1.0
    tau_ins: float = 0.1
    tau_ca: float = 0.5
    k_clusters: int = 10
    # fine-tuning: SGD on the classifier (linear) or on everything (full)
    ft_lr: float = 0.01
    ft_batch: int = 16
    ft_mode: str = "linear"

    def __post_init__(self):
        if self.phase not in ("pretrain", "finetune"):
            raise ValueError(f"phase must be pretrain or finetune, got {self.phase!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not (self.base_lr > 0 and self.ft_lr > 0):
            raise ValueError("learning rates must be > 0")
        if self.micro_batch < 2:
            raise ValueError("micro_batch must be >= 2 (contrastive pairs)")
        if self.accum_groups < 1 or self.ft_batch < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.ft_mode not in ("linear", "full"):
            raise ValueError(f"ft_mode must be linear or full, got {self.ft_mode!r}")

    @property
    def effective_batch(self) -> int:
        return self.micro_batch * self.accum_groups


def lr_schedule(step: int, base_lr: float, warmup_steps: int, total_steps: int) -> float:
    """Linear warmup from 0 to base_lr, then cosine decay to 0 at total_steps."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    progress = min((step - warmup_steps) / span, 1.0)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def _clip_rng(seed: int, epoch: int, clip_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, epoch, clip_index)))


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(parts).generate_state(1)[0])


def _diagnostics(model: VideoEncoder, step: int, epoch: int, parts: dict) -> dict:
    diag = {"step": step, "epoch": epoch}
    for key in ("l_sc", "l_tc", "total"):
        if key in parts:
            diag[key] = float(parts[key].detach())
    with torch.no_grad():
        diag["max_abs_param"] = max(float(p.abs().max()) for p in model.parameters())
        grads = [p.grad.abs().max() for p in model.parameters() if p.grad is not None]
        diag["max_abs_grad"] = max((float(g) for g in grads), default=0.0)
    return diag


def pretrain(clips: Sequence[VideoClip], model: VideoEncoder, config: TrainConfig,
             policy_a: AugmentationPolicy,
             policy_b: AugmentationPolicy) -> tuple[VideoEncoder, list[dict]]:
    """Self-supervised pretraining on clean-cut clips.

    Per optimizer step: ``accum_groups`` micro-batches are drawn, each turned
    into two augmented views, encoded, projected through both heads, and
    scored by the combined contrastive objective; the averaged gradients feed
    one AdamW update under the warmup/cosine schedule.
    """
    n = len(clips)
    if n == 0:
        raise ValueError("empty pretraining dataset")
    group = config.effective_batch
    if n < group:
        raise ValueError(f"dataset of {n} clips smaller than one effective batch ({group})")
    steps_per_epoch = n // group
    total_steps = steps_per_epoch * config.epochs
    warmup_steps = int(round(config.warmup_epochs * steps_per_epoch))

    optimizer = torch.optim.AdamW(model.parameters(), lr=config.base_lr,
                                  weight_decay=config.weight_decay)
    dtype = next(model.parameters()).dtype
    log: list[dict] = []
    step = 0
    for epoch in range(config.epochs):
        order = np.random.default_rng(
            np.random.SeedSequence((config.seed, epoch, 0x5))).permutation(n)
        for s in range(steps_per_epoch):
            lr = lr_schedule(step, config.base_lr, warmup_steps, total_steps)
            for pg in optimizer.param_groups:
                pg["lr"] = lr
            optimizer.zero_grad(set_to_none=True)
            sc_sum = tc_sum = tot_sum = 0.0
            for g in range(config.accum_groups):
                lo = (s * config.accum_groups + g) * config.micro_batch
                idx = order[lo:lo + config.micro_batch]
                views_a, views_b = [], []
                for ci in idx:
                    rng = _clip_rng(config.seed, epoch, int(ci))
                    va, vb = make_views(clips[ci], policy_a, policy_b, rng)
                    views_a.append(va)
                    views_b.append(vb)
                x = clips_to_tensor(views_a + views_b, dtype=dtype)
                h = model.encode(x)
                z = model.project_spatial(h)
                m = model.project_temporal(h)
                b = len(idx)
                batch = ContrastiveBatch(
                    z=z, m_a=m[:b], m_b=m[b:], tau_ins=config.tau_ins,
                    tau_ca=config.tau_ca, k_clusters=config.k_clusters,
                    lambda_tc=config.lambda_tc,
                    kmeans_seed=_derived_seed(config.seed, epoch, s, g))
                loss, parts = pretrain_loss(batch)
                if not torch.isfinite(loss):
                    raise NumericError(
                        f"non-finite pretraining loss at step {step}",
                        diagnostics=_diagnostics(model, step, epoch, parts))
                (loss / config.accum_groups).backward()
                sc_sum += float(parts["l_sc"].detach())
                tc_sum += float(parts["l_tc"].detach())
                tot_sum += float(parts["total"].detach())
            optimizer.step()
            log.append({"phase": "pretrain", "step": step, "epoch": epoch, "lr": lr,
                        "L_sc": sc_sum / config.accum_groups,
                        "L_tc": tc_sum / config.accum_groups,
                        "L_total": tot_sum / config.accum_groups})
            step += 1
    return model, log


def encode_clips(model: VideoEncoder, clips: Sequence[VideoClip],
                 batch_size: int = 32) -> torch.Tensor:
    """Embeddings (n, D) of clips, computed without gradients."""
    dtype = next(model.parameters()).dtype
    outs = []
    with torch.no_grad():
        for lo in range(0, len(clips), batch_size):
            outs.append(model.encode(clips_to_tensor(clips[lo:lo + batch_size], dtype=dtype)))
    return torch.cat(outs) if outs else torch.empty(0, model.config.embed_dim, dtype=dtype)


def soft_targets(ps: Sequence[float], dtype=torch.float32) -> torch.Tensor:
    p = torch.as_tensor(np.asarray(ps, dtype=np.float64), dtype=dtype)
    return torch.stack([1.0 - p, p], dim=1)


def finetune(model: VideoEncoder, dataset: Sequence[LabeledClip],
             config: TrainConfig) -> tuple[VideoEncoder, list[dict]]:
    """Train the classification head (and, in full mode, the encoder) with
    soft-label cross-entropy over sliding-window clips.

    Linear mode freezes the encoder; its features are computed once up front,
    which is equivalent to forwarding every batch through the frozen encoder.
    """
    if not dataset:
        raise ValueError("empty fine-tuning dataset")
    for lc in dataset:
        if lc.clip.shape != (model.config.input_t, model.config.input_h, model.config.input_w):
            raise ValueError(f"clip shape {lc.clip.shape} does not match encoder input "
                             f"({model.config.input_t}, {model.config.input_h}, "
                             f"{model.config.input_w})")
    n = len(dataset)
    dtype = next(model.parameters()).dtype
    targets = soft_targets([lc.p_movement for lc in dataset], dtype=dtype)
    linear = config.ft_mode == "linear"
    params = list(model.classifier.parameters()) if linear else list(model.parameters())
    optimizer = torch.optim.SGD(params, lr=config.ft_lr)
    features = encode_clips(model, [lc.clip for lc in dataset]) if linear else None

    log: list[dict] = []
    step = 0
    for epoch in range(config.epochs):
        order = np.random.default_rng(
            np.random.SeedSequence((config.seed, epoch, 0xF))).permutation(n)
        for lo in range(0, n, config.ft_batch):
            idx = order[lo:lo + config.ft_batch]
            if linear:
                h = features[idx]
            else:
                h = model.encode(clips_to_tensor([dataset[i].clip for i in idx], dtype=dtype))
            y_hat = model.classify(h)
            loss = soft_cross_entropy(y_hat, targets[idx])
            if not torch.isfinite(loss):
                raise NumericError(f"non-finite fine-tuning loss at step {step}",
                                   diagnostics={"step": step, "epoch": epoch})
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            log.append({"phase": "finetune", "step": step, "epoch": epoch,
                        "lr": config.ft_lr, "L_CE": float(loss.detach())})
            step += 1
    return model, log


def infer_timeline(model: VideoEncoder, frames: np.ndarray, source_fps: float,
                   sampler: SamplerConfig, source_id: str = "",
                   batch_size: int = 32) -> list[tuple[Window, float]]:
    """Movement probability for every sliding window of a recording.

    No augmentation or masking is applied; windows are emitted in temporal
    order. A recording shorter than one clip yields an empty list.
    """
    duration = frames.shape[0] / source_fps
    grid = sliding_window_grid(duration, sampler)
    if not grid:
        warnings.warn(f"recording of {duration:.2f}s shorter than one "
                      f"{sampler.clip_len_s}s clip; no windows")
        return []
    clips = [materialize_clip(frames, source_fps, w, sampler, source_id=source_id)
             for w in grid]
    dtype = next(model.parameters()).dtype
    probs = []
    with torch.no_grad():
        for lo in range(0, len(clips), batch_size):
            h = model.encode(clips_to_tensor(clips[lo:lo + batch_size], dtype=dtype))
            probs.append(model.classify(h)[:, 1])
    p = torch.cat(probs).cpu().numpy()
    return [(w, float(p[i])) for i, w in enumerate(grid)]
