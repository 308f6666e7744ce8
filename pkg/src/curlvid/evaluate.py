"""Metrics, subject-wise cross-validation folds, and embedding export.

Class-conditional rates for a class absent from the ground truth are reported
as ``None`` (undefined), never as 0. Balanced accuracy is the mean of the two
class recalls; the AUROC uses the rank (Mann-Whitney) statistic with half
credit for ties, which equals trapezoidal ROC integration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from scipy import stats

from .encoder import VideoEncoder, clips_to_tensor
from .timeline import LabeledClip


@dataclass
class MetricsReport:
    specificity: float | None
    sensitivity: float | None
    weighted_precision: float | None
    weighted_f1: float | None
    bacc: float | None
    auroc: float | None = None
    per_archetype_recall: dict[str, float] = field(default_factory=dict)
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def to_dict(self) -> dict:
        return {
            "specificity": self.specificity,
            "sensitivity": self.sensitivity,
            "weighted_precision": self.weighted_precision,
            "weighted_f1": self.weighted_f1,
            "bacc": self.bacc,
            "auroc": self.auroc,
            "per_archetype_recall": dict(self.per_archetype_recall),
            "counts": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
        }


def binarize_eval_labels(p_movement: Sequence[float], threshold: float = 0.5,
                         exclusion_band: tuple[float, float] | None = None
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Hard labels (1 = movement iff p >= threshold) plus a keep mask.

    Clips with p strictly inside the exclusion band, when one is given, are
    marked for exclusion from evaluation.
    """
    p = np.asarray(p_movement, dtype=np.float64)
    if p.size and (p.min() < 0 or p.max() > 1):
        raise ValueError("p_movement values must lie in [0, 1]")
    labels = (p >= threshold).astype(np.int64)
    keep = np.ones(p.shape, dtype=bool)
    if exclusion_band is not None:
        lo, hi = exclusion_band
        keep = ~((p > lo) & (p < hi))
    return labels, keep


def _safe_div(num: float, den: float) -> float | None:
    return num / den if den > 0 else None


def confusion_metrics(predictions: Sequence[int], labels: Sequence[int],
                      archetypes: Sequence[str] | None = None) -> MetricsReport:
    """Confusion-derived metrics for binary labels (1 = movement).

    Weighted precision / F1 weight the per-class values by class support; a
    class with zero predicted count contributes precision 0 for its support.
    Rates conditional on an absent ground-truth class come back as None.
    """
    pred = np.asarray(predictions, dtype=np.int64)
    true = np.asarray(labels, dtype=np.int64)
    if pred.shape != true.shape or pred.ndim != 1 or pred.size == 0:
        raise ValueError("predictions and labels must be equal-length 1-D and non-empty")
    tp = int(np.sum((pred == 1) & (true == 1)))
    fp = int(np.sum((pred == 1) & (true == 0)))
    tn = int(np.sum((pred == 0) & (true == 0)))
    fn = int(np.sum((pred == 0) & (true == 1)))

    sensitivity = _safe_div(tp, tp + fn)
    specificity = _safe_div(tn, tn + fp)
    bacc = None
    if sensitivity is not None and specificity is not None:
        bacc = 0.5 * (sensitivity + specificity)

    n = pred.size
    support = {1: tp + fn, 0: tn + fp}
    precision = {1: _safe_div(tp, tp + fp), 0: _safe_div(tn, tn + fn)}
    recall = {1: sensitivity, 0: specificity}
    w_prec = 0.0
    w_f1 = 0.0
    for cls in (0, 1):
        if support[cls] == 0:
            continue
        prec_c = precision[cls] if precision[cls] is not None else 0.0
        rec_c = recall[cls]
        f1_c = _safe_div(2 * prec_c * rec_c, prec_c + rec_c) or 0.0
        w_prec += support[cls] * prec_c / n
        w_f1 += support[cls] * f1_c / n

    per_arch: dict[str, float] = {}
    if archetypes is not None:
        arch = np.asarray(archetypes)
        if arch.shape != true.shape:
            raise ValueError("archetypes must align with labels")
        for name in sorted(set(arch[true == 1])):
            sel = (arch == name) & (true == 1)
            per_arch[str(name)] = float(np.mean(pred[sel] == 1))

    return MetricsReport(specificity=specificity, sensitivity=sensitivity,
                         weighted_precision=w_prec, weighted_f1=w_f1, bacc=bacc,
                         per_archetype_recall=per_arch, tp=tp, fp=fp, tn=tn, fn=fn)


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float | None:
    """P(score of a positive > score of a negative) + half credit for ties.

    None when only one class is present.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-D")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = stats.rankdata(s, method="average")
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def patient_kfold(subject_ids: Sequence[str], k: int = 5, seed: int = 0) -> list[list[str]]:
    """Deterministic shuffled partition of subjects into k near-equal folds."""
    unique = sorted(set(subject_ids))
    if k < 2:
        raise ValueError(f"need k >= 2 folds, got {k}")
    if len(unique) < k:
        raise ValueError(f"need at least {k} subjects for {k} folds, got {len(unique)}")
    order = np.random.default_rng(seed).permutation(len(unique))
    shuffled = [unique[i] for i in order]
    return [sorted(shuffled[i::k]) for i in range(k)]


def export_embeddings(model: VideoEncoder, dataset: Sequence[LabeledClip],
                      clip_ids: Sequence[str] | None = None,
                      head: str = "encoder", batch_size: int = 32) -> list[dict]:
    """One row per clip: id, soft label, and the embedding vector.

    ``head`` selects the raw encoder output, or the spatial / temporal
    projection. Rows come back in input order.
    """
    if head not in ("encoder", "spatial", "temporal"):
        raise ValueError(f"head must be encoder, spatial or temporal, got {head!r}")
    if clip_ids is None:
        clip_ids = [f"clip{i:06d}" for i in range(len(dataset))]
    dtype = next(model.parameters()).dtype
    rows: list[dict] = []
    with torch.no_grad():
        for lo in range(0, len(dataset), batch_size):
            chunk = dataset[lo:lo + batch_size]
            h = model.encode(clips_to_tensor([lc.clip for lc in chunk], dtype=dtype))
            if head == "spatial":
                h = model.project_spatial(h)
            elif head == "temporal":
                h = model.project_temporal(h)
            vecs = h.cpu().numpy()
            for i, lc in enumerate(chunk):
                rows.append({"clip_id": clip_ids[lo + i], "p_movement": lc.p_movement,
                             "embedding": vecs[i].copy()})
    return rows


def aggregate_reports(reports: Sequence[MetricsReport]) -> dict[str, dict[str, float | None]]:
    """Per-metric mean and sample standard deviation across folds."""
    out: dict[str, dict[str, float | None]] = {}
    for key in ("specificity", "sensitivity", "weighted_precision", "weighted_f1",
                "bacc", "auroc"):
        vals = [getattr(r, key) for r in reports if getattr(r, key) is not None]
        if not vals:
            out[key] = {"mean": None, "std": None}
        else:
            arr = np.asarray(vals, dtype=np.float64)
            out[key] = {"mean": float(arr.mean()),
                        "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0}
    return out
