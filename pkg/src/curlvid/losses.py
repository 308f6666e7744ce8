"""Training objectives: spatial instance-contrastive loss, per-batch k-means,
the cluster-aware temporal loss with its mutual-information regularizer, and
soft-label cross-entropy.

Conventions:

* All similarities are cosine; a zero vector compares as 0 to everything.
* The instance loss denominator runs over every sample in the doubled batch
  except the anchor itself (the positive is included).
* The cluster loss is cross-view: each embedding's positive is the centroid,
  in the other view's centroid set, of the cluster containing its partner.
  The softmax denominator runs over all K centroids.
* Centroids and hard assignments are constants for gradient purposes;
  gradients reach the embeddings through the similarity terms and the soft
  assignments inside the mutual information. Evaluating at fixed clusters
  (``clusters=`` argument) therefore matches finite differences.

Losses return torch scalars; gradients come from reverse-mode autodiff.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

_NORM_FLOOR = 1e-12
_LOG_FLOOR = 1e-12
_P_FLOOR = 1e-30


def cosine_sim(a, b) -> float:
    """Cosine similarity of two vectors; zero vectors compare as 0 (warned)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        warnings.warn("cosine similarity of a zero vector, defined as 0", RuntimeWarning)
        return 0.0
    return float(a @ b / (na * nb))


def _unit_rows(x: torch.Tensor) -> torch.Tensor:
    """Rows scaled to unit norm; zero rows stay zero."""
    return x / x.norm(dim=-1, keepdim=True).clamp_min(_NORM_FLOOR)


def cosine_matrix(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """(n, d) x (m, d) -> (n, m) cosine similarities."""
    return _unit_rows(x) @ _unit_rows(y).T


def default_pairing(n_pairs: int) -> np.ndarray:
    """Partner indices for a doubled batch laid out as [view_a; view_b]."""
    idx = np.arange(2 * n_pairs)
    return np.where(idx < n_pairs, idx + n_pairs, idx - n_pairs)


@dataclass
class ContrastiveBatch:
    """Projections of a doubled batch plus the loss hyperparameters.

    ``z`` stacks the spatial projections of view a then view b (2N rows, the
    i-th row's positive is row ``pairing[i]``). ``m_a`` / ``m_b`` are the
    temporal projections of the two views, row-aligned by source clip.
    """

    z: torch.Tensor
    m_a: torch.Tensor
    m_b: torch.Tensor
    tau_ins: float = 0.1
    tau_ca: float = 0.5
    k_clusters: int = 10
    lambda_tc: float = 1.0
    kmeans_seed: int = 0
    pairing: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        n = self.m_a.shape[0]
        if self.m_b.shape != self.m_a.shape:
            raise ValueError(f"view shapes differ: {tuple(self.m_a.shape)} vs {tuple(self.m_b.shape)}")
        if self.z.shape[0] != 2 * n:
            raise ValueError(f"z must have 2N = {2 * n} rows, got {self.z.shape[0]}")
        if n < 2:
            raise ValueError(f"need N >= 2 clip pairs, got {n}")
        if not (self.tau_ins > 0 and self.tau_ca > 0):
            raise ValueError("temperatures must be > 0")
        if not 1 <= self.k_clusters <= n:
            raise ValueError(f"need 1 <= K <= N, got K={self.k_clusters}, N={n}")
        if self.pairing is None:
            self.pairing = default_pairing(n)

    @property
    def n_pairs(self) -> int:
        return self.m_a.shape[0]


def spatial_info_nce(z: torch.Tensor, pairing, tau: float) -> tuple[torch.Tensor, torch.Tensor]:
    """Instance-discrimination loss over a doubled batch.

    Every row is an anchor once; its positive is ``pairing[anchor]``; the
    denominator runs over all rows except the anchor itself. Returns
    (mean loss, per-anchor losses).
    """
    n = z.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 embeddings, got {n}")
    pairing = np.asarray(pairing)
    if pairing.shape != (n,) or np.any(pairing == np.arange(n)) or \
            np.any(pairing[pairing] != np.arange(n)):
        raise ValueError("pairing must be a fixed-point-free involution on rows")
    if tau <= 0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    sims = cosine_matrix(z, z) / tau
    eye = torch.eye(n, dtype=torch.bool, device=z.device)
    denom = torch.logsumexp(sims.masked_fill(eye, float("-inf")), dim=1)
    pos = sims[torch.arange(n), torch.as_tensor(pairing)]
    per_item = denom - pos
    return per_item.mean(), per_item


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray          # (K, d)
    assignments: np.ndarray        # (N,) index of nearest centroid
    inertia: float
    inertia_trace: tuple[float, ...]  # inertia after each assignment step


@dataclass(frozen=True)
class ClusterResult:
    """Per-view clustering of the two temporal-projection batches."""

    view_a: KMeansResult  # centroids U, from m_a
    view_b: KMeansResult  # centroids V, from m_b


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]), dtype=np.float64)
    centroids[0] = x[rng.integers(n)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centroids[j] = x[idx]
        d2 = np.minimum(d2, ((x - centroids[j]) ** 2).sum(axis=1))
    return centroids


def kmeans(embeddings, k: int, seed: int = 0, max_iter: int = 50) -> KMeansResult:
    """Lloyd's algorithm with k-means++ init, run to assignment fixpoint.

    Empty clusters are re-seeded to the point farthest from its assigned
    centroid. The inertia trace is recorded after every assignment step and
    is non-increasing.
    """
    if hasattr(embeddings, "detach"):
        x = embeddings.detach().cpu().numpy().astype(np.float64)
    else:
        x = np.asarray(embeddings, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n_points, got k={k}, n={n}")
    if not np.isfinite(x).all():
        raise ValueError("embeddings must be finite")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(x, k, rng)
    trace: list[float] = []
    assignments = None
    for _ in range(max_iter):
        d2 = _sq_dists(x, centroids)
        new_assign = d2.argmin(axis=1)
        trace.append(float(d2[np.arange(n), new_assign].sum()))
        if assignments is not None and np.array_equal(new_assign, assignments):
            break
        assignments = new_assign
        point_d2 = d2[np.arange(n), assignments]
        for j in range(k):
            members = assignments == j
            if members.any():
                centroids[j] = x[members].mean(axis=0)
            else:
                far = int(point_d2.argmax())
                centroids[j] = x[far]
                point_d2[far] = 0.0
    else:
        d2 = _sq_dists(x, centroids)
        assignments = d2.argmin(axis=1)
        trace.append(float(d2[np.arange(n), assignments].sum()))
    return KMeansResult(centroids=centroids, assignments=assignments,
                        inertia=trace[-1], inertia_trace=tuple(trace))


def cluster_nce(m: torch.Tensor, other_view_centroids, assignments,
                tau: float) -> torch.Tensor:
    """Per-embedding cluster-prediction losses against the other view's centroids.

    ``assignments[i]`` names the positive centroid for row i; the softmax
    denominator includes all K centroids.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    centroids = torch.as_tensor(np.asarray(other_view_centroids), dtype=m.dtype,
                                device=m.device)
    if centroids.ndim != 2 or centroids.shape[0] < 1:
        raise ValueError(f"need (K, d) centroids with K >= 1, got {tuple(centroids.shape)}")
    idx = torch.as_tensor(np.asarray(assignments), dtype=torch.long, device=m.device)
    if idx.shape[0] != m.shape[0] or int(idx.max()) >= centroids.shape[0] or int(idx.min()) < 0:
        raise ValueError("assignments must map each embedding to a centroid index")
    sims = cosine_matrix(m, centroids) / tau
    return torch.logsumexp(sims, dim=1) - sims[torch.arange(m.shape[0]), idx]


def soft_assignments(m: torch.Tensor, centroids: torch.Tensor, tau: float) -> torch.Tensor:
    """Row-softmax of cosine similarity to centroids at temperature tau."""
    return torch.softmax(cosine_matrix(m, centroids) / tau, dim=1)


def mutual_information(m_a: torch.Tensor, m_b: torch.Tensor, centroids_a,
                       centroids_b, tau: float) -> torch.Tensor:
    """Mutual information of the joint soft cluster-assignment distribution.

    View a is softly assigned against the other view's centroids and vice
    versa; the joint K x K matrix is the normalized cross-product of the two
    assignment matrices. Always >= 0, and 0 when the joint factorizes.
    """
    u = torch.as_tensor(np.asarray(centroids_a), dtype=m_a.dtype, device=m_a.device)
    v = torch.as_tensor(np.asarray(centroids_b), dtype=m_a.dtype, device=m_a.device)
    a = soft_assignments(m_a, v, tau)   # (N, K)
    b = soft_assignments(m_b, u, tau)   # (N, K)
    p = a.T @ b / a.shape[0]
    p = p / p.sum()
    p_i = p.sum(dim=1, keepdim=True)
    p_j = p.sum(dim=0, keepdim=True)
    log_term = (torch.log(p.clamp_min(_P_FLOOR)) - torch.log(p_i.clamp_min(_P_FLOOR))
                - torch.log(p_j.clamp_min(_P_FLOOR)))
    return (p * log_term).sum()


def temporal_loss(batch: ContrastiveBatch,
                  clusters: ClusterResult | None = None) -> tuple[torch.Tensor, dict]:
    """Cluster-aware cross-view loss minus the mutual-information regularizer.

    When ``clusters`` is omitted, k-means runs per view on the detached
    embeddings (seeded from the batch); passing a precomputed
    :class:`ClusterResult` freezes the clustering, which is also the gradient
    semantics: centroids and hard assignments are constants.
    """
    if clusters is None:
        clusters = ClusterResult(
            view_a=kmeans(batch.m_a, batch.k_clusters, seed=batch.kmeans_seed),
            view_b=kmeans(batch.m_b, batch.k_clusters, seed=batch.kmeans_seed + 1),
        )
    u, v = clusters.view_a, clusters.view_b
    # each view predicts the cluster its partner occupies in the other view
    l_a = cluster_nce(batch.m_a, v.centroids, v.assignments, batch.tau_ca)
    l_b = cluster_nce(batch.m_b, u.centroids, u.assignments, batch.tau_ca)
    l_cluster = 0.5 * (l_a.mean() + l_b.mean())
    info = mutual_information(batch.m_a, batch.m_b, u.centroids, v.centroids, batch.tau_ca)
    loss = l_cluster - info
    return loss, {"l_cluster": l_cluster, "mutual_info": info, "clusters": clusters,
                  "per_item_a": l_a, "per_item_b": l_b}


def soft_cross_entropy(y_hat: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy against soft target rows; logs clamped at 1e-12."""
    y = torch.as_tensor(y, dtype=y_hat.dtype, device=y_hat.device)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: predictions {tuple(y_hat.shape)}, "
                         f"targets {tuple(y.shape)}")
    rows = y.sum(dim=-1)
    if torch.any(y < -1e-12) or torch.any((rows - 1.0).abs() > 1e-6):
        raise ValueError("target rows must be probability vectors summing to 1")
    return -(y * torch.log(y_hat.clamp_min(_LOG_FLOOR))).sum(dim=-1).mean()


def pretrain_loss(batch: ContrastiveBatch,
                  clusters: ClusterResult | None = None) -> tuple[torch.Tensor, dict]:
    """Total objective: instance loss plus lambda_tc times the temporal loss.

    With lambda_tc = 0 the temporal term is still evaluated (for logging) but
    detached, so it cannot influence updates.
    """
    l_sc, _ = spatial_info_nce(batch.z, batch.pairing, batch.tau_ins)
    l_tc, parts = temporal_loss(batch, clusters)
    if batch.lambda_tc == 0.0:
        total = l_sc
        l_tc = l_tc.detach()
    else:
        total = l_sc + batch.lambda_tc * l_tc
    return total, {"l_sc": l_sc, "l_tc": l_tc, "total": total, **parts}
