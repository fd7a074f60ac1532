"""Per-class k-means++ clustering of embedding-space representations.

The index groups every training sample into one of K clusters of its own
class, keeps the centroid of each cluster, and carries a per-sample loss
table that drives seed-cluster sampling. Indexes are snapshot values: the
embedding trainer owns the one mutable piece (the loss table) and publishes
deep copies; `refresh` builds a whole new index in the current space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .numerics import pairwise_sq_dist

log = logging.getLogger(__name__)

LLOYD_MAX_ITERS = 100
LLOYD_TOL = 1e-6

# Loss assumed for a sample before any real loss has been observed.
DEFAULT_LOSS = 1.0


class InsufficientImpostersError(ValueError):
    pass


def kmeanspp_init(points, K: int, rng: np.random.Generator) -> np.ndarray:
    """D^2-weighted seeding: first center uniform, then proportional to the
    squared distance to the nearest already-chosen center."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < K:
        raise ValueError(f"cannot seed {K} centers from {n} points")
    centers = np.empty((K, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = pairwise_sq_dist(points, centers[0:1])[:, 0]
    for k in range(1, K):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            # All remaining mass at already-chosen locations (duplicates).
            idx = rng.integers(n)
        centers[k] = points[idx]
        d2 = np.minimum(d2, pairwise_sq_dist(points, centers[k : k + 1])[:, 0])
    return centers


def lloyd(
    points,
    centers,
    max_iters: int = LLOYD_MAX_ITERS,
    tol: float = LLOYD_TOL,
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Lloyd iterations from the given centers.

    Alternates nearest-center assignment (ties to the lowest center id) and
    mean updates until the relative objective change drops below `tol` or
    `max_iters` passes run out. The returned objective trace, one entry per
    assignment, is non-increasing. An empty cluster is repaired by reseeding
    it at the point currently farthest from its assigned center.
    """
    points = np.asarray(points, dtype=np.float64)
    centers = np.array(centers, dtype=np.float64)
    if points.shape[1] != centers.shape[1]:
        raise ValueError(
            f"points {points.shape} vs centers {centers.shape}"
        )
    K = centers.shape[0]
    trace: list[float] = []
    assignments = np.zeros(points.shape[0], dtype=np.int64)
    for _ in range(max_iters):
        d2 = pairwise_sq_dist(points, centers)
        assignments = np.argmin(d2, axis=1)
        nearest = d2[np.arange(points.shape[0]), assignments]
        trace.append(float(nearest.sum()))
        if len(trace) > 1:
            prev, cur = trace[-2], trace[-1]
            if prev - cur <= tol * max(prev, 1e-300):
                break
        counts = np.bincount(assignments, minlength=K)
        empties = np.flatnonzero(counts == 0)
        if empties.size:
            by_distance = np.argsort(nearest)[::-1]
            for rank, k in enumerate(empties):
                centers[k] = points[by_distance[rank]]
            d2 = pairwise_sq_dist(points, centers)
            assignments = np.argmin(d2, axis=1)
            counts = np.bincount(assignments, minlength=K)
        for k in range(K):
            if counts[k] > 0:
                centers[k] = points[assignments == k].mean(axis=0)
    return assignments, centers, trace


@dataclass(frozen=True)
class Cluster:
    cluster_id: int
    class_id: int
    members: np.ndarray  # sample indices
    centroid: np.ndarray


@dataclass(frozen=True)
class ClusterIndex:
    """Per-class K-cluster structure over N samples.

    `loss_table` holds one scalar per sample (DEFAULT_LOSS before any loss is
    observed) and is mutated in place by its single owner, the embedding
    trainer; `copy()` produces the immutable snapshots everyone else reads.
    """

    clusters: tuple[Cluster, ...]
    assignment: np.ndarray  # sample index -> flat cluster id
    loss_table: np.ndarray
    clusters_per_class: int

    @property
    def n_samples(self) -> int:
        return self.assignment.shape[0]

    @property
    def class_ids(self) -> np.ndarray:
        return np.array([c.class_id for c in self.clusters])

    @property
    def centroids(self) -> np.ndarray:
        return np.stack([c.centroid for c in self.clusters])

    def mean_losses(self) -> np.ndarray:
        """Per-cluster mean of the loss table over members."""
        return np.array(
            [self.loss_table[c.members].mean() for c in self.clusters]
        )

    def record_losses(self, sample_ids: np.ndarray, losses: np.ndarray) -> None:
        self.loss_table[sample_ids] = losses

    def copy(self) -> "ClusterIndex":
        return ClusterIndex(
            self.clusters,
            self.assignment.copy(),
            self.loss_table.copy(),
            self.clusters_per_class,
        )

    def memberships(self) -> list[np.ndarray]:
        return [c.members for c in self.clusters]

    def debug_dump(self) -> dict:
        mean = self.mean_losses()
        return {
            "clusters": [
                {
                    "cluster_id": c.cluster_id,
                    "class_id": c.class_id,
                    "size": int(c.members.size),
                    "centroid": c.centroid.tolist(),
                    "mean_loss": float(mean[i]),
                }
                for i, c in enumerate(self.clusters)
            ]
        }


@dataclass(frozen=True)
class NeighborhoodBatch:
    """M cluster slots (seed first) with B sample indices each."""

    cluster_ids: np.ndarray  # (M,)
    class_ids: np.ndarray    # (M,)
    sample_ids: np.ndarray   # (M, B)


def build_index(
    reps,
    labels,
    K: int,
    per_sample_losses: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
) -> ClusterIndex:
    """k-means++ plus Lloyd, run independently for every class."""
    reps = np.asarray(reps, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if K < 1:
        raise ValueError("K must be >= 1")
    if rng is None:
        rng = np.random.default_rng()
    n = reps.shape[0]
    n_classes = int(labels.max()) + 1
    clusters: list[Cluster] = []
    assignment = np.full(n, -1, dtype=np.int64)
    for c in range(n_classes):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            raise ValueError(f"class {c} has no samples")
        pts = reps[members]
        centers = kmeanspp_init(pts, K, rng)
        local_assign, centers, _ = lloyd(pts, centers)
        for k in range(K):
            cid = c * K + k
            cluster_members = members[local_assign == k]
            clusters.append(
                Cluster(cid, c, cluster_members, centers[k].copy())
            )
            assignment[cluster_members] = cid
    if per_sample_losses is None:
        loss_table = np.full(n, DEFAULT_LOSS)
    else:
        loss_table = np.array(per_sample_losses, dtype=np.float64)
        if loss_table.shape != (n,):
            raise ValueError("per_sample_losses length must match reps rows")
    return ClusterIndex(tuple(clusters), assignment, loss_table, K)


def sample_neighborhood(
    index: ClusterIndex,
    M: int,
    B: int,
    rng: np.random.Generator,
    seed_mode: str = "loss",
) -> NeighborhoodBatch:
    """Seed cluster (probability proportional to mean loss, or uniform) plus
    its M-1 nearest differing-class clusters, B samples drawn per cluster.

    Samples are drawn without replacement unless a cluster holds fewer than
    B members, in which case replacement kicks in (logged once per call).
    """
    n_clusters = len(index.clusters)
    if M > n_clusters:
        raise ValueError(f"M={M} exceeds {n_clusters} clusters")
    if seed_mode == "loss":
        w = index.mean_losses()
        total = w.sum()
        probs = w / total if total > 0 else None
    elif seed_mode == "uniform":
        probs = None
    else:
        raise ValueError(f"unknown seed_mode {seed_mode!r}")
    seed = int(rng.choice(n_clusters, p=probs))
    seed_class = index.clusters[seed].class_id

    centroids = index.centroids
    class_ids = index.class_ids
    d2 = pairwise_sq_dist(centroids[seed : seed + 1], centroids)[0]
    candidates = np.flatnonzero(class_ids != seed_class)
    if candidates.size < M - 1:
        raise InsufficientImpostersError(
            f"{candidates.size} imposter clusters available, need {M - 1}"
        )
    # Stable sort keeps the lowest cluster id on distance ties.
    order = candidates[np.argsort(d2[candidates], kind="stable")]
    chosen = np.concatenate(([seed], order[: M - 1]))

    sample_ids = np.empty((M, B), dtype=np.int64)
    replaced = []
    for slot, cid in enumerate(chosen):
        members = index.clusters[cid].members
        if members.size >= B:
            sample_ids[slot] = rng.choice(members, size=B, replace=False)
        else:
            replaced.append(int(cid))
            sample_ids[slot] = rng.choice(members, size=B, replace=True)
    if replaced:
        log.warning(
            "clusters %s smaller than B=%d, sampled with replacement",
            replaced,
            B,
        )
    return NeighborhoodBatch(chosen, class_ids[chosen], sample_ids)


def refresh(
    index: ClusterIndex,
    new_reps,
    per_sample_losses: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
) -> ClusterIndex:
    """Full re-clustering in the current embedding space.

    The loss table carries over per sample (or is replaced when explicit
    losses are supplied).
    """
    new_reps = np.asarray(new_reps, dtype=np.float64)
    if new_reps.shape[0] != index.n_samples:
        raise ValueError(
            f"{new_reps.shape[0]} representations for {index.n_samples} samples"
        )
    labels = index.class_ids[index.assignment]
    losses = index.loss_table if per_sample_losses is None else per_sample_losses
    return build_index(
        new_reps, labels, index.clusters_per_class, losses, rng
    )


def cluster_purity(assignment, ground_truth) -> float:
    """Fraction of samples whose cluster's majority ground-truth id matches
    their own."""
    assignment = np.asarray(assignment)
    ground_truth = np.asarray(ground_truth)
    correct = 0
    for cid in np.unique(assignment):
        members = ground_truth[assignment == cid]
        values, counts = np.unique(members, return_counts=True)
        correct += int(counts.max())
    return correct / assignment.shape[0]
