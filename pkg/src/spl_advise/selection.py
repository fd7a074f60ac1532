"""Closed-form self-paced sample selection and the baseline policies.

The student minimizes, over binary per-sample weights W grouped into
clusters,

    sum_i W_i * L_i  -  lambda * sum_i W_i  -  gamma * sum_k ||W^k||_2

The W-subproblem has a closed-form global optimum: within each cluster,
sort losses ascending and give rank i (1-based) weight 1 exactly when
L < lambda + gamma / (sqrt(i) + sqrt(i-1)). The linear part is separable
and the diversity term is concave, so the optimum sits at a vertex of the
[0,1]^N box and the decreasing rank threshold realizes it. gamma = 0
collapses the rule to plain loss thresholding at lambda, clusters becoming
irrelevant.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .clusters import kmeanspp_init, lloyd

SAMPLERS = ("random", "spl", "spld", "spl-advise")
PACE_MODES = ("growth", "as-written")

# Percentile-based lambda init can hit 0 when the model is already perfect;
# keep the schedule strictly positive.
LAMBDA_FLOOR = 1e-12


class PaceTooStrictError(RuntimeError):
    """No sample passes the current thresholds."""


@dataclass(frozen=True)
class PaceSchedule:
    """Easiness threshold lam, diversity budget gamma, and their growth
    factors beta1/beta2.

    `growth` mode multiplies lam by (1 + beta1) and gamma by (1 + beta2)
    each update, so both admission thresholds rise over iterations.
    `as-written` applies the update rule verbatim (lam' = beta1 * lam,
    gamma' = beta2 * lam, both from the incoming lam), which shrinks the
    pace for beta < 1; it is kept for fidelity and ablations.
    """

    lam: float
    gamma: float
    beta1: float = 0.1
    beta2: float = 0.1
    update_mode: str = "growth"

    def __post_init__(self):
        if self.lam <= 0 or not np.isfinite(self.lam):
            raise ValueError(f"lambda must be finite and > 0, got {self.lam}")
        if self.gamma < 0 or not np.isfinite(self.gamma):
            raise ValueError(f"gamma must be finite and >= 0, got {self.gamma}")
        if self.update_mode not in PACE_MODES:
            raise ValueError(f"update_mode must be one of {PACE_MODES}")


def update_pace(pace: PaceSchedule) -> PaceSchedule:
    if pace.update_mode == "growth":
        return replace(
            pace,
            lam=(1.0 + pace.beta1) * pace.lam,
            gamma=(1.0 + pace.beta2) * pace.gamma,
        )
    return replace(pace, lam=pace.beta1 * pace.lam, gamma=pace.beta2 * pace.lam)


def init_pace_from_losses(
    losses,
    beta1: float,
    beta2: float,
    update_mode: str = "growth",
    percentile: float = 50.0,
    gamma_ratio: float = 0.5,
) -> PaceSchedule:
    """Set lam to a percentile of the current loss distribution and gamma to
    a fraction of lam, so thresholds start in scale with the actual losses."""
    losses = np.asarray(losses, dtype=np.float64)
    lam = max(float(np.percentile(losses, percentile)), LAMBDA_FLOOR)
    return PaceSchedule(
        lam=lam,
        gamma=gamma_ratio * lam,
        beta1=beta1,
        beta2=beta2,
        update_mode=update_mode,
    )


def rank_threshold(rank: int, pace: PaceSchedule) -> float:
    """Admission threshold for the rank-th easiest sample of a cluster
    (rank starts at 1, where the threshold is exactly lam + gamma)."""
    return pace.lam + pace.gamma / (np.sqrt(rank) + np.sqrt(rank - 1))


@dataclass(frozen=True)
class WeightVector:
    """Binary selection weights grouped by cluster."""

    sample_ids: tuple[np.ndarray, ...]  # per cluster
    weights: tuple[np.ndarray, ...]     # per cluster, values in {0, 1}

    @property
    def selected_per_cluster(self) -> np.ndarray:
        return np.array([int(w.sum()) for w in self.weights])

    @property
    def total_selected(self) -> int:
        return int(self.selected_per_cluster.sum())

    def selected_ids(self) -> np.ndarray:
        picked = [
            ids[w == 1] for ids, w in zip(self.sample_ids, self.weights)
        ]
        if not picked:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(picked))


def solve_weights(
    cluster_losses: Sequence[tuple[np.ndarray, np.ndarray]],
    pace: PaceSchedule,
) -> WeightVector:
    """Optimal binary weights for the current losses and pace.

    `cluster_losses` holds one (sample_ids, losses) pair per cluster. Loss
    ties are broken by sample id so runs are deterministic.
    """
    ids_out, weights_out = [], []
    for ids, losses in cluster_losses:
        ids = np.asarray(ids, dtype=np.int64)
        losses = np.asarray(losses, dtype=np.float64)
        if ids.shape != losses.shape:
            raise ValueError("sample_ids and losses must align per cluster")
        if losses.size and (not np.all(np.isfinite(losses)) or losses.min() < 0):
            raise ValueError("losses must be finite and >= 0")
        order = np.lexsort((ids, losses))
        ranks = np.arange(1, ids.size + 1, dtype=np.float64)
        thresholds = pace.lam + pace.gamma / (np.sqrt(ranks) + np.sqrt(ranks - 1))
        w = np.zeros(ids.size, dtype=np.int64)
        w[order] = (losses[order] < thresholds).astype(np.int64)
        ids_out.append(ids)
        weights_out.append(w)
    return WeightVector(tuple(ids_out), tuple(weights_out))


def select_batch(
    pool: np.ndarray, batch_size: int, rng: np.random.Generator
) -> np.ndarray:
    """One mini-batch drawn uniformly without replacement from `pool`;
    the whole remainder when fewer than `batch_size` samples are left."""
    pool = np.asarray(pool, dtype=np.int64)
    if pool.size == 0:
        raise PaceTooStrictError("no selected samples to draw from")
    if pool.size <= batch_size:
        return rng.permutation(pool)
    return rng.choice(pool, size=batch_size, replace=False)


def epoch_batches(
    pool: np.ndarray, batch_size: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Shuffled partition of `pool` into batches; every index appears exactly
    once, the final batch holding the remainder."""
    pool = np.asarray(pool, dtype=np.int64)
    if pool.size == 0:
        raise PaceTooStrictError("no selected samples to draw from")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    perm = rng.permutation(pool)
    return [perm[i : i + batch_size] for i in range(0, perm.size, batch_size)]


def fallback_selection(
    cluster_losses: Sequence[tuple[np.ndarray, np.ndarray]],
) -> np.ndarray:
    """Deadlock recovery when nothing passes the pace: the single
    smallest-loss sample from each non-empty cluster (ties by sample id)."""
    picked = []
    for ids, losses in cluster_losses:
        ids = np.asarray(ids, dtype=np.int64)
        losses = np.asarray(losses, dtype=np.float64)
        if ids.size == 0:
            continue
        best = np.lexsort((ids, losses))[0]
        picked.append(ids[best])
    return np.sort(np.array(picked, dtype=np.int64))


def spld_raw_clusters(
    features: np.ndarray, K: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Fixed raw-feature grouping for the diversity baseline: one global
    k-means++ / Lloyd run over the raw features, computed once and never
    refreshed, so it ignores whatever the embedding learns."""
    features = np.asarray(features, dtype=np.float64)
    centers = kmeanspp_init(features, K, rng)
    assignments, _, _ = lloyd(features, centers)
    return [np.flatnonzero(assignments == k) for k in range(K)]
