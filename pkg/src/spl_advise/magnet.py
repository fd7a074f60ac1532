"""Cluster-overlap penalty over neighborhood mini-batches: forward value and
exact gradient with respect to the batch representations.

A batch holds an M x B grid of embedding vectors (M cluster slots, B samples
each). Per example, the loss compares its distance to its own slot's batch
mean against distances to differing-class means, normalized by the shared
spread statistic and hinged at zero:

    term = max(0, alpha + d_own / (2 s) + log sum_j exp(-d_j / (2 s)))

where j ranges over denominator means of a different class, d are squared
Euclidean distances and s is the spread of all examples around their slot
means, q = sum(d_own) / (MB - 1). By default s = q, reading the spread
definition as a variance so the exponent stays dimensionless; the literal
alternative s = q^2 is kept behind `sigma_mode="literal"` for comparison.

The gradient is exact reverse-mode through the slot means and through s,
both of which depend on every representation in the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets
from .clusters import ClusterIndex, NeighborhoodBatch, sample_neighborhood

SIGMA_FLOOR = 1e-12

SIGMA_MODES = ("variance", "literal")
DENOMINATOR_MODES = ("batch", "index")


class DegenerateBatchError(ValueError):
    """All representations coincide; the spread statistic is exactly zero."""


class NoImposterError(ValueError):
    """Some example has no differing-class mean in the denominator."""


@dataclass(frozen=True)
class MagnetBatch:
    """M x B grid of representations with a class id per cluster slot.

    `extra_means` / `extra_classes` optionally extend the denominator with
    fixed centroids (no gradient flows into them); used by the full-index
    denominator ablation.
    """

    reps: np.ndarray       # (M, B, e)
    class_ids: np.ndarray  # (M,)
    alpha: float
    extra_means: np.ndarray | None = None    # (J, e)
    extra_classes: np.ndarray | None = None  # (J,)

    def __post_init__(self):
        reps = np.asarray(self.reps, dtype=np.float64)
        object.__setattr__(self, "reps", reps)
        object.__setattr__(
            self, "class_ids", np.asarray(self.class_ids, dtype=np.int64)
        )
        if reps.ndim != 3:
            raise ValueError(f"reps must be (M, B, e), got {reps.shape}")
        m, b, _ = reps.shape
        if m < 2 or b < 2:
            raise ValueError(f"need M >= 2 and B >= 2, got M={m}, B={b}")
        if self.class_ids.shape != (m,):
            raise ValueError("one class id per cluster slot required")
        if (self.extra_means is None) != (self.extra_classes is None):
            raise ValueError("extra_means and extra_classes go together")

    @property
    def m(self) -> int:
        return self.reps.shape[0]

    @property
    def b(self) -> int:
        return self.reps.shape[1]


@dataclass(frozen=True)
class MagnetResult:
    loss: float
    grad: np.ndarray                 # (M, B, e), d loss / d reps
    per_example_losses: np.ndarray   # (M, B), hinged terms
    sigma_sq: float                  # the spread value actually used
    mus: np.ndarray                  # (M, e) slot means
    sigma_floored: bool


def magnet_forward(batch: MagnetBatch, sigma_mode: str = "variance") -> MagnetResult:
    """Loss value, per-example hinged terms, and exact gradient wrt reps."""
    if sigma_mode not in SIGMA_MODES:
        raise ValueError(f"sigma_mode must be one of {SIGMA_MODES}")
    r = batch.reps
    M, B, _ = r.shape
    mus = r.mean(axis=1)                      # (M, e)
    diffs_own = r - mus[:, None, :]           # (M, B, e)
    d_own = np.einsum("mbe,mbe->mb", diffs_own, diffs_own)

    q = d_own.sum() / (M * B - 1)
    if q == 0.0:
        raise DegenerateBatchError("all representations in the batch coincide")
    s_raw = q if sigma_mode == "variance" else q * q
    floored = s_raw < SIGMA_FLOOR
    s = max(s_raw, SIGMA_FLOOR)

    den_means = mus
    den_classes = batch.class_ids
    n_batch_means = M
    if batch.extra_means is not None:
        extra = np.asarray(batch.extra_means, dtype=np.float64)
        den_means = np.concatenate([mus, extra], axis=0)
        den_classes = np.concatenate(
            [batch.class_ids, np.asarray(batch.extra_classes, dtype=np.int64)]
        )
    J = den_means.shape[0]

    diff_all = r[:, :, None, :] - den_means[None, None, :, :]  # (M, B, J, e)
    d_all = np.einsum("mbje,mbje->mbj", diff_all, diff_all)
    imposter = den_classes[None, :] != batch.class_ids[:, None]  # (M, J)
    if not imposter.any(axis=1).all():
        bad = np.flatnonzero(~imposter.any(axis=1))
        raise NoImposterError(
            f"cluster slots {bad.tolist()} have no differing-class mean"
        )

    u = np.where(imposter[:, None, :], -d_all / (2.0 * s), -np.inf)
    u_max = u.max(axis=2, keepdims=True)
    exp_u = np.exp(u - u_max)
    sum_exp = exp_u.sum(axis=2)
    lse = u_max[:, :, 0] + np.log(sum_exp)
    p = exp_u / sum_exp[:, :, None]           # softmax over denominator means

    t = batch.alpha + d_own / (2.0 * s) + lse
    hinged = np.maximum(t, 0.0)
    loss = float(hinged.mean())

    # Reverse pass. g_t is d loss / d t; the hinge gates everything behind it.
    g_t = (t > 0).astype(np.float64) / (M * B)
    coef_own = g_t / (2.0 * s)                             # on d_own direct
    coef_imp = -(g_t[:, :, None] * p) / (2.0 * s)          # on d_all
    if floored:
        w_q = 0.0  # s clamped to the floor: constant wrt the reps
    else:
        dt_ds = (np.einsum("mbj,mbj->mb", p, d_all) - d_own) / (2.0 * s * s)
        w_s = float((g_t * dt_ds).sum())
        ds_dq = 1.0 if sigma_mode == "variance" else 2.0 * q
        w_q = w_s * ds_dq
    coef_own_total = coef_own + w_q / (M * B - 1)

    grad = 2.0 * coef_own_total[:, :, None] * diffs_own
    v = np.einsum("mb,mbe->me", coef_own_total, diffs_own)
    grad -= (2.0 / B) * v[:, None, :]

    grad += 2.0 * np.einsum("mbj,mbje->mbe", coef_imp, diff_all)
    # Mean-dependence of the denominator distances, batch slots only.
    contrib = np.einsum(
        "mbj,mbje->je",
        coef_imp[:, :, :n_batch_means],
        diff_all[:, :, :n_batch_means, :],
    )
    grad -= (2.0 / B) * contrib[:, None, :]

    return MagnetResult(loss, grad, hinged, s, mus, floored)


@dataclass(frozen=True)
class MagnetStepInfo:
    batch: NeighborhoodBatch
    per_example_losses: np.ndarray
    loss: float
    sigma_floored: bool


def magnet_training_step(
    params: nets.MlpParams,
    X: np.ndarray,
    index: ClusterIndex,
    M: int,
    B: int,
    alpha: float,
    opt_state: nets.OptimizerState,
    rng: np.random.Generator,
    sigma_mode: str = "variance",
    denominator: str = "batch",
    seed_mode: str = "loss",
) -> tuple[nets.MlpParams, nets.OptimizerState, MagnetStepInfo]:
    """One embedding update: sample a neighborhood batch, embed it, take an
    optimizer step on the magnet objective, and record the per-example
    hinged losses in the index's loss table."""
    if denominator not in DENOMINATOR_MODES:
        raise ValueError(f"denominator must be one of {DENOMINATOR_MODES}")
    nbatch = sample_neighborhood(index, M, B, rng, seed_mode=seed_mode)
    flat_ids = nbatch.sample_ids.reshape(-1)
    out, tape = nets.forward(params, X[flat_ids])
    reps = out.reshape(M, B, -1)

    extra_means = extra_classes = None
    if denominator == "index":
        in_batch = np.isin(np.arange(len(index.clusters)), nbatch.cluster_ids)
        others = np.flatnonzero(~in_batch)
        if others.size:
            extra_means = index.centroids[others]
            extra_classes = index.class_ids[others]
    mbatch = MagnetBatch(
        reps, nbatch.class_ids, alpha, extra_means, extra_classes
    )
    result = magnet_forward(mbatch, sigma_mode=sigma_mode)

    grads = nets.backward(params, tape, result.grad.reshape(out.shape))
    new_params, new_state = nets.optimizer_step(params, grads, opt_state)
    index.record_losses(flat_ids, result.per_example_losses.reshape(-1))
    info = MagnetStepInfo(
        nbatch, result.per_example_losses, result.loss, result.sigma_floored
    )
    return new_params, new_state, info
