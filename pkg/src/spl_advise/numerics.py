"""Dense numeric kernels shared by every other module.

All floating-point work is float64. Randomness flows through
``numpy.random.Generator`` instances backed by PCG64; helpers here derive
child generators from a root seed with ``numpy.random.SeedSequence`` so a
single integer seed pins every stream in a run (see ``rng_child``).
"""

from __future__ import annotations

import numpy as np

# Rows processed per block when forming pairwise distance matrices. Keeps the
# n*k*d broadcast buffer bounded without losing the exact-difference formula.
_DIST_BLOCK_ROWS = 256


def as_matrix(a, name: str = "array") -> np.ndarray:
    """Validate and return a 2-D float64 array with finite entries."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    return out


def pairwise_sq_dist(X, C) -> np.ndarray:
    """Squared Euclidean distances between rows of X (n x d) and C (k x d).

    Computed from explicit differences (not the expanded inner-product form),
    so entries are exactly non-negative and ``pairwise_sq_dist(X, X)`` has an
    exactly zero diagonal.
    """
    X = np.asarray(X, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if X.ndim != 2 or C.ndim != 2:
        raise ValueError(f"expected 2-D inputs, got {X.shape} and {C.shape}")
    if X.shape[1] != C.shape[1]:
        raise ValueError(
            f"dimension mismatch: X is {X.shape}, C is {C.shape}"
        )
    n = X.shape[0]
    out = np.empty((n, C.shape[0]), dtype=np.float64)
    for start in range(0, n, _DIST_BLOCK_ROWS):
        stop = min(start + _DIST_BLOCK_ROWS, n)
        diff = X[start:stop, None, :] - C[None, :, :]
        np.einsum("ijk,ijk->ij", diff, diff, out=out[start:stop])
    return out


def log_sum_exp(v) -> float:
    """log(sum(exp(v))) with the max-shift trick; finite for finite max(v)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_sum_exp of empty input")
    m = np.max(v)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(v - m))))


def log_sum_exp_rows(A: np.ndarray) -> np.ndarray:
    """Row-wise log_sum_exp for a 2-D array."""
    m = np.max(A, axis=1, keepdims=True)
    return (m + np.log(np.sum(np.exp(A - m), axis=1, keepdims=True)))[:, 0]


class RankDeficientError(ValueError):
    """Raised when a projection asks for more components than the data has."""

    def __init__(self, effective_rank: int, dims: int):
        super().__init__(
            f"effective rank {effective_rank} is smaller than the "
            f"{dims} requested components"
        )
        self.effective_rank = effective_rank
        self.dims = dims


def pca_project(X, dims: int) -> np.ndarray:
    """Project rows of X onto the top `dims` principal components.

    Uses an eigendecomposition of the covariance of mean-centered X (d is
    small here, no iterative solver needed). Each component's sign is fixed
    by making its largest-magnitude loading positive, so the projection is
    reproducible across runs and platforms.

    Raises RankDeficientError when `dims` components cannot exist: the
    structural rank min(n - 1, d) is below `dims`, or the data carries zero
    variance. The check is structural on purpose; eigenvalue-magnitude
    thresholds cannot reliably separate exact degeneracy from roundoff.
    """
    X = as_matrix(X, "X")
    n, d = X.shape
    if n < 2:
        raise ValueError(f"need at least 2 rows, got {n}")
    if dims < 1 or dims > min(n, d):
        raise ValueError(f"dims={dims} outside [1, min(n, d)={min(n, d)}]")
    structural_rank = min(n - 1, d)
    if structural_rank < dims:
        raise RankDeficientError(structural_rank, dims)

    centered = X - X.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    if eigvals[0] <= 0.0:
        raise RankDeficientError(0, dims)

    components = eigvecs[:, :dims]
    for j in range(dims):
        pivot = int(np.argmax(np.abs(components[:, j])))
        if components[pivot, j] < 0:
            components[:, j] = -components[:, j]
    return centered @ components


def silhouette_score(X, labels) -> float:
    """Mean silhouette of samples grouped by `labels` under Euclidean distance.

    For sample i: a = mean distance to its own group (excluding itself),
    b = smallest mean distance to any other group, s = (b - a) / max(a, b).
    Singleton groups contribute s = 0.
    """
    X = as_matrix(X, "X")
    labels = np.asarray(labels)
    if labels.shape[0] != X.shape[0]:
        raise ValueError("labels length must match rows of X")
    uniq = np.unique(labels)
    if uniq.size < 2:
        raise ValueError("silhouette needs at least two groups")

    dists = np.sqrt(pairwise_sq_dist(X, X))
    n = X.shape[0]
    scores = np.zeros(n)
    masks = [labels == u for u in uniq]
    sizes = [int(m.sum()) for m in masks]
    for gi, mask in enumerate(masks):
        size = sizes[gi]
        rows = dists[mask]
        if size > 1:
            a = rows[:, mask].sum(axis=1) / (size - 1)
        else:
            scores[mask] = 0.0
            continue
        b = np.full(rows.shape[0], np.inf)
        for gj, other in enumerate(masks):
            if gj == gi:
                continue
            b = np.minimum(b, rows[:, other].mean(axis=1))
        denom = np.maximum(a, b)
        with np.errstate(invalid="ignore"):
            s = np.where(denom > 0, (b - a) / denom, 0.0)
        scores[mask] = s
    return float(scores.mean())


def rng_from_seed(seed: int) -> np.random.Generator:
    """Root generator for `seed` (PCG64)."""
    return np.random.default_rng(np.random.SeedSequence(seed))


def rng_child(seed: int, *key: int) -> np.random.Generator:
    """Deterministic child generator for a (seed, key...) path.

    The splitting rule: the stream for purpose `key` under root `seed` is
    ``PCG64(SeedSequence(entropy=seed, spawn_key=key))``. Identical
    (seed, key) pairs give bit-identical streams on every platform.
    """
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=key))
    )
