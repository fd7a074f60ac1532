"""Two-dimensional projection export for inspecting the embedding space."""

from __future__ import annotations

from . import nets
from .data import Dataset
from .numerics import pca_project, silhouette_score


def embedding_silhouette(params: nets.MlpParams, dataset: Dataset) -> float:
    """Silhouette of the class grouping in the full embedding space."""
    reps, _ = nets.forward(params, dataset.features)
    return silhouette_score(reps, dataset.labels)


def export_viz(params: nets.MlpParams, dataset: Dataset) -> tuple[str, float]:
    """Embed every sample, project to 2-D, and render the plot-ready CSV.

    The cluster_id column carries the generating sub-cluster when the
    dataset knows it, otherwise the class label. Returns (csv_text,
    silhouette of the class grouping in the full embedding space).
    """
    reps, _ = nets.forward(params, dataset.features)
    projected = pca_project(reps, 2)
    score = silhouette_score(reps, dataset.labels)
    cluster_ids = (
        dataset.subcluster_ids
        if dataset.subcluster_ids is not None
        else dataset.labels
    )
    lines = ["x,y,label,cluster_id"]
    lines.extend(
        f"{projected[i, 0]!r},{projected[i, 1]!r},"
        f"{int(dataset.labels[i])},{int(cluster_ids[i])}"
        for i in range(dataset.n_samples)
    )
    return "\n".join(lines) + "\n", score
