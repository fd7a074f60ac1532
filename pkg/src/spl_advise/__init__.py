"""Self-paced mini-batch selection driven by a learned embedding space.

An embedding MLP trained with a cluster-overlap (magnet) objective keeps a
per-class k-means++ index of the representation space; a student classifier
selects its own mini-batches with a closed-form self-paced weight solver
balancing sample easiness against cluster diversity. Baseline samplers
(random, spl, spld) and a benchmark harness make the convergence behaviour
measurable.
"""

__version__ = "0.1.0"

from .clusters import ClusterIndex, build_index, refresh, sample_neighborhood
from .data import Dataset, Split, gen_gaussian_blobs, load_csv, load_idx
from .magnet import MagnetBatch, MagnetResult, magnet_forward
from .nets import MlpParams, ce_loss_per_sample, forward, init_mlp
from .selection import (
    PaceSchedule,
    WeightVector,
    solve_weights,
    update_pace,
)
from .training import TrainConfig, run_experiment, train_student_loop

__all__ = [
    "__version__",
    "ClusterIndex",
    "Dataset",
    "MagnetBatch",
    "MagnetResult",
    "MlpParams",
    "PaceSchedule",
    "Split",
    "TrainConfig",
    "WeightVector",
    "build_index",
    "ce_loss_per_sample",
    "forward",
    "gen_gaussian_blobs",
    "init_mlp",
    "load_csv",
    "load_idx",
    "magnet_forward",
    "refresh",
    "run_experiment",
    "sample_neighborhood",
    "solve_weights",
    "train_student_loop",
    "update_pace",
]
