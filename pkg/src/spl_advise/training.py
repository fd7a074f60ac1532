"""Orchestration: the embedding loop maintaining the cluster index, the
student loop consuming cluster snapshots for self-paced mini-batches, the
baseline samplers, and the multi-seed experiment runner.

Seed discipline. Data generation and the train/test split draw from
``dataset.seed`` only, so every sampler and every training seed sees the
same data. Each training run derives its streams from its run seed via
the documented splitting rule (numerics.rng_child):

    (run_seed, 0) embedding init      (run_seed, 2) student init
    (run_seed, 1) embedding loop      (run_seed, 3) student loop
    (run_seed, 4) baseline raw-feature clustering

Student init uses the same stream regardless of sampler, so runs with equal
seeds start from identical student weights.

With ``parallel`` off the two loops interleave strictly on one thread and a
run is bit-reproducible from its seed (the metrics CSV records 0 for
wall-clock, keeping bytes stable; real timing lives in the run summary).
With ``parallel`` on the embedding loop runs in a worker thread and the
student reads whatever checksummed snapshot is newest.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nets
from .clusters import ClusterIndex, build_index, refresh
from .data import (
    Dataset,
    Split,
    gen_gaussian_blobs,
    hflip_batch,
    load_csv,
    load_idx,
    split_dataset,
    standardize,
)
from .magnet import magnet_training_step
from .numerics import rng_child
from .selection import (
    SAMPLERS,
    PaceSchedule,
    epoch_batches,
    fallback_selection,
    init_pace_from_losses,
    solve_weights,
    spld_raw_clusters,
    update_pace,
)

EMBED_INIT_STREAM = 0
EMBED_LOOP_STREAM = 1
STUDENT_INIT_STREAM = 2
STUDENT_LOOP_STREAM = 3
SPLD_STREAM = 4

DATA_STREAM = 0
SPLIT_STREAM = 1

METRICS_COLUMNS = (
    "outer_iter",
    "minibatch_updates",
    "train_acc",
    "test_acc",
    "mean_ce",
    "selected_count",
    "lambda",
    "gamma",
    "magnet_loss",
    "wallclock_ms",
)


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "blobs"  # blobs | idx | csv
    classes: int = 8
    subclusters: int = 3
    samples_per_subcluster: int = 100
    dim: int = 10
    center_spread: float = 10.0
    cluster_std: float = 1.0
    seed: int = 12345
    test_fraction: float = 0.25
    standardize: bool = True
    augment_hflip: bool = False
    images: str = ""        # idx
    labels: str = ""        # idx
    path: str = ""          # csv
    label_column: str = ""  # csv


@dataclass(frozen=True)
class EmbeddingConfig:
    hidden: tuple[int, ...] = (32,)
    embedding_dim: int = 8
    clusters_per_class: int = 3  # K
    batch_clusters: int = 8      # M
    batch_examples: int = 8      # B
    margin: float = 1.0
    iterations: int = 200        # E
    refresh_interval: int = 50   # R
    optimizer: str = "adam"
    lr: float = 0.0001
    weight_decay: float = 0.0
    momentum: float = 0.9
    nesterov: bool = True
    seed_sampling: str = "loss"    # loss | uniform
    sigma_mode: str = "variance"   # variance | literal
    denominator: str = "batch"     # batch | index


@dataclass(frozen=True)
class StudentConfig:
    hidden: tuple[int, ...] = (32,)
    optimizer: str = "sgd"
    lr: float = 0.1
    momentum: float = 0.9
    nesterov: bool = True
    weight_decay: float = 0.0005
    batch_size: int = 64
    outer_iterations: int = 15  # E'
    epochs_per_iteration: int = 1
    lr_milestones: tuple[int, ...] = ()
    lr_factor: float = 0.1


@dataclass(frozen=True)
class PaceConfig:
    beta1: float = 0.1
    beta2: float = 0.1
    update_mode: str = "growth"  # growth | as-written
    init_percentile: float = 50.0
    init_gamma_ratio: float = 0.5


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "spl-advise"
    # Cluster count for the fixed raw-feature baseline; 0 means
    # classes * clusters_per_class, matching the learned index granularity.
    spld_clusters: int = 0


@dataclass(frozen=True)
class RunConfig:
    samplers: tuple[str, ...] = ()  # empty -> just sampler.kind
    seeds: tuple[int, ...] = ()     # empty -> just the top-level seed


@dataclass(frozen=True)
class TrainConfig:
    name: str = "experiment"
    seed: int = 0
    parallel: bool = False
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    student: StudentConfig = field(default_factory=StudentConfig)
    pace: PaceConfig = field(default_factory=PaceConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def effective_seeds(self) -> tuple[int, ...]:
        return self.run.seeds if self.run.seeds else (self.seed,)

    def effective_samplers(self) -> tuple[str, ...]:
        return self.run.samplers if self.run.samplers else (self.sampler.kind,)

    def spld_cluster_count(self) -> int:
        if self.sampler.spld_clusters > 0:
            return self.sampler.spld_clusters
        return self.dataset.classes * self.embedding.clusters_per_class

    def validate(self) -> None:
        for s in self.effective_samplers():
            if s not in SAMPLERS:
                raise ValueError(f"unknown sampler {s!r}, expected one of {SAMPLERS}")
        if self.embedding.batch_clusters < 2 or self.embedding.batch_examples < 2:
            raise ValueError("embedding batch needs at least 2 clusters and 2 examples")
        for name, value in (
            ("embedding.clusters_per_class", self.embedding.clusters_per_class),
            ("student.batch_size", self.student.batch_size),
            ("student.outer_iterations", self.student.outer_iterations),
            ("student.epochs_per_iteration", self.student.epochs_per_iteration),
        ):
            if value < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")


# ---------------------------------------------------------------------------
# Dataset assembly


def build_dataset(cfg: DatasetConfig) -> tuple[Dataset, Split]:
    """Materialize the configured dataset and its train/test split."""
    if cfg.kind == "blobs":
        ds = gen_gaussian_blobs(
            cfg.classes,
            cfg.subclusters,
            cfg.samples_per_subcluster,
            cfg.dim,
            cfg.center_spread,
            cfg.cluster_std,
            rng_child(cfg.seed, DATA_STREAM),
        )
    elif cfg.kind == "idx":
        ds = load_idx(cfg.images, cfg.labels)
    elif cfg.kind == "csv":
        ds = load_csv(cfg.path, cfg.label_column)
    else:
        raise ValueError(f"unknown dataset kind {cfg.kind!r}")
    split = split_dataset(ds, cfg.test_fraction, rng_child(cfg.seed, SPLIT_STREAM))
    if cfg.standardize:
        ds = standardize(ds, split)
    return ds, split


# ---------------------------------------------------------------------------
# Embedding loop


@dataclass(frozen=True)
class EmbeddingSnapshot:
    """Atomic (model, index) pair published by the embedding loop."""

    params: nets.MlpParams
    index: ClusterIndex
    version: int
    steps_done: int
    checksum: str

    def verify(self) -> None:
        if snapshot_checksum(self.params, self.index) != self.checksum:
            raise RuntimeError(f"snapshot v{self.version} failed its checksum")


def snapshot_checksum(params: nets.MlpParams, index: ClusterIndex) -> str:
    h = hashlib.sha256()
    for a in params.arrays():
        h.update(np.ascontiguousarray(a).tobytes())
    h.update(np.ascontiguousarray(index.assignment).tobytes())
    h.update(np.ascontiguousarray(index.loss_table).tobytes())
    for c in index.clusters:
        h.update(np.ascontiguousarray(c.centroid).tobytes())
    return h.hexdigest()


class EmbeddingTrainer:
    """Runs the embedding network's magnet updates over the train subset and
    re-clusters the representation space every `refresh_interval` steps.

    Publishes an immutable checksummed snapshot after the initial clustering
    and after every refresh. Single-writer: only this object (on whichever
    thread drives it) touches the model, optimizer and loss table.
    """

    def __init__(self, config: TrainConfig, X_train: np.ndarray, y_train: np.ndarray, run_seed: int):
        ecfg = config.embedding
        self.cfg = ecfg
        self.X = X_train
        self.y = y_train
        dims = (X_train.shape[1], *ecfg.hidden, ecfg.embedding_dim)
        self.params = nets.init_mlp(dims, rng_child(run_seed, EMBED_INIT_STREAM))
        self.initial_params = self.params
        if ecfg.optimizer == "adam":
            self.opt = nets.init_optimizer(
                "adam", self.params, ecfg.lr, weight_decay=ecfg.weight_decay
            )
        else:
            self.opt = nets.init_optimizer(
                "sgd",
                self.params,
                ecfg.lr,
                momentum=ecfg.momentum,
                nesterov=ecfg.nesterov,
                weight_decay=ecfg.weight_decay,
            )
        self.rng = rng_child(run_seed, EMBED_LOOP_STREAM)
        self.steps_done = 0
        self.sigma_floor_hits = 0
        self._lock = threading.Lock()
        reps, _ = nets.forward(self.params, self.X)
        self.index = build_index(
            reps, self.y, ecfg.clusters_per_class, None, self.rng
        )
        self._snapshot: EmbeddingSnapshot | None = None
        self._publish()

    def _publish(self) -> None:
        index_copy = self.index.copy()
        version = 0 if self._snapshot is None else self._snapshot.version + 1
        snap = EmbeddingSnapshot(
            self.params,
            index_copy,
            version,
            self.steps_done,
            snapshot_checksum(self.params, index_copy),
        )
        with self._lock:
            self._snapshot = snap

    def latest_snapshot(self) -> EmbeddingSnapshot:
        with self._lock:
            return self._snapshot

    @property
    def finished(self) -> bool:
        return self.steps_done >= self.cfg.iterations

    def step(self) -> bool:
        """One magnet update; returns False once the budget is exhausted."""
        if self.finished:
            return False
        self.params, self.opt, info = magnet_training_step(
            self.params,
            self.X,
            self.index,
            self.cfg.batch_clusters,
            self.cfg.batch_examples,
            self.cfg.margin,
            self.opt,
            self.rng,
            sigma_mode=self.cfg.sigma_mode,
            denominator=self.cfg.denominator,
            seed_mode=self.cfg.seed_sampling,
        )
        if info.sigma_floored:
            self.sigma_floor_hits += 1
        self.steps_done += 1
        if (
            self.cfg.refresh_interval > 0
            and self.steps_done % self.cfg.refresh_interval == 0
        ):
            reps, _ = nets.forward(self.params, self.X)
            self.index = refresh(self.index, reps, None, self.rng)
            self._publish()
        return True

    def advance(self, n_steps: int) -> None:
        for _ in range(n_steps):
            if not self.step():
                break

    def run_all(self) -> None:
        self.advance(self.cfg.iterations)


def train_embedding_loop(config: TrainConfig, X_train, y_train, run_seed: int):
    """Generator over the snapshots an embedding run publishes, in order."""
    trainer = EmbeddingTrainer(config, X_train, y_train, run_seed)
    yield trainer.latest_snapshot()
    last_version = 0
    while trainer.step():
        snap = trainer.latest_snapshot()
        if snap.version != last_version:
            last_version = snap.version
            yield snap


class InterleavedSource:
    """Deterministic snapshot source: the caller's advance() drives the
    embedding trainer a fixed number of steps on the current thread."""

    def __init__(self, trainer: EmbeddingTrainer, steps_per_advance: int):
        self.trainer = trainer
        self.steps_per_advance = steps_per_advance

    def advance(self) -> None:
        self.trainer.advance(self.steps_per_advance)

    def latest(self) -> EmbeddingSnapshot:
        return self.trainer.latest_snapshot()

    def close(self) -> None:
        pass


class ThreadedSource:
    """Snapshot source backed by a worker thread running the whole embedding
    budget; readers always get the newest published snapshot, never blocking
    on a refresh."""

    def __init__(self, trainer: EmbeddingTrainer):
        self.trainer = trainer
        self._thread = threading.Thread(
            target=trainer.run_all, name="embedding-loop", daemon=True
        )
        self._thread.start()

    def advance(self) -> None:
        pass

    def latest(self) -> EmbeddingSnapshot:
        return self.trainer.latest_snapshot()

    def close(self) -> None:
        self._thread.join()


# ---------------------------------------------------------------------------
# Metrics


@dataclass(frozen=True)
class MetricsRow:
    outer_iter: int
    minibatch_updates: int
    train_acc: float
    test_acc: float
    mean_ce: float
    selected_count: int
    lam: float
    gamma: float
    magnet_loss: float
    wallclock_ms: int

    def as_csv(self) -> str:
        return ",".join(
            (
                str(self.outer_iter),
                str(self.minibatch_updates),
                repr(self.train_acc),
                repr(self.test_acc),
                repr(self.mean_ce),
                str(self.selected_count),
                repr(self.lam),
                repr(self.gamma),
                repr(self.magnet_loss),
                str(self.wallclock_ms),
            )
        )


@dataclass
class RunMetrics:
    sampler: str
    seed: int
    rows: list[MetricsRow] = field(default_factory=list)
    sigma_floor_hits: int = 0
    duration_seconds: float = 0.0

    @property
    def final(self) -> MetricsRow:
        return self.rows[-1]

    def to_csv(self) -> str:
        lines = [",".join(METRICS_COLUMNS)]
        lines.extend(row.as_csv() for row in self.rows)
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Student loop


def _evaluate(params, X, y) -> tuple[float, float]:
    """(accuracy, mean cross-entropy) of the model on the given samples."""
    logits, _ = nets.forward(params, X)
    losses, _ = nets.ce_loss_per_sample(logits, y)
    acc = float((np.argmax(logits, axis=1) == y).mean())
    return acc, float(losses.mean())


def _per_sample_losses(params, X, y) -> np.ndarray:
    logits, _ = nets.forward(params, X)
    losses, _ = nets.ce_loss_per_sample(logits, y)
    return losses


def train_student_loop(
    config: TrainConfig,
    dataset: Dataset,
    split: Split,
    run_seed: int,
    snapshot_source=None,
) -> tuple[nets.MlpParams, RunMetrics]:
    """Alternating weight/parameter optimization of the student classifier.

    Per outer iteration: read the newest cluster snapshot (when the sampler
    uses one), sweep the train set for per-sample losses, solve the selection
    weights, run the configured epochs of mini-batch SGD over the selected
    samples, then grow the pace. Baselines reduce this loop: `random`
    ignores clusters and pace entirely; `spl` uses one global cluster with
    gamma = 0; `spld` uses the fixed raw-feature clusters.
    """
    scfg = config.student
    sampler = config.sampler.kind
    if sampler not in SAMPLERS:
        raise ValueError(f"unknown sampler {sampler!r}")

    X_train = dataset.features[split.train]
    y_train = dataset.labels[split.train]
    X_test = dataset.features[split.test]
    y_test = dataset.labels[split.test]
    n_train = X_train.shape[0]

    params = nets.init_mlp(
        (dataset.n_features, *scfg.hidden, dataset.class_count),
        rng_child(run_seed, STUDENT_INIT_STREAM),
    )
    opt = nets.init_optimizer(
        scfg.optimizer,
        params,
        scfg.lr,
        **(
            {}
            if scfg.optimizer == "adam"
            else {"momentum": scfg.momentum, "nesterov": scfg.nesterov}
        ),
        weight_decay=scfg.weight_decay,
    )
    loop_rng = rng_child(run_seed, STUDENT_LOOP_STREAM)

    if sampler == "spl":
        groups = [np.arange(n_train, dtype=np.int64)]
    elif sampler == "spld":
        groups = spld_raw_clusters(
            X_train, config.spld_cluster_count(), rng_child(run_seed, SPLD_STREAM)
        )
    else:
        groups = None  # random needs none; spl-advise reads snapshots

    deterministic = not config.parallel
    flip_shape = dataset.image_shape if config.dataset.augment_hflip else None
    pace: PaceSchedule | None = None
    metrics = RunMetrics(sampler=sampler, seed=run_seed)
    updates = 0
    started = time.perf_counter()

    train_acc, mean_ce = _evaluate(params, X_train, y_train)
    test_acc, _ = _evaluate(params, X_test, y_test)
    metrics.rows.append(
        MetricsRow(0, 0, train_acc, test_acc, mean_ce, 0, math.nan, math.nan, math.nan, 0)
    )

    for outer in range(1, scfg.outer_iterations + 1):
        iter_started = time.perf_counter()
        drops = sum(1 for m in scfg.lr_milestones if outer >= m)
        opt = opt.with_lr(scfg.lr * scfg.lr_factor**drops)

        magnet_loss = math.nan
        if sampler == "spl-advise":
            snapshot_source.advance()
            snap = snapshot_source.latest()
            snap.verify()
            groups = snap.index.memberships()
            magnet_loss = float(snap.index.loss_table.mean())

        losses = _per_sample_losses(params, X_train, y_train)

        if sampler == "random":
            selected = np.arange(n_train, dtype=np.int64)
            lam = gamma = math.nan
        else:
            if pace is None:
                pace = init_pace_from_losses(
                    losses,
                    config.pace.beta1,
                    config.pace.beta2,
                    config.pace.update_mode,
                    config.pace.init_percentile,
                    0.0 if sampler == "spl" else config.pace.init_gamma_ratio,
                )
            cluster_losses = [(ids, losses[ids]) for ids in groups]
            weights = solve_weights(cluster_losses, pace)
            selected = weights.selected_ids()
            if selected.size == 0:
                selected = fallback_selection(cluster_losses)
            lam, gamma = pace.lam, pace.gamma

        for _ in range(scfg.epochs_per_iteration):
            for batch in epoch_batches(selected, scfg.batch_size, loop_rng):
                xb = X_train[batch]
                if flip_shape is not None:
                    xb = hflip_batch(xb, flip_shape, loop_rng)
                logits, tape = nets.forward(params, xb)
                _, grad_logits = nets.ce_loss_per_sample(logits, y_train[batch])
                grads = nets.backward(params, tape, grad_logits / batch.size)
                params, opt = nets.optimizer_step(params, grads, opt)
                updates += 1

        if sampler != "random":
            pace = update_pace(pace)

        train_acc, mean_ce = _evaluate(params, X_train, y_train)
        test_acc, _ = _evaluate(params, X_test, y_test)
        elapsed_ms = (
            0 if deterministic else int((time.perf_counter() - iter_started) * 1000)
        )
        metrics.rows.append(
            MetricsRow(
                outer,
                updates,
                train_acc,
                test_acc,
                mean_ce,
                int(selected.size),
                lam,
                gamma,
                magnet_loss,
                elapsed_ms,
            )
        )

    metrics.duration_seconds = time.perf_counter() - started
    return params, metrics


# ---------------------------------------------------------------------------
# Experiment runner


@dataclass
class RunResult:
    metrics: RunMetrics
    student: nets.MlpParams
    embedding: nets.MlpParams | None
    embedding_initial: nets.MlpParams | None


def run_single(config: TrainConfig, dataset: Dataset, split: Split, sampler: str, run_seed: int) -> RunResult:
    """One (sampler, seed) training run over a prebuilt dataset."""
    cfg = replace(config, sampler=replace(config.sampler, kind=sampler))
    cfg.validate()
    source = None
    embed_trainer = None
    if sampler == "spl-advise":
        embed_trainer = EmbeddingTrainer(
            cfg,
            dataset.features[split.train],
            dataset.labels[split.train],
            run_seed,
        )
        if cfg.parallel:
            source = ThreadedSource(embed_trainer)
        else:
            per_advance = math.ceil(
                cfg.embedding.iterations / cfg.student.outer_iterations
            )
            source = InterleavedSource(embed_trainer, per_advance)
    try:
        student, metrics = train_student_loop(
            cfg, dataset, split, run_seed, snapshot_source=source
        )
    finally:
        if source is not None:
            source.close()
    if embed_trainer is not None:
        metrics.sigma_floor_hits = embed_trainer.sigma_floor_hits
    return RunResult(
        metrics,
        student,
        embed_trainer.params if embed_trainer else None,
        embed_trainer.initial_params if embed_trainer else None,
    )


def run_filename(sampler: str, seed: int) -> str:
    return f"{sampler}_seed{seed}"


def _aggregate_curve(per_seed: list[RunMetrics]) -> list[dict]:
    rows = []
    n_iters = min(len(m.rows) for m in per_seed)
    for i in range(n_iters):
        accs = np.array([m.rows[i].test_acc for m in per_seed])
        upd = np.array([m.rows[i].minibatch_updates for m in per_seed])
        rows.append(
            {
                "outer_iter": per_seed[0].rows[i].outer_iter,
                "minibatch_updates_mean": float(upd.mean()),
                "test_acc_mean": float(accs.mean()),
                "test_acc_std": float(accs.std()),
            }
        )
    return rows


def run_experiment(config: TrainConfig, out_dir) -> dict:
    """Run every requested sampler with every seed; write one metrics CSV and
    checkpoints per run plus curve CSVs and a JSON summary.

    Partial results are flushed before an error propagates: completed runs
    keep their files and the summary records the failure.
    """
    config.validate()
    out = Path(out_dir)
    runs_dir = out / "runs"
    curves_dir = out / "curves"
    runs_dir.mkdir(parents=True, exist_ok=True)
    curves_dir.mkdir(parents=True, exist_ok=True)

    dataset, split = build_dataset(config.dataset)
    started = time.perf_counter()
    summary: dict = {
        "name": config.name,
        "samplers": {},
        "seeds": list(config.effective_seeds()),
        "status": "ok",
    }
    try:
        for sampler in config.effective_samplers():
            per_seed: list[RunMetrics] = []
            for seed in config.effective_seeds():
                result = run_single(config, dataset, split, sampler, seed)
                stem = run_filename(sampler, seed)
                (runs_dir / f"{stem}.csv").write_text(result.metrics.to_csv())
                nets.save_checkpoint(result.student, runs_dir / f"{stem}_student.json")
                if result.embedding is not None:
                    nets.save_checkpoint(
                        result.embedding, runs_dir / f"{stem}_embedding.json"
                    )
                    nets.save_checkpoint(
                        result.embedding_initial,
                        runs_dir / f"{stem}_embedding_initial.json",
                    )
                per_seed.append(result.metrics)

            finals = np.array([m.final.test_acc for m in per_seed])
            updates = np.array([m.final.minibatch_updates for m in per_seed])
            summary["samplers"][sampler] = {
                "final_test_acc": [float(a) for a in finals],
                "final_test_acc_mean": float(finals.mean()),
                "final_test_acc_std": float(finals.std()),
                "total_minibatch_updates": [int(u) for u in updates],
                "total_minibatch_updates_mean": float(updates.mean()),
                "sigma_floor_hits": [m.sigma_floor_hits for m in per_seed],
                "runs": [run_filename(sampler, s) for s in config.effective_seeds()],
            }
            curve = _aggregate_curve(per_seed)
            lines = ["outer_iter,minibatch_updates_mean,test_acc_mean,test_acc_std"]
            lines += [
                f"{r['outer_iter']},{r['minibatch_updates_mean']!r},"
                f"{r['test_acc_mean']!r},{r['test_acc_std']!r}"
                for r in curve
            ]
            (curves_dir / f"{sampler}.csv").write_text("\n".join(lines) + "\n")
    except Exception as exc:
        summary["status"] = "failed"
        summary["error"] = f"{type(exc).__name__}: {exc}"
        summary["duration_seconds"] = time.perf_counter() - started
        (out / "summary.json").write_text(json.dumps(summary, indent=2))
        raise
    summary["duration_seconds"] = time.perf_counter() - started
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary
