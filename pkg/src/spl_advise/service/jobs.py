"""Background experiment jobs: one worker thread per submitted experiment,
artifacts collected in a per-job directory under the service workspace."""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from ..configio import resolved_toml
from ..training import TrainConfig, run_experiment

QUEUED = "queued"
RUNNING = "running"
DONE = "done"
FAILED = "failed"


@dataclass
class Job:
    job_id: str
    config: TrainConfig
    workdir: Path
    status: str = QUEUED
    error: str | None = None
    summary: dict | None = None
    thread: threading.Thread | None = field(default=None, repr=False)


class JobManager:
    def __init__(self, workspace: Path):
        self.workspace = Path(workspace)
        self.workspace.mkdir(parents=True, exist_ok=True)
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()

    def submit(self, config: TrainConfig) -> Job:
        job_id = uuid.uuid4().hex[:12]
        workdir = self.workspace / job_id
        workdir.mkdir(parents=True)
        job = Job(job_id, config, workdir)
        with self._lock:
            self._jobs[job_id] = job
        # The resolved config is an artifact of every run.
        (workdir / "resolved_config.toml").write_text(resolved_toml(config))
        job.thread = threading.Thread(
            target=self._run, args=(job,), name=f"experiment-{job_id}", daemon=True
        )
        job.status = RUNNING
        job.thread.start()
        return job

    def _run(self, job: Job) -> None:
        try:
            job.summary = run_experiment(job.config, job.workdir)
            job.status = DONE
        except Exception as exc:  # runtime failures surface via the API
            job.error = f"{type(exc).__name__}: {exc}"
            job.status = FAILED

    def get(self, job_id: str) -> Job | None:
        with self._lock:
            return self._jobs.get(job_id)

    def artifacts(self, job: Job) -> list[str]:
        return sorted(
            str(p.relative_to(job.workdir))
            for p in job.workdir.rglob("*")
            if p.is_file()
        )

    def artifact_path(self, job: Job, name: str) -> Path | None:
        path = (job.workdir / name).resolve()
        if not path.is_relative_to(job.workdir.resolve()):
            return None
        return path if path.is_file() else None
