"""HTTP service around the experiment runner.

Experiments run as background jobs: POST the config, poll the job, download
the artifact files. The projection endpoint is synchronous (it only runs a
forward pass plus a 2-D projection).
"""

from __future__ import annotations

import tempfile
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import Response

from .. import __version__
from ..configio import ConfigError, apply_overrides, config_to_doc, parse_config
from ..nets import params_from_doc
from ..training import TrainConfig, build_dataset
from ..viz import export_viz
from .jobs import JobManager
from .schemas import (
    ArtifactList,
    DefaultsResponse,
    ExperimentRequest,
    HealthResponse,
    JobCreated,
    JobStatus,
    VizRequest,
    VizResponse,
)


def create_app(workspace: Path | str | None = None) -> FastAPI:
    if workspace is None:
        workspace = tempfile.mkdtemp(prefix="spl-advise-")
    app = FastAPI(title="spl-advise", version=__version__)
    manager = JobManager(Path(workspace))
    app.state.jobs = manager

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.get("/defaults", response_model=DefaultsResponse)
    def defaults():
        return DefaultsResponse(config=config_to_doc(TrainConfig()))

    @app.post("/experiments", response_model=JobCreated, status_code=202)
    def submit_experiment(request: ExperimentRequest):
        try:
            doc = apply_overrides(request.config, request.overrides)
            config = parse_config(doc)
        except ConfigError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        job = manager.submit(config)
        return JobCreated(job_id=job.job_id)

    def _get_job(job_id: str):
        job = manager.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no job {job_id}")
        return job

    @app.get("/experiments/{job_id}", response_model=JobStatus)
    def job_status(job_id: str):
        job = _get_job(job_id)
        return JobStatus(
            job_id=job.job_id,
            status=job.status,
            error=job.error,
            summary=job.summary,
        )

    @app.get("/experiments/{job_id}/artifacts", response_model=ArtifactList)
    def list_artifacts(job_id: str):
        job = _get_job(job_id)
        return ArtifactList(job_id=job.job_id, files=manager.artifacts(job))

    @app.get("/experiments/{job_id}/artifacts/{name:path}")
    def download_artifact(job_id: str, name: str):
        job = _get_job(job_id)
        path = manager.artifact_path(job, name)
        if path is None:
            raise HTTPException(status_code=404, detail=f"no artifact {name}")
        return Response(
            content=path.read_bytes(), media_type="application/octet-stream"
        )

    @app.post("/viz", response_model=VizResponse)
    def viz(request: VizRequest):
        try:
            params = params_from_doc(request.checkpoint)
            section = parse_config({"dataset": request.dataset}).dataset
        except (ConfigError, ValueError, KeyError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        try:
            dataset, _ = build_dataset(section)
            csv_text, silhouette = export_viz(params, dataset)
        except Exception as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        return VizResponse(
            csv=csv_text, silhouette=silhouette, n_rows=dataset.n_samples
        )

    return app
