"""Request/response models for the experiment service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class DefaultsResponse(BaseModel):
    config: dict


class ExperimentRequest(BaseModel):
    """A raw config document plus ``key=value`` overrides; validation happens
    server-side with the same rules the config files use."""

    config: dict = Field(default_factory=dict)
    overrides: list[str] = Field(default_factory=list)


class JobCreated(BaseModel):
    job_id: str


class JobStatus(BaseModel):
    job_id: str
    status: str  # queued | running | done | failed
    error: str | None = None
    summary: dict | None = None


class ArtifactList(BaseModel):
    job_id: str
    files: list[str]


class VizRequest(BaseModel):
    """Checkpointed embedding model plus the dataset to project."""

    checkpoint: dict
    dataset: dict = Field(default_factory=dict)


class VizResponse(BaseModel):
    csv: str
    silhouette: float
    n_rows: int
