"""Thin client for the experiment service.

Without a server URL the client mounts the FastAPI app in-process (no
sockets, no separate process) so single commands behave like a local tool;
with ``--server`` the exact same requests go over the wire.
"""

from __future__ import annotations

import time

import httpx


class ServiceError(RuntimeError):
    def __init__(self, message: str, config_error: bool = False):
        super().__init__(message)
        self.config_error = config_error


class ServiceClient:
    def __init__(self, server: str | None = None, poll_interval: float = 0.1):
        self.poll_interval = poll_interval
        if server:
            self._client = httpx.Client(base_url=server, timeout=httpx.Timeout(30.0, read=None))
        else:
            import warnings

            with warnings.catch_warnings():
                # starlette warns about its httpx-based TestClient; the
                # in-process transport is exactly what we want here.
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app())

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "ServiceClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _check(self, response: httpx.Response) -> httpx.Response:
        if response.status_code >= 400:
            try:
                detail = response.json().get("detail", response.text)
            except ValueError:
                detail = response.text
            raise ServiceError(
                str(detail), config_error=response.status_code in (400, 422)
            )
        return response

    def health(self) -> dict:
        return self._check(self._client.get("/health")).json()

    def defaults(self) -> dict:
        return self._check(self._client.get("/defaults")).json()["config"]

    def submit_experiment(self, config_doc: dict, overrides: list[str]) -> str:
        response = self._check(
            self._client.post(
                "/experiments",
                json={"config": config_doc, "overrides": overrides},
            )
        )
        return response.json()["job_id"]

    def job_status(self, job_id: str) -> dict:
        return self._check(self._client.get(f"/experiments/{job_id}")).json()

    def wait(self, job_id: str) -> dict:
        while True:
            status = self.job_status(job_id)
            if status["status"] in ("done", "failed"):
                return status
            time.sleep(self.poll_interval)

    def artifacts(self, job_id: str) -> list[str]:
        return self._check(
            self._client.get(f"/experiments/{job_id}/artifacts")
        ).json()["files"]

    def download(self, job_id: str, name: str) -> bytes:
        return self._check(
            self._client.get(f"/experiments/{job_id}/artifacts/{name}")
        ).content

    def viz(self, checkpoint_doc: dict, dataset_doc: dict) -> dict:
        return self._check(
            self._client.post(
                "/viz", json={"checkpoint": checkpoint_doc, "dataset": dataset_doc}
            )
        ).json()
