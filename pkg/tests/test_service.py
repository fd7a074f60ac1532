import time

import pytest
from fastapi.testclient import TestClient

from spl_advise import __version__
from spl_advise.configio import config_to_doc
from spl_advise.service import create_app

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))
from conftest import tiny_config


@pytest.fixture()
def client(tmp_path):
    return TestClient(create_app(tmp_path / "workspace"))


def tiny_doc(**extra):
    doc = config_to_doc(tiny_config())
    doc["student"]["outer_iterations"] = 3
    for key, value in extra.items():
        doc[key] = value
    return doc


def wait_for(client, job_id, timeout=120.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        status = client.get(f"/experiments/{job_id}").json()
        if status["status"] in ("done", "failed"):
            return status
        time.sleep(0.05)
    raise TimeoutError("job did not finish")


class TestBasicEndpoints:
    def test_health(self, client):
        body = client.get("/health").json()
        assert body == {"status": "ok", "version": __version__}

    def test_defaults_echo_the_config_schema(self, client):
        config = client.get("/defaults").json()["config"]
        assert config["pace"]["beta1"] == 0.1
        assert config["sampler"]["kind"] == "spl-advise"
        assert config["student"]["weight_decay"] == 0.0005

    def test_unknown_job_is_404(self, client):
        assert client.get("/experiments/zzz").status_code == 404


class TestExperimentJobs:
    def test_submit_poll_download(self, client):
        response = client.post(
            "/experiments", json={"config": tiny_doc(), "overrides": []}
        )
        assert response.status_code == 202
        job_id = response.json()["job_id"]
        status = wait_for(client, job_id)
        assert status["status"] == "done"
        assert status["summary"]["samplers"]["spl-advise"]

        files = client.get(f"/experiments/{job_id}/artifacts").json()["files"]
        assert "resolved_config.toml" in files
        assert "summary.json" in files
        assert any(name.endswith("spl-advise_seed0.csv") for name in files)

        csv_name = next(name for name in files if name.endswith("seed0.csv"))
        body = client.get(f"/experiments/{job_id}/artifacts/{csv_name}")
        assert body.status_code == 200
        header = body.content.decode().splitlines()[0]
        assert header.startswith("outer_iter,minibatch_updates,train_acc")

    def test_override_applies_server_side(self, client):
        response = client.post(
            "/experiments",
            json={"config": tiny_doc(), "overrides": ["sampler.kind=random"]},
        )
        job_id = response.json()["job_id"]
        status = wait_for(client, job_id)
        assert list(status["summary"]["samplers"]) == ["random"]

    def test_bad_config_is_400_with_key_name(self, client):
        response = client.post(
            "/experiments", json={"config": {"nonsense": 1}, "overrides": []}
        )
        assert response.status_code == 400
        assert "nonsense" in response.json()["detail"]

    def test_runtime_failure_reported(self, client):
        doc = tiny_doc()
        doc["embedding"]["batch_clusters"] = 50  # more than total clusters
        response = client.post("/experiments", json={"config": doc, "overrides": []})
        status = wait_for(client, response.json()["job_id"])
        assert status["status"] == "failed"
        assert "M=50" in status["error"]

    def test_artifact_traversal_blocked(self, client):
        response = client.post(
            "/experiments", json={"config": tiny_doc(), "overrides": []}
        )
        job_id = response.json()["job_id"]
        wait_for(client, job_id)
        evil = client.get(f"/experiments/{job_id}/artifacts/../../etc/passwd")
        assert evil.status_code == 404


class TestVizEndpoint:
    def test_projection_rows_match_dataset(self, client):
        from spl_advise.nets import checkpoint_doc, init_mlp
        from spl_advise.numerics import rng_child

        cfg = tiny_config()
        dims = (cfg.dataset.dim, 8, 4)
        params = init_mlp(dims, rng_child(0, 0))
        doc = config_to_doc(cfg)["dataset"]
        response = client.post(
            "/viz", json={"checkpoint": checkpoint_doc(params), "dataset": doc}
        )
        assert response.status_code == 200
        body = response.json()
        n = (
            cfg.dataset.classes
            * cfg.dataset.subclusters
            * cfg.dataset.samples_per_subcluster
        )
        assert body["n_rows"] == n
        lines = body["csv"].strip().splitlines()
        assert lines[0] == "x,y,label,cluster_id"
        assert len(lines) == n + 1
        assert -1.0 <= body["silhouette"] <= 1.0

    def test_bad_checkpoint_is_400(self, client):
        response = client.post(
            "/viz", json={"checkpoint": {"format": "junk"}, "dataset": {}}
        )
        assert response.status_code == 400
