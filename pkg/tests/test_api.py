# tests/test_api.py
import pytest
from fastapi.testclient import TestClient

from main import VERSION, app
from models.config import RunConfig
from models.records import DisplacementRecord, RunRecord
from services.harness_service import save_record
from services.report_service import emit_report


@pytest.fixture
def output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("RDAC_OUTPUT_DIR", str(tmp_path))
    return tmp_path


@pytest.fixture
def client(output_dir):
    with TestClient(app) as test_client:
        yield test_client


@pytest.fixture
def record():
    config = RunConfig.model_validate({"method": "ewc", "lambda": 10.0, "record_wallclock": False})
    return RunRecord(
        run_id=config.run_id(),
        config=config,
        stability=0.9,
        plasticity=0.7,
        task1_accuracy_before=0.95,
        displacement=DisplacementRecord(d_range_mean=0.1, d_null_mean=0.4, d_total_mean=0.45, count=8, rank=5, dim=11),
        logit_drift_max=0.3,
    )


def test_health_without_runs(client, output_dir):
    response = client.get("/")
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "ok"
    assert body["version"] == VERSION
    assert body["runs"] == 0
    assert body["output_dir"] == str(output_dir)


def test_list_runs(client, output_dir, record):
    assert client.get("/runs").json() == []
    save_record(record, output_dir)
    runs = client.get("/runs").json()
    assert len(runs) == 1
    assert runs[0]["run_id"] == record.run_id
    assert runs[0]["method"] == "ewc"
    assert runs[0]["lambda"] == 10.0
    assert runs[0]["capacity"] == pytest.approx(1.6)
    assert client.get("/").json()["runs"] == 1


def test_get_run(client, output_dir, record):
    assert client.get(f"/runs/{record.run_id}").status_code == 404
    save_record(record, output_dir)
    response = client.get(f"/runs/{record.run_id}")
    assert response.status_code == 200
    body = response.json()
    assert body["config"]["lambda"] == 10.0
    assert body["displacement"]["d_null_mean"] == 0.4


def test_unreadable_run_is_reported(client, output_dir):
    (output_dir / "runs").mkdir()
    (output_dir / "runs" / "broken.json").write_text("{}")
    assert client.get("/runs/broken").status_code == 422
    assert client.get("/runs").status_code == 422


def test_metrics(client, output_dir, record):
    assert client.get("/metrics").status_code == 404
    emit_report([record], output_dir)
    rows = client.get("/metrics").json()
    assert len(rows) == 1
    assert rows[0]["method"] == "ewc"
    assert rows[0]["lambda"] == "10"


def test_endpoints_are_read_only(client):
    assert client.post("/runs").status_code == 405
