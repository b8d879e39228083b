import pytest
from fastapi.testclient import TestClient

from app.main import app


@pytest.fixture
def client():
    with TestClient(app) as c:
        yield c


def test_root(client):
    response = client.get("/")
    assert response.status_code == 200
    assert "version" in response.json()


def test_verbal_evidence(client):
    response = client.get("/api/v1/hettest/verbal", params={"p": 0.03})
    assert response.status_code == 200
    body = response.json()
    assert body["verbal"] == "noteworthy"
    assert body["surprise"] == pytest.approx(5.06, abs=0.01)


def test_verbal_evidence_rejects_out_of_range(client):
    assert client.get("/api/v1/hettest/verbal", params={"p": 0}).status_code == 422
    assert client.get("/api/v1/hettest/verbal", params={"p": 1.5}).status_code == 422


def test_simulation_inline(client, tmp_path):
    response = client.post("/api/v1/simulations", json={"scenario": {"n": 50, "seed": 2}, "out_dir": str(tmp_path)})
    assert response.status_code == 200
    body = response.json()
    assert body["n"] == 50
    assert 0 < body["n_treated"] < 50
    assert (tmp_path / "trial.csv").is_file() and (tmp_path / "truth.csv").is_file()


def test_simulation_rejects_two_sources(client, tmp_path):
    response = client.post("/api/v1/simulations", json={"scenario": {"n": 50}, "scenario_path": "s.json"})
    assert response.status_code == 422


def test_simulation_missing_file(client, tmp_path):
    response = client.post("/api/v1/simulations", json={"scenario_path": str(tmp_path / "absent.json")})
    assert response.status_code == 422
    assert "not found" in response.json()["detail"]


def test_ida_endpoint(client, run_config_path, tmp_path):
    response = client.post("/api/v1/analyses/ida",
                           json={"config": str(run_config_path), "out_dir": str(tmp_path / "ida")})
    assert response.status_code == 200
    assert response.json()["n_rows"] == 160
    assert (tmp_path / "ida" / "ida_report.json").is_file()


def test_findings_endpoint(client, run_config_path, tmp_path):
    response = client.post("/api/v1/analyses/findings",
                           json={"config": str(run_config_path), "out_dir": str(tmp_path / "run"), "seed": 8})
    assert response.status_code == 200
    body = response.json()
    assert body["seed"] == 8
    assert body["het_test"]["verbal"] in {"low", "moderate", "noteworthy", "strong", "very strong"}
    assert (tmp_path / "run" / "findings.md").is_file()


def test_data_errors_map_to_400(client, run_config_path, tmp_path):
    (run_config_path.parent / "data" / "trial.csv").write_text("Y,A\n1,0\n", encoding="utf-8")
    response = client.post("/api/v1/analyses/ida", json={"config": str(run_config_path), "out_dir": str(tmp_path)})
    assert response.status_code == 400
    assert "missing role column" in response.json()["detail"]


def test_rejected_requests_are_logged(client, run_config_path, tmp_path, caplog):
    (run_config_path.parent / "data" / "trial.csv").write_text("Y,A\n1,0\n", encoding="utf-8")
    with caplog.at_level("WARNING", logger="app.core.deps"):
        response = client.post("/api/v1/analyses/ida", json={"config": str(run_config_path), "out_dir": str(tmp_path)})
    assert response.status_code == 400
    assert "Rejected data: missing role column" in caplog.text

    caplog.clear()
    with caplog.at_level("WARNING", logger="app.core.deps"):
        response = client.post("/api/v1/analyses/ida", json={"config": str(tmp_path / "absent.json")})
    assert response.status_code == 422
    assert "Rejected configuration" in caplog.text
