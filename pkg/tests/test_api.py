import pytest
from fastapi.testclient import TestClient

from cfwp.main import app


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json()["status"] == "healthy"


def test_presets(client):
    presets = client.get("/analysis/presets").json()
    assert set(presets) == {"euclidean", "taub-nut", "iwai-katayama"}
    assert presets["iwai-katayama"]["required"] == ["a", "b", "c", "d"]


def test_check(client, config_doc):
    response = client.post("/analysis/check", json=config_doc("iwai-katayama.json"))
    assert response.status_code == 200
    assert response.json()["aggregate"] == "holds"


def test_solve_mode(client, config_doc):
    response = client.post("/analysis/solve-mode", json=config_doc("euclidean.json"))
    assert response.status_code == 200
    body = response.json()
    assert body["verdict"] == "no-L2"
    assert body["mode"]["lambda"] == pytest.approx(2 ** 0.5)


def test_solve_mode_needs_mode(client, config_doc):
    doc = config_doc("euclidean-alpha-half.json")
    assert client.post("/analysis/solve-mode", json=doc).status_code == 422


def test_expression_error_is_reported(client):
    doc = {"geometry": {"m": 1, "alpha": "t +* 2", "beta": "t"}}
    response = client.post("/analysis/check", json=doc)
    assert response.status_code == 422
    detail = response.json()["detail"]
    assert detail["error"] == "ExprSyntaxError"
    assert detail["position"] == 3


def test_lemmas(client, config_doc):
    response = client.post("/analysis/lemmas", json=config_doc("euclidean.json"))
    assert response.status_code == 200
    assert response.json()["all_passed"]


def test_reparam(client, config_doc):
    doc = config_doc("iwai-katayama.json")
    doc["reparam"] = {"samples": 8}
    body = client.post("/analysis/reparam", json=doc).json()
    assert len(body["s"]) == len(body["alpha"]) == len(body["beta"]) == 8
    assert body["s"] == sorted(body["s"])


def test_reparam_needs_conformal_factor(client, config_doc):
    response = client.post("/analysis/reparam", json=config_doc("euclidean.json"))
    assert response.status_code == 422
    assert response.json()["detail"]["error"] == "InvalidInput"


def test_sweep(client, config_doc):
    doc = config_doc("euclidean.json")
    doc["sweep"] = {"k_range": [0, 0], "epsilon_values": [-1], "lambda_grid": [1.0]}
    body = client.post("/analysis/sweep", json=doc).json()
    assert body["summary"]["total"] == 1
    assert body["grid"][0]["verdict"] == "no-L2"
