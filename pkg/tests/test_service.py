import pytest
from fastapi.testclient import TestClient

from oran_pcl import __version__
from oran_pcl.scenario import parse_scenario
from oran_pcl.service import create_app

POLICY = {
    "policyType": "pcl-slice-v1",
    "sliceId": "A",
    "plmnId": "40486",
    "timestampHour": 595,
    "layerDescriptors": [{"layer": "MAC_SCHEDULER", "parameter": "MAX_ACTIVE_UES", "value": 13, "direction": "SCALE_UP"}],
}


@pytest.fixture
def client(tmp_path):
    defaults = parse_scenario(
        {
            "dataset": {"generator": {"n_enb": 1, "cells_per_enb": 1, "days": 7}},
            "forecaster": {"kind": "seasonal_naive", "channels": ["active_ues"], "baselines": False},
            "output_dir": str(tmp_path / "out"),
        }
    )
    return TestClient(create_app(defaults, inbox_capacity=2))


def _ves(hour, **fields):
    base = {f"{k}_qci{q}": 1.0 for k in ("active_ues", "volume_gb") for q in (1, 2, 5, 9)}
    base["dl_prb_util_pct"] = 30.0
    base.update(fields)
    return {"event": {"commonEventHeader": {"sourceName": "enb0-cell0", "startEpochHour": hour}, "measurementFields": base}}


def test_health(client):
    assert client.get("/health").json() == {"status": "ok", "version": __version__}


def test_ves_ingest_and_dead_letters(client):
    r = client.post("/ves/events", json=_ves(0)).json()
    assert r == {"accepted": True, "samples": 4, "dead_letters": 0, "error": None}
    bad = client.post("/ves/events", json=_ves(1, active_ues_qci5=-2.0)).json()
    assert not bad["accepted"] and bad["dead_letters"] == 1 and "negative" in bad["error"]
    again = client.post("/ves/events", json=_ves(0, dl_prb_util_pct=40.0)).json()
    assert again["accepted"] and again["samples"] == 4
    assert client.post("/ves/events", json={"event": {}}).status_code == 422


def test_a1_policy_queue_fifo_and_backpressure(client):
    second = dict(POLICY, sliceId="B")
    r = client.post("/a1/policies", json=POLICY)
    assert r.status_code == 202 and r.json()["schema_name"] == "a1-policy-v1"
    client.post("/a1/policies", json=second)
    assert client.post("/a1/policies", json=POLICY).status_code == 503
    drained = client.get("/a1/policies").json()
    assert [p["sliceId"] for p in drained] == ["A", "B"]
    assert drained[0]["layerDescriptors"] == POLICY["layerDescriptors"]
    assert client.get("/a1/policies").json() == []


def test_a1_policy_validation(client):
    bad = dict(POLICY, layerDescriptors=[dict(POLICY["layerDescriptors"][0], value=-1)])
    assert client.post("/a1/policies", json=bad).status_code == 422
    assert client.post("/a1/policies", json=dict(POLICY, extra=1)).status_code == 422


def test_digest_is_stable(client):
    a = client.post("/a1/policies", json=POLICY).json()["digest"]
    client.get("/a1/policies")
    assert client.post("/a1/policies", json=POLICY).json()["digest"] == a


def test_experiment_commands(client, tmp_path):
    r = client.post("/experiments/run", json={"mode": "static"})
    assert r.status_code == 200
    summary = r.json()["summary"]
    assert summary["mode"] == "static" and summary["hours"] > 0
    assert (tmp_path / "out" / "static_report.csv").exists()
    assert client.post("/experiments/run", json={}).status_code == 400
    assert client.post("/experiments/train", json={"config": {"margin": -2}}).status_code == 400
    assert client.post("/experiments/fly", json={}).status_code == 422


def test_experiment_runtime_error(client, tmp_path):
    r = client.post("/experiments/run", json={"mode": "static", "config": {"dataset": {"csv": str(tmp_path / "none.csv")}}})
    assert r.status_code == 500
    assert "generate" in r.json()["detail"]
