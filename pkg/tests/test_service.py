"""Service endpoints over the in-process test client."""

import pytest
from fastapi.testclient import TestClient

from vragent.config import load_app_config
from vragent.service import create_app


@pytest.fixture()
def client(demo_config_path):
    app = create_app(load_app_config(demo_config_path))
    return TestClient(app, raise_server_exceptions=False)


RUN_PAYLOAD = {
    "question": "Is there a pleural effusion?",
    "image": "img-001",
    "query_id": "q1",
    "question_kind": "closed",
}


class TestHealth:
    def test_health(self, client):
        data = client.get("/health").json()
        assert data["status"] == "ok"


class TestRun:
    def test_run_returns_answer_path_journal(self, client):
        resp = client.post("/run", json=RUN_PAYLOAD)
        assert resp.status_code == 200
        data = resp.json()
        assert "effusion" in data["final_answer"]
        assert data["path"]["node_ids"][0] == 0
        assert len(data["path"]["rewards"]) == len(data["path"]["node_ids"])
        assert data["journal"].splitlines()[0].startswith('{"config"')
        assert data["trajectory"]["steps"]

    def test_run_is_deterministic(self, client):
        first = client.post("/run", json=RUN_PAYLOAD).json()
        second = client.post("/run", json=RUN_PAYLOAD).json()
        assert first["journal"] == second["journal"]
        assert first["final_answer"] == second["final_answer"]

    def test_seed_override_changes_only_with_effect(self, client):
        data = client.post("/run", json={**RUN_PAYLOAD, "seed": 123}).json()
        assert '"rng_seed":123' in data["journal"]

    def test_entities_forwarded(self, client):
        data = client.post("/run", json={**RUN_PAYLOAD, "entities": ["lung", "heart"]}).json()
        assert '"entities":["lung","heart"]' in data["journal"]

    def test_validation_error(self, client):
        resp = client.post("/run", json={"image": "x"})
        assert resp.status_code == 422


class TestReplayEndpoint:
    def test_replay_verify_roundtrip(self, client):
        journal = client.post("/run", json=RUN_PAYLOAD).json()["journal"]
        resp = client.post("/replay", json={"journal": journal, "verify": True})
        assert resp.status_code == 200
        data = resp.json()
        assert data["identical"] is True

    def test_corrupt_journal_maps_to_422(self, client):
        resp = client.post("/replay", json={"journal": "{broken\n", "verify": False})
        assert resp.status_code == 422
        assert resp.json()["error"] == "JournalCorrupt"


class TestBatchEndpoint:
    def test_batch_orders_and_scores(self, client, demo_dir):
        from vragent.metrics import load_dataset
        records = load_dataset(demo_dir / "dataset.jsonl")
        resp = client.post("/batch", json={"records": records, "parallel": 2})
        assert resp.status_code == 200
        data = resp.json()
        assert [r["id"] for r in data["results"]] == ["d1", "d2"]
        assert data["failures"] == 0
        assert data["metrics"]["counts"]["total"] == 2
        assert len(data["trajectories"]) == 2

    def test_batch_parallel_matches_serial(self, client, demo_dir):
        from vragent.metrics import load_dataset
        records = load_dataset(demo_dir / "dataset.jsonl")
        serial = client.post("/batch", json={"records": records, "parallel": 1}).json()
        parallel = client.post("/batch", json={"records": records, "parallel": 4}).json()
        assert serial["results"] == parallel["results"]

    def test_batch_skips_and_counts_bad_records(self, client, demo_dir):
        from vragent.metrics import load_dataset
        records = load_dataset(demo_dir / "dataset.jsonl")
        records.insert(0, {"id": "bad", "image": "img-x", "question": "", "type": "open"})
        data = client.post("/batch", json={"records": records}).json()
        assert data["failures"] == 1
        assert [r["id"] for r in data["results"]] == ["bad", "d1", "d2"]
        assert data["results"][0]["error"] is not None
        assert data["results"][1]["error"] is None


class TestVteEndpoint:
    def test_apply_boost(self, client):
        resp = client.post("/vte/apply", json={
            "embeddings": [[1.0, 1.0], [0.5, 0.5]],
            "mask": [1, 0],
            "attn_logits": [1.0, 2.0],
            "confidence": 1.0,
            "kappa": 1.0,
            "activation": "relu",
            "direction": "ones",
        })
        assert resp.status_code == 200
        data = resp.json()
        assert data["gain"] == pytest.approx(1.0)
        assert data["embeddings"][0] == [2.0, 2.0]
        assert data["embeddings"][1] == [0.5, 0.5]

    def test_kappa_zero_identity(self, client):
        resp = client.post("/vte/apply", json={
            "embeddings": [[1.0], [2.0]],
            "mask": [1, 0],
            "attn_logits": [1.0, 5.0],
            "confidence": 0.7,
            "kappa": 0.0,
        })
        data = resp.json()
        assert data["gain"] == 0.0
        assert data["embeddings"] == [[1.0], [2.0]]


class TestMetricsEndpoint:
    def test_summary_and_table(self, client):
        resp = client.post("/metrics", json={"records": [
            {"id": "1", "prediction": "yes", "reference": "yes", "question_kind": "closed"},
            {"id": "2", "prediction": "a c", "reference": "a b c", "question_kind": "open"},
        ]})
        assert resp.status_code == 200
        data = resp.json()
        assert data["closed_precision"] == 1.0
        assert data["rouge_l"] is not None
        assert "closed_precision" in data["table"]
