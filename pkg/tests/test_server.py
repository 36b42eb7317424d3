import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient

import epiglab.data as data_mod
from epiglab.errors import ConfigError
from epiglab.heads import HeadConfig
from epiglab.loop import DataBundle, LoopConfig, null_clock, run
from epiglab.server import LabelSession, create_app


def _session(bundle, method="bald", budget=10, seed=5, assets=None, **kwargs):
    config = LoopConfig(head=HeadConfig(kind="forest", trees=15), method=method,
                        budget=budget, members=15, **kwargs)
    return LabelSession(config, bundle, seed=seed, clock=null_clock, assets=assets)


@pytest.fixture()
def client(small_bundle):
    session = _session(small_bundle)
    return TestClient(create_app(session)), session


class TestStateMachine:
    def test_fresh_session_awaits_label(self, client):
        http, _ = client
        state = http.get("/api/state").json()
        assert state["status"] == "awaiting_label"
        assert state["pending"]["index"] >= 0
        assert state["train_size"] == 6
        assert len(state["classes"]) == 3
        assert state["accuracy_curve"][0]["train_size"] == 6

    def test_wrong_pending_index_conflicts(self, client):
        http, _ = client
        response = http.post("/api/label", json={"index": -5, "class": 0})
        assert response.status_code == 409

    def test_out_of_range_class_rejected(self, client):
        http, _ = client
        pending = http.get("/api/state").json()["pending"]["index"]
        response = http.post("/api/label", json={"index": pending, "class": 17})
        assert response.status_code == 400

    def test_completes_and_refuses_further_labels(self, client):
        http, session = client
        oracle = session.engine.task_labels.entries
        while True:
            state = http.get("/api/state").json()
            if state["status"] == "done":
                break
            idx = state["pending"]["index"]
            response = http.post("/api/label",
                                 json={"index": idx, "class": int(oracle[idx])})
            assert response.status_code == 200
            assert response.json()["train_size"] > state["train_size"]
        assert state["train_size"] == 10
        assert state["pending"] is None
        after = http.post("/api/label", json={"index": 0, "class": 0})
        assert after.status_code == 409

    def test_metrics_csv_grows_with_labels(self, client):
        http, session = client
        before = len(http.get("/api/metrics.csv").text.strip().splitlines())
        state = http.get("/api/state").json()
        idx = state["pending"]["index"]
        cls = int(session.engine.task_labels.entries[idx])
        http.post("/api/label", json={"index": idx, "class": cls})
        after = len(http.get("/api/metrics.csv").text.strip().splitlines())
        assert after == before + 1


class TestConcurrency:
    def test_exactly_one_of_two_racing_posts_wins(self, small_bundle):
        session = _session(small_bundle)
        http = TestClient(create_app(session))
        idx = http.get("/api/state").json()["pending"]["index"]
        cls = int(session.engine.task_labels.entries[idx])
        codes = []
        barrier = threading.Barrier(2)

        def post():
            barrier.wait()
            response = http.post("/api/label", json={"index": idx, "class": cls})
            codes.append(response.status_code)

        threads = [threading.Thread(target=post) for _ in range(2)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sorted(codes) == [200, 409]


class TestHeadlessEquivalence:
    def test_scripted_posts_reproduce_headless_record(self, small_bundle):
        config = LoopConfig(head=HeadConfig(kind="forest", trees=15),
                            method="epig", budget=11, members=15)
        session = LabelSession(config, small_bundle, seed=3, clock=null_clock)
        http = TestClient(create_app(session))
        oracle = session.engine.task_labels.entries
        while http.get("/api/state").json()["status"] != "done":
            idx = http.get("/api/state").json()["pending"]["index"]
            http.post("/api/label", json={"index": idx, "class": int(oracle[idx])})
        headless = run(config, small_bundle, seed=3, clock=null_clock)
        assert session.record().to_csv() == headless.to_csv()
        assert http.get("/api/metrics.csv").text == headless.to_csv()


class TestAssets:
    def test_asset_roundtrip_and_no_asset_marker(self, small_bundle, tmp_path):
        (tmp_path / "0.png").write_bytes(b"\x89PNG fake")
        store = data_mod.AssetStore(tmp_path)
        session = _session(small_bundle, assets=store)
        http = TestClient(create_app(session))
        state = http.get("/api/state").json()
        pending = state["pending"]
        if pending["index"] == 0:
            assert pending["asset_url"] == "/api/asset/0"
        else:
            assert pending["asset_url"] is None
        ok = http.get("/api/asset/0")
        assert ok.status_code == 200
        assert ok.headers["content-type"].startswith("image/png")
        missing = http.get("/api/asset/99999")
        assert missing.status_code == 404

    def test_asset_url_resolves_when_present(self, small_bundle, tmp_path):
        for i in range(small_bundle.oracle.n):
            (tmp_path / f"{i}.txt").write_text(f"example {i}")
        store = data_mod.AssetStore(tmp_path)
        session = _session(small_bundle, assets=store)
        http = TestClient(create_app(session))
        url = http.get("/api/state").json()["pending"]["asset_url"]
        assert url is not None
        assert http.get(url).status_code == 200


class TestServeSurface:
    def test_root_serves_fallback_page(self, client):
        http, _ = client
        response = http.get("/")
        assert response.status_code == 200
        assert "<html" in response.text.lower()

    def test_root_serves_ui_bundle_when_present(self, small_bundle, tmp_path):
        (tmp_path / "index.html").write_text("<!doctype html><html><body>ui</body></html>")
        session = _session(small_bundle)
        http = TestClient(create_app(session, ui_dir=tmp_path))
        response = http.get("/")
        assert response.status_code == 200
        assert "ui" in response.text

    def test_batch_greater_than_one_rejected(self, small_bundle):
        with pytest.raises(ConfigError):
            _session(small_bundle, batch=2)


class TestBootstrapInit:
    def test_human_labels_initial_set(self, small_data):
        latent, _, labels = small_data
        hidden = data_mod.LabelVector(
            entries=np.full(labels.n, -1, dtype=np.int32), classes=labels.classes)
        splits = data_mod.split(latent.n, {"target": 20, "validation": 20, "test": 40},
                                hidden, seed=1)
        bundle = DataBundle(tables={"latent": latent}, oracle=hidden, splits=splits)
        session = _session(bundle, budget=9, method="random")
        http = TestClient(create_app(session))

        true_labels = labels.entries
        state = http.get("/api/state").json()
        assert state["accuracy_curve"] == []  # no model before init completes
        while state["status"] != "done":
            idx = state["pending"]["index"]
            response = http.post("/api/label",
                                 json={"index": idx, "class": int(true_labels[idx])})
            assert response.status_code == 200
            state = http.get("/api/state").json()
        assert state["train_size"] == 9
        record = session.record()
        init_row = record.rows[0]
        assert init_row.step == 0 and init_row.train_size >= 6
        assert init_row.accuracy is None  # no ground truth to score against
