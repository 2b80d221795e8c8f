import base64
import io
import json
import os
import threading

import numpy as np
import pytest
from PIL import Image
from fastapi.testclient import TestClient

from conftest import two_cluster_set
from modguard.classifiers import TrainConfig, save_model, train_logistic, train_svm
from modguard.errors import InvalidInput
from modguard.service import (
    ServiceConfig,
    build_snapshot,
    create_app,
    load_config_file,
    resolve_config,
)

_DIM = 768  # mock backend default; classifier must match


@pytest.fixture(scope="module")
def model_path(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc")
    rows, labels = two_cluster_set(seed=71, n_per_class=40, dim=_DIM)
    model = train_logistic(rows, labels, TrainConfig(epochs=10, seed=0))
    path = root / "model.json"
    save_model(model, path)
    return path


@pytest.fixture
def client(model_path):
    app = create_app(ServiceConfig(model_file=str(model_path)))
    with TestClient(app) as tc:
        yield tc


def _png_b64():
    buf = io.BytesIO()
    Image.new("RGB", (16, 16), (90, 10, 10)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


# --- classify ---


def test_classify_text_shape(client):
    resp = client.post("/v1/classify", json={"text": "some comment"})
    assert resp.status_code == 200
    body = resp.json()
    assert set(body) == {"label", "score", "model_kind", "dim"}
    assert body["label"] in (0, 1)
    assert 0.0 <= body["score"] <= 1.0
    assert body["model_kind"] == "logistic"
    assert body["dim"] == _DIM


def test_classify_image_route(client):
    resp = client.post("/v1/classify", json={"image_b64": _png_b64()})
    assert resp.status_code == 200
    assert resp.json()["label"] in (0, 1)


def test_classify_deterministic_bytes(client):
    payload = {"text": "exact same input"}
    first = client.post("/v1/classify", json=payload)
    for _ in range(3):
        again = client.post("/v1/classify", json=payload)
        assert again.content == first.content


def test_classify_text_is_cleaned_before_embedding(client):
    plain = client.post("/v1/classify", json={"text": "hello world"})
    noisy = client.post(
        "/v1/classify", json={"text": "RT @someone:   hello https://t.co/x world"}
    )
    assert noisy.content == plain.content


def test_error_codes(client):
    # malformed JSON
    resp = client.post("/v1/classify", content=b"{nope")
    assert resp.status_code == 400
    # wrong shape: both fields
    resp = client.post(
        "/v1/classify", json={"text": "x", "image_b64": _png_b64()}
    )
    assert resp.status_code == 400
    # wrong shape: neither field
    assert client.post("/v1/classify", json={}).status_code == 400
    # non-object body
    assert client.post("/v1/classify", json=[1, 2]).status_code == 400
    # bad base64
    resp = client.post("/v1/classify", json={"image_b64": "!!not-base64!!"})
    assert resp.status_code == 422
    # valid base64, not an image
    blob = base64.b64encode(b"definitely not pixels").decode("ascii")
    assert client.post("/v1/classify", json={"image_b64": blob}).status_code == 422


def test_body_size_cap(model_path):
    app = create_app(ServiceConfig(model_file=str(model_path), max_body_bytes=64))
    with TestClient(app) as tc:
        resp = tc.post("/v1/classify", content=b"x" * 65)
        assert resp.status_code == 413
        ok = tc.post("/v1/classify", json={"text": "short"})
        assert ok.status_code == 200


def test_health_reports_model_hash(client, model_path):
    import hashlib

    resp = client.get("/v1/health")
    assert resp.status_code == 200
    body = resp.json()
    assert body["status"] == "ok"
    assert body["model_hash"] == hashlib.sha256(model_path.read_bytes()).hexdigest()


# --- reload ---


def test_reload_swaps_hash(tmp_path):
    rows, labels = two_cluster_set(seed=72, n_per_class=30, dim=_DIM)
    path = tmp_path / "m.json"
    save_model(train_logistic(rows, labels, TrainConfig(epochs=5)), path)
    app = create_app(ServiceConfig(model_file=str(path)))
    with TestClient(app) as tc:
        before = tc.get("/v1/health").json()["model_hash"]
        save_model(train_logistic(rows, labels, TrainConfig(epochs=6)), path)
        reloaded = tc.post("/v1/reload")
        assert reloaded.status_code == 200
        after = tc.get("/v1/health").json()["model_hash"]
        assert after == reloaded.json()["model_hash"] != before


def test_reload_failure_keeps_old_snapshot(tmp_path):
    rows, labels = two_cluster_set(seed=73, n_per_class=30, dim=_DIM)
    path = tmp_path / "m.json"
    save_model(train_logistic(rows, labels, TrainConfig(epochs=5)), path)
    app = create_app(ServiceConfig(model_file=str(path)))
    with TestClient(app) as tc:
        before = tc.get("/v1/health").json()["model_hash"]
        path.write_text("{broken")
        resp = tc.post("/v1/reload")
        assert resp.status_code == 500
        assert tc.get("/v1/health").json()["model_hash"] == before
        assert tc.post("/v1/classify", json={"text": "still serving"}).status_code == 200


def test_reload_atomicity_under_concurrency(tmp_path):
    # Two distinguishable models over the same file; hammer classify while
    # the main thread flips the file and reloads. Every response must match
    # one of the two reference bodies exactly: no torn state.
    rows, labels = two_cluster_set(seed=74, n_per_class=30, dim=_DIM)
    path = tmp_path / "m.json"
    model_a = train_logistic(rows, labels, TrainConfig(epochs=5, seed=1))
    model_b = train_svm(rows, labels, TrainConfig(epochs=5, seed=2))

    def write_atomic(model):
        tmp = tmp_path / "m.json.tmp"
        save_model(model, tmp)
        os.replace(tmp, path)

    write_atomic(model_a)
    app = create_app(ServiceConfig(model_file=str(path)))
    with TestClient(app) as tc:
        payload = {"text": "steady probe"}
        body_a = tc.post("/v1/classify", json=payload).content
        write_atomic(model_b)
        assert tc.post("/v1/reload").status_code == 200
        body_b = tc.post("/v1/classify", json=payload).content
        assert body_a != body_b

        responses = []
        lock = threading.Lock()
        stop = threading.Event()

        def hammer():
            while not stop.is_set():
                content = tc.post("/v1/classify", json=payload).content
                with lock:
                    responses.append(content)

        workers = [threading.Thread(target=hammer) for _ in range(8)]
        for w in workers:
            w.start()
        for flip in range(10):
            write_atomic(model_a if flip % 2 else model_b)
            assert tc.post("/v1/reload").status_code == 200
        stop.set()
        for w in workers:
            w.join()

    assert len(responses) >= 100
    allowed = {body_a, body_b}
    assert all(r in allowed for r in responses)


# --- config resolution ---


def test_service_config_validation():
    with pytest.raises(InvalidInput):
        ServiceConfig(bind_addr="no-port")
    with pytest.raises(InvalidInput):
        ServiceConfig(backend="gpu")
    with pytest.raises(InvalidInput):
        ServiceConfig(max_body_bytes=0)
    cfg = ServiceConfig(bind_addr="0.0.0.0:9001")
    assert cfg.host == "0.0.0.0" and cfg.port == 9001


def test_config_file_parsing(tmp_path):
    path = tmp_path / "svc.conf"
    path.write_text(
        "# comment line\n"
        "bind_addr = \"0.0.0.0:9000\"\n"
        "max_body_bytes = 1024  # inline comment\n"
        "backend = mock\n",
        encoding="utf-8",
    )
    values = load_config_file(path)
    assert values == {
        "bind_addr": "0.0.0.0:9000",
        "max_body_bytes": 1024,
        "backend": "mock",
    }
    path.write_text("mystery = 1\n", encoding="utf-8")
    with pytest.raises(InvalidInput):
        load_config_file(path)


def test_resolve_precedence(tmp_path, monkeypatch):
    path = tmp_path / "svc.conf"
    path.write_text("bind_addr = 1.1.1.1:1111\nmax_body_bytes = 10\n", encoding="utf-8")
    monkeypatch.setenv("MODGUARD_BIND_ADDR", "2.2.2.2:2222")
    cfg = resolve_config({"model_file": "m.json"}, config_path=path)
    assert cfg.bind_addr == "2.2.2.2:2222"  # env beats file
    assert cfg.max_body_bytes == 10  # file survives where env is silent
    cfg = resolve_config(
        {"bind_addr": "3.3.3.3:3333", "model_file": "m.json"}, config_path=path
    )
    assert cfg.bind_addr == "3.3.3.3:3333"  # flags beat env


def test_threshold_override_applies(model_path):
    snap_low = build_snapshot(
        ServiceConfig(model_file=str(model_path), threshold_override=0.0)
    )
    assert snap_low.model.threshold == 0.0
    snap_default = build_snapshot(ServiceConfig(model_file=str(model_path)))
    assert snap_default.model.threshold == 0.5
