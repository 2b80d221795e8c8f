import csv
import functools
import io
import json
import threading
import time
from http.server import HTTPServer, SimpleHTTPRequestHandler

import pytest
from click.testing import CliRunner
from PIL import Image

from modguard.cli import main
from modguard.embedding import read_store


@pytest.fixture
def runner():
    return CliRunner()


def _write_jsonl(path, records):
    path.write_text(
        "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records),
        encoding="utf-8",
    )


def _raw_corpus(n_per_class=10):
    records = []
    for i in range(n_per_class):
        records.append({
            "id": f"p{i}", "modality": "text", "label": 1,
            "text": f"RT @user{i}: you people are awful and stupid {i} https://t.co/x",
        })
        records.append({
            "id": f"n{i}", "modality": "text", "label": 0,
            "text": f"what a lovely garden photo {i} #nature",
        })
    return records


def test_full_pipeline_smoke(runner, tmp_path):
    started = time.monotonic()
    raw = tmp_path / "raw.jsonl"
    _write_jsonl(raw, _raw_corpus(10))
    clean = tmp_path / "clean.jsonl"
    store = tmp_path / "vectors.embs"
    model = tmp_path / "model.json"
    preds = tmp_path / "preds.jsonl"
    report = tmp_path / "report.json"
    roc = tmp_path / "roc.csv"
    coords = tmp_path / "coords.csv"

    steps = [
        ["preprocess", "--in", str(raw), "--out", str(clean)],
        ["embed", "--in", str(clean), "--out", str(store), "--dim", "64"],
        ["train", "--algo", "logreg", "--store", str(store), "--out", str(model),
         "--epochs", "30"],
        ["predict", "--model", str(model), "--store", str(store), "--out", str(preds)],
        ["eval", "--model", str(model), "--store", str(store),
         "--report", str(report), "--roc-csv", str(roc)],
        ["reduce", "--store", str(store), "--method", "umap", "--dim", "3",
         "--out", str(coords), "--n-neighbors", "5", "--epochs", "30"],
    ]
    for step in steps:
        result = runner.invoke(main, step)
        assert result.exit_code == 0, f"{step[0]} failed: {result.output}"

    # cleaned text lost its noise but kept extra keys
    cleaned = [json.loads(s) for s in clean.read_text().splitlines()]
    assert all("http" not in r["text"] and "@" not in r["text"] for r in cleaned)
    assert cleaned[0]["label"] in (0, 1)

    loaded = read_store(store)
    assert loaded.count == 20 and loaded.dim == 64
    assert loaded.labels is not None

    scored = [json.loads(s) for s in preds.read_text().splitlines()]
    assert len(scored) == 20
    assert set(scored[0]) == {"id", "score", "label"}

    payload = json.loads(report.read_text())
    assert set(payload) == {
        "counts", "precision", "recall", "f1", "accuracy", "auc", "roc",
    }
    assert payload["counts"]["tp"] + payload["counts"]["fn"] == 10

    roc_rows = list(csv.reader(roc.open()))
    assert roc_rows[0] == ["fpr", "tpr", "threshold"]
    assert float(roc_rows[1][2]) == float("inf")

    coord_rows = list(csv.reader(coords.open()))
    assert coord_rows[0] == ["id", "x", "y", "z", "label"]
    assert len(coord_rows) == 21

    assert time.monotonic() - started < 10.0


def test_unknown_subcommand_exits_2(runner):
    result = runner.invoke(main, ["conjure"])
    assert result.exit_code == 2


def test_module_errors_exit_1_with_prefix(runner, tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "a"}\n', encoding="utf-8")
    result = runner.invoke(main, ["preprocess", "--in", str(bad), "--out",
                                  str(tmp_path / "out.jsonl")])
    assert result.exit_code == 1
    assert "preprocess:" in result.output


def test_embed_model_backend_requires_dir(runner, tmp_path):
    src = tmp_path / "in.jsonl"
    _write_jsonl(src, [{"id": "a", "text": "x"}])
    result = runner.invoke(main, ["embed", "--backend", "model", "--in", str(src),
                                  "--out", str(tmp_path / "o.embs")])
    assert result.exit_code == 2
    assert "--model" in result.output


def test_train_grid_reports_winner(runner, tmp_path):
    raw = tmp_path / "c.jsonl"
    _write_jsonl(raw, _raw_corpus(15))
    store = tmp_path / "v.embs"
    assert runner.invoke(main, ["embed", "--in", str(raw), "--out", str(store),
                                "--dim", "32"]).exit_code == 0
    result = runner.invoke(main, ["train", "--algo", "svm", "--store", str(store),
                                  "--out", str(tmp_path / "m.json"),
                                  "--epochs", "10", "--grid"])
    assert result.exit_code == 0
    assert "grid winner" in result.output


def test_train_knn_roundtrip(runner, tmp_path):
    raw = tmp_path / "c.jsonl"
    _write_jsonl(raw, _raw_corpus(6))
    store = tmp_path / "v.embs"
    model = tmp_path / "knn.json"
    runner.invoke(main, ["embed", "--in", str(raw), "--out", str(store), "--dim", "32"])
    result = runner.invoke(main, ["train", "--algo", "knn", "--store", str(store),
                                  "--out", str(model), "--k", "3"])
    assert result.exit_code == 0
    assert json.loads(model.read_text())["kind"] == "knn"


def test_split_and_stats(runner, tmp_path):
    corpus = tmp_path / "c.jsonl"
    _write_jsonl(corpus, _raw_corpus(5))
    train_out = tmp_path / "train.jsonl"
    test_out = tmp_path / "test.jsonl"
    result = runner.invoke(main, ["split", "--in", str(corpus),
                                  "--train", str(train_out), "--test", str(test_out)])
    assert result.exit_code == 0
    assert "train=8 test=2" in result.output

    result = runner.invoke(main, ["stats", "--in", str(corpus)])
    assert result.exit_code == 0
    payload = json.loads(result.output)
    assert payload["total"] == 10
    assert payload["labels"] == {"0": 5, "1": 5}


def test_ingest_hatespeech_cli(runner, tmp_path):
    src = tmp_path / "hs.csv"
    src.write_text(
        'count,class,tweet\n1,1,"@you are the worst kind of people"\n2,0,fine\n',
        encoding="utf-8",
    )
    out = tmp_path / "corpus.jsonl"
    result = runner.invoke(main, ["ingest", "--kind", "hatespeech",
                                  "--in", str(src), "--out", str(out)])
    assert result.exit_code == 0
    rows = [json.loads(s) for s in out.read_text().splitlines()]
    assert len(rows) == 1
    assert rows[0]["label"] == 1


def test_augment_stub_deterministic(runner, tmp_path):
    corpus = tmp_path / "c.jsonl"
    _write_jsonl(corpus, [
        {"id": "a", "modality": "text", "label": 1, "text": "I hate everything here"},
        {"id": "b", "modality": "text", "label": 0, "text": "nice big garden"},
    ])
    out1 = tmp_path / "grown1.jsonl"
    out2 = tmp_path / "grown2.jsonl"
    for out in (out1, out2):
        result = runner.invoke(main, ["augment", "--in", str(corpus), "--out",
                                      str(out), "--n", "3", "--stub"])
        assert result.exit_code == 0
        assert "added 6 synthetic" in result.output
    assert out1.read_text() == out2.read_text()
    rows = [json.loads(s) for s in out1.read_text().splitlines()]
    synthetic = [r for r in rows if r.get("synthetic")]
    assert len(synthetic) == 6
    assert {r["source"] for r in synthetic} == {"rephrase:a", "rephrase:b"}


def test_keywords_stub(runner, tmp_path):
    src = tmp_path / "in.jsonl"
    _write_jsonl(src, [
        {"id": "a", "text": "ban ban the outsiders now"},
        {"id": "skipme", "other": 1},
    ])
    out = tmp_path / "kw.jsonl"
    result = runner.invoke(main, ["keywords", "--in", str(src), "--out", str(out),
                                  "--stub"])
    assert result.exit_code == 0
    rows = [json.loads(s) for s in out.read_text().splitlines()]
    assert len(rows) == 1
    assert rows[0]["keywords"][0] == "ban"


def test_fetch_images_cli_local_server(runner, tmp_path):
    web_root = tmp_path / "web"
    web_root.mkdir()
    buf = io.BytesIO()
    Image.new("RGB", (10, 10), (200, 100, 0)).save(buf, format="PNG")
    (web_root / "ok.png").write_bytes(buf.getvalue())

    handler = functools.partial(SimpleHTTPRequestHandler, directory=str(web_root))
    server = HTTPServer(("127.0.0.1", 0), handler)
    port = server.server_address[1]
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        src = tmp_path / "urls.jsonl"
        _write_jsonl(src, [
            {"url": f"http://127.0.0.1:{port}/ok.png", "query": "orange square"},
            {"url": f"http://127.0.0.1:{port}/missing.png", "query": "nothing"},
        ])
        dest = tmp_path / "imgs"
        result = runner.invoke(main, ["fetch-images", "--in", str(src),
                                      "--dir", str(dest), "--timeout", "5"])
        assert result.exit_code == 0
        summary = json.loads(result.output.strip().splitlines()[-1])
        assert summary["fetched"] == 1
        assert summary["failed"] == 1
        manifest = (dest / "review_manifest.csv").read_text()
        assert "orange square" in manifest
    finally:
        server.shutdown()
        thread.join(timeout=2)


def test_serve_requires_model_file(runner):
    result = runner.invoke(main, ["serve"])
    assert result.exit_code == 2
    assert "model file" in result.output


def test_version_flag(runner):
    result = runner.invoke(main, ["--version"])
    assert result.exit_code == 0
    assert "0.1.0" in result.output
