"""Command-line front door for the whole pipeline.

Subcommands mirror the pipeline stages: preprocess, embed, train,
predict, eval, reduce, augment, keywords, ingest, split, stats,
fetch-images, serve. Module errors surface as command-prefixed messages
with exit code 1; usage errors exit 2.
"""

from __future__ import annotations

import csv
import functools
import json
from pathlib import Path

import click
import numpy as np

from . import augmentation as aug
from . import classifiers as clf
from . import corpus as corpus_mod
from . import metrics as metrics_mod
from . import projection as proj
from .embedding import (
    EmbeddingStore,
    decode_image,
    embed_images,
    embed_texts,
    get_backend,
    read_store,
    write_store,
)
from .errors import InvalidInput, ModguardError, SchemaError
from .service import resolve_config, serve
from .textprep import clean_text

GRID_LEARNING_RATES = (0.01, 0.1)
GRID_L2 = (0.0, 1e-4, 1e-2)


def _read_jsonl(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", line_no) from exc
    return records


def _write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False))
            fh.write("\n")


def _surface_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ModguardError as exc:
            name = fn.__name__.replace("_", "-")
            raise click.ClickException(f"{name}: {exc}") from exc

    return wrapper


@click.group()
@click.version_option(package_name="modguard")
def main():
    """Two-stage multimodal harmful-content detection toolkit."""


# --- preprocess -------------------------------------------------------------


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@_surface_errors
def preprocess(in_path, out_path):
    """Clean raw text records ({id, text} JSONL)."""
    records = _read_jsonl(in_path)
    out = []
    for i, record in enumerate(records, start=1):
        if "text" not in record or not isinstance(record["text"], str):
            raise SchemaError("record lacks a text field", i)
        cleaned = dict(record)
        cleaned["text"] = clean_text(record["text"])
        out.append(cleaned)
    _write_jsonl(out_path, out)
    click.echo(f"cleaned {len(out)} records -> {out_path}")


# --- embed -------------------------------------------------------------------


def _record_modality(record, flag):
    modality = record.get("modality")
    if modality is None:
        modality = "text" if "text" in record else "image"
    return modality if flag is None or modality == flag else None


@main.command()
@click.option("--backend", "backend_name", type=click.Choice(["model", "mock"]), default="mock")
@click.option("--model", "model_dir", type=click.Path(exists=True), default=None)
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--modality", type=click.Choice(["text", "image"]), default=None)
@click.option("--dim", type=int, default=768, show_default=True, help="mock backend width")
@click.option("--batch", type=int, default=32, show_default=True)
@_surface_errors
def embed(backend_name, model_dir, in_path, out_path, modality, dim, batch):
    """Embed corpus or {id, text} records into a binary store."""
    if backend_name == "model":
        if model_dir is None:
            raise click.UsageError("--backend model requires --model <dir>")
        backend = get_backend("model", model_dir=model_dir)
    else:
        backend = get_backend("mock", dim=dim)

    records = _read_jsonl(in_path)
    ids, labels, vectors = [], [], []
    texts_batch, images_batch = [], []

    def flush():
        if texts_batch:
            vectors.extend(embed_texts(backend, [t for _, t in texts_batch]))
            texts_batch.clear()
        if images_batch:
            vectors.extend(embed_images(backend, [im for _, im in images_batch]))
            images_batch.clear()

    for i, record in enumerate(records, start=1):
        kind = _record_modality(record, modality)
        if kind is None:
            continue
        if "id" not in record:
            raise SchemaError("record lacks an id", i)
        ids.append(str(record["id"]))
        labels.append(record.get("label"))
        if kind == "text":
            if images_batch:
                flush()
            texts_batch.append((record["id"], record.get("text") or ""))
        else:
            if texts_batch:
                flush()
            path = record.get("image_path")
            if not path:
                raise SchemaError("image record lacks image_path", i)
            images_batch.append((record["id"], decode_image(path)))
        if len(texts_batch) + len(images_batch) >= batch:
            flush()
    flush()

    if not ids:
        raise InvalidInput("no records matched; nothing to embed")
    has_labels = any(lab is not None for lab in labels)
    store = EmbeddingStore(
        ids=ids,
        rows=np.stack(vectors).astype(np.float32),
        labels=labels if has_labels else None,
    )
    write_store(store, out_path)
    click.echo(f"embedded {store.count} x {store.dim} -> {out_path}")


# --- train -------------------------------------------------------------------


def _labels_from_meta(path, count):
    rows = _read_jsonl(path)
    labels = [None] * count
    for i, row in enumerate(rows, start=1):
        if "row" not in row or "label" not in row:
            raise SchemaError("meta row needs 'row' and 'label'", i)
        if not 0 <= row["row"] < count:
            raise SchemaError(f"row {row['row']} out of range", i)
        labels[row["row"]] = row["label"]
    if any(lab is None for lab in labels):
        raise InvalidInput("labels file does not cover every row")
    return labels


def _holdout_split(labels, fraction, seed):
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    train_idx = []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        take = int(min(max(round(members.size * fraction), 1), members.size - 1))
        train_idx.extend(members[rng.permutation(members.size)[:take]])
    mask = np.zeros(labels.size, dtype=bool)
    mask[train_idx] = True
    return mask


@main.command()
@click.option("--algo", type=click.Choice(["logreg", "svm", "knn"]), required=True)
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@click.option("--labels", "labels_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--lr", type=float, default=0.1, show_default=True)
@click.option("--l2", type=float, default=1e-4, show_default=True)
@click.option("--epochs", type=int, default=200, show_default=True)
@click.option("--batch", type=int, default=64, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--class-weight", is_flag=True, help="balance classes by loss weighting")
@click.option("--k", type=int, default=5, show_default=True, help="k for knn")
@click.option("--grid", is_flag=True, help="sweep lr x l2 on a held-out fifth")
@_surface_errors
def train(algo, store_path, labels_path, out_path, lr, l2, epochs, batch, seed, class_weight, k, grid):
    """Train a classifier on a labeled embedding store."""
    store = read_store(store_path)
    labels = _labels_from_meta(labels_path, store.count) if labels_path else store.labels
    if labels is None or any(lab is None for lab in labels):
        raise InvalidInput("store has no labels; pass --labels <meta>")
    y = np.asarray(labels)

    if algo == "knn":
        model = clf.train_knn(store, y, k=k)
    else:
        trainer = clf.train_logistic if algo == "logreg" else clf.train_svm
        if grid:
            mask = _holdout_split(y, 0.8, seed)
            best = None
            for grid_lr in GRID_LEARNING_RATES:
                for grid_l2 in GRID_L2:
                    cfg = clf.TrainConfig(
                        learning_rate=grid_lr, l2=grid_l2, epochs=epochs,
                        seed=seed, batch=batch, class_weight=class_weight,
                    )
                    candidate = trainer(store.rows[mask], y[mask], cfg)
                    preds = clf.predict_labels(candidate, store.rows[~mask])
                    score = metrics_mod.prf1(metrics_mod.confusion(y[~mask], preds)).f1
                    if best is None or score > best[0]:
                        best = (score, grid_lr, grid_l2)
            _, lr, l2 = best
            click.echo(f"grid winner: lr={lr} l2={l2} (holdout f1={best[0]:.4f})")
        cfg = clf.TrainConfig(
            learning_rate=lr, l2=l2, epochs=epochs,
            seed=seed, batch=batch, class_weight=class_weight,
        )
        model = trainer(store, y, cfg)
    clf.save_model(model, out_path)
    click.echo(f"trained {model.kind} (dim {model.dim}) -> {out_path}")


# --- predict / eval ----------------------------------------------------------


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@_surface_errors
def predict(model_path, store_path, out_path):
    """Score every row of a store; JSONL {id, score, label} out."""
    model = clf.load_model(model_path)
    store = read_store(store_path)
    scores = clf.decision_scores(model, store)
    rows = [
        {"id": sid, "score": float(s), "label": int(s >= model.threshold)}
        for sid, s in zip(store.ids, scores)
    ]
    _write_jsonl(out_path, rows)
    click.echo(f"scored {len(rows)} rows -> {out_path}")


@main.command("eval")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@click.option("--report", "report_path", required=True, type=click.Path())
@click.option("--roc-csv", "roc_path", type=click.Path(), default=None)
@_surface_errors
def eval_cmd(model_path, store_path, report_path, roc_path):
    """Evaluate a model against a labeled store."""
    model = clf.load_model(model_path)
    store = read_store(store_path)
    if store.labels is None or any(lab is None for lab in store.labels):
        raise InvalidInput("store has no labels; evaluation needs them")
    report = metrics_mod.evaluate(model, store, store.labels)
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    if roc_path:
        scores = clf.decision_scores(model, store)
        with open(roc_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("fpr", "tpr", "threshold"))
            writer.writerows(metrics_mod.roc_table(scores, store.labels))
    click.echo(
        f"precision={report.precision:.4f} recall={report.recall:.4f} "
        f"f1={report.f1:.4f} auc={report.auc:.4f} -> {report_path}"
    )


# --- reduce -------------------------------------------------------------------


@main.command()
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@click.option("--method", type=click.Choice(["pca", "umap"]), default="umap", show_default=True)
@click.option("--dim", type=click.IntRange(2, 3), default=3, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--n-neighbors", type=int, default=15, show_default=True)
@click.option("--min-dist", type=float, default=0.1, show_default=True)
@click.option("--epochs", type=int, default=200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--highlight-ids", default=None, help="comma-separated ids to flag")
@_surface_errors
def reduce(store_path, method, dim, out_path, n_neighbors, min_dist, epochs, seed, highlight_ids):
    """Project a store to 2D/3D coordinates (plot-ready CSV)."""
    store = read_store(store_path)
    if method == "pca":
        projection = proj.pca(store, dim)
    else:
        cfg = proj.ProjectionConfig(
            target_dim=dim, n_neighbors=n_neighbors, min_dist=min_dist,
            epochs=epochs, seed=seed,
        )
        projection = proj.umap(store, cfg)
    highlights = set(filter(None, (highlight_ids or "").split(",")))
    header = ["id"] + ["x", "y", "z"][:dim]
    if store.labels is not None:
        header.append("label")
    if highlights:
        header.append("highlight")
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, sid in enumerate(projection.ids):
            row = [sid] + [repr(float(v)) for v in projection.coords[i]]
            if store.labels is not None:
                row.append(store.labels[i])
            if highlights:
                row.append(int(sid in highlights))
            writer.writerow(row)
    click.echo(f"{method} -> {out_path}")


# --- augment / keywords --------------------------------------------------------


def _llm_client(stub: bool, seed: int):
    if stub:
        return aug.StubLlmClient(seed=seed)
    return aug.HttpLlmClient()


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--n", type=int, default=10, show_default=True)
@click.option("--stub", is_flag=True, help="use the deterministic offline client")
@click.option("--seed", type=int, default=0, show_default=True)
@_surface_errors
def augment(in_path, out_path, n, stub, seed):
    """Append n paraphrases of every text example to a corpus."""
    corpus = corpus_mod.load_corpus(in_path)
    client = _llm_client(stub, seed)
    existing = {ex.id for ex in corpus}
    synthetics = []
    for ex in corpus:
        if ex.modality != "text":
            continue
        result = aug.rephrase(client, ex.text, n=n)
        for j, variant in enumerate(result.variants, start=1):
            new_id = f"{ex.id}-syn{j}"
            while new_id in existing:
                j += 1
                new_id = f"{ex.id}-syn{j}"
            existing.add(new_id)
            synthetics.append(
                corpus_mod.LabeledExample(
                    id=new_id, modality="text", label=ex.label, synthetic=True,
                    source=f"rephrase:{ex.id}", text=variant,
                )
            )
    grown = corpus_mod.Corpus(examples=corpus.examples + tuple(synthetics))
    corpus_mod.save_corpus(grown, out_path)
    click.echo(f"added {len(synthetics)} synthetic examples -> {out_path}")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--stub", is_flag=True, help="use the deterministic offline client")
@click.option("--seed", type=int, default=0, show_default=True)
@_surface_errors
def keywords(in_path, out_path, stub, seed):
    """Extract search keywords for every text record."""
    records = _read_jsonl(in_path)
    client = _llm_client(stub, seed)
    out = []
    for i, record in enumerate(records, start=1):
        text = record.get("text")
        if not isinstance(text, str):
            continue
        if "id" not in record:
            raise SchemaError("record lacks an id", i)
        out.append({"id": record["id"], "keywords": aug.extract_keywords(client, text)})
    _write_jsonl(out_path, out)
    click.echo(f"keywords for {len(out)} records -> {out_path}")


# --- corpus verbs ---------------------------------------------------------------


@main.command()
@click.option("--kind", type=click.Choice(["hatespeech", "redcaps", "review"]), required=True)
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@_surface_errors
def ingest(kind, in_path, out_path):
    """Convert a source dataset into corpus JSONL."""
    if kind == "hatespeech":
        corpus = corpus_mod.ingest_hatespeech_csv(in_path)
    elif kind == "redcaps":
        corpus = corpus_mod.ingest_redcaps_manifest(in_path)
    else:
        corpus = corpus_mod.load_review_manifest(in_path)
    corpus_mod.save_corpus(corpus, out_path)
    click.echo(f"ingested {len(corpus)} examples -> {out_path}")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--train", "train_path", required=True, type=click.Path())
@click.option("--test", "test_path", required=True, type=click.Path())
@click.option("--fraction", type=float, default=0.8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--no-stratify", is_flag=True)
@_surface_errors
def split(in_path, train_path, test_path, fraction, seed, no_stratify):
    """Deterministic train/test partition of a corpus."""
    corpus = corpus_mod.load_corpus(in_path)
    spec = corpus_mod.SplitSpec(
        train_fraction=fraction, seed=seed, stratified=not no_stratify
    )
    train_corpus, test_corpus = corpus_mod.split(corpus, spec)
    corpus_mod.save_corpus(train_corpus, train_path)
    corpus_mod.save_corpus(test_corpus, test_path)
    click.echo(f"train={len(train_corpus)} test={len(test_corpus)}")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@_surface_errors
def stats(in_path):
    """Print corpus composition as JSON."""
    corpus = corpus_mod.load_corpus(in_path)
    click.echo(json.dumps(corpus_mod.stats(corpus), indent=2))


@main.command("fetch-images")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True),
              help="JSONL rows {url, query?}")
@click.option("--dir", "dest_dir", required=True, type=click.Path())
@click.option("--workers", type=int, default=8, show_default=True)
@click.option("--per-host", type=int, default=2, show_default=True)
@click.option("--timeout", type=float, default=15.0, show_default=True)
@_surface_errors
def fetch_images(in_path, dest_dir, workers, per_host, timeout):
    """Download candidate images and emit the review manifest."""
    rows = _read_jsonl(in_path)
    pairs = []
    for i, row in enumerate(rows, start=1):
        if "url" not in row:
            raise SchemaError("row lacks a url", i)
        pairs.append((row["url"], row.get("query", "")))
    result = corpus_mod.fetch_images(
        pairs, dest_dir, max_workers=workers, per_host=per_host, timeout_s=timeout
    )
    for url, reason in result.failures:
        click.echo(f"failed {url}: {reason}", err=True)
    click.echo(
        json.dumps(
            {
                "fetched": len(result.examples),
                "failed": len(result.failures),
                "manifest": str(Path(dest_dir) / corpus_mod.MANIFEST_NAME),
            }
        )
    )


# --- serve ----------------------------------------------------------------------


@main.command("serve")
@click.option("--model-file", type=click.Path(exists=True), default=None)
@click.option("--backend", type=click.Choice(["mock", "model"]), default=None)
@click.option("--backend-dir", type=click.Path(exists=True), default=None)
@click.option("--bind", "bind_addr", default=None, help="host:port")
@click.option("--max-body-bytes", type=int, default=None)
@click.option("--threshold-override", type=float, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@_surface_errors
def serve_cmd(model_file, backend, backend_dir, bind_addr, max_body_bytes, threshold_override, config_path):
    """Run the classification HTTP service."""
    config = resolve_config(
        {
            "model_file": model_file,
            "backend": backend,
            "backend_dir": backend_dir,
            "bind_addr": bind_addr,
            "max_body_bytes": max_body_bytes,
            "threshold_override": threshold_override,
        },
        config_path,
    )
    if not config.model_file:
        raise click.UsageError("a model file is required (--model-file or config)")
    serve(config)


if __name__ == "__main__":
    main()
