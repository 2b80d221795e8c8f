"""Corpus ingestion, JSONL persistence, deterministic splits, and the
image-retrieval client used to assemble a visual test set.

A corpus is an immutable tuple of labeled examples. The JSONL schema is
{id, modality, text?|image_path?, label, synthetic, source}; ids must be
unique and labels are 0/1 (pending-review images carry label None and
live outside Corpus until a human fills the manifest).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import threading
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import urlsplit

import numpy as np
import requests
from PIL import Image

from .errors import (
    DuplicateId,
    EndpointUnreachable,
    InvalidInput,
    QuotaExceeded,
    SchemaError,
    TooFewExamples,
)
from .textprep import clean_text

MODALITIES = ("text", "image")
MANIFEST_NAME = "review_manifest.csv"
MANIFEST_FIELDS = ("image_path", "proposed_query", "label")


@dataclass(frozen=True)
class LabeledExample:
    id: str
    modality: str
    label: int | None
    synthetic: bool = False
    source: str = ""
    text: str | None = None
    image_path: str | None = None

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise InvalidInput("example id must be a non-empty string")
        if self.modality not in MODALITIES:
            raise InvalidInput(f"unknown modality {self.modality!r}")
        if self.label is not None and self.label not in (0, 1):
            raise InvalidInput(f"label must be 0 or 1, got {self.label!r}")
        if self.modality == "text":
            if not isinstance(self.text, str) or self.image_path is not None:
                raise InvalidInput("text example needs text and no image_path")
        else:
            if not isinstance(self.image_path, str) or self.text is not None:
                raise InvalidInput("image example needs image_path and no text")

    def content_ref(self) -> str:
        return self.text if self.modality == "text" else self.image_path


@dataclass(frozen=True)
class Corpus:
    examples: tuple[LabeledExample, ...]

    def __post_init__(self):
        seen = set()
        for ex in self.examples:
            if ex.id in seen:
                raise DuplicateId(f"duplicate example id {ex.id!r}")
            seen.add(ex.id)
            if ex.label is None:
                raise InvalidInput(f"example {ex.id!r} is unlabeled")

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __getitem__(self, idx):
        return self.examples[idx]

    def label_counts(self) -> Counter:
        return Counter(ex.label for ex in self.examples)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise InvalidInput("train_fraction must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class FetchResult:
    examples: list
    failures: list


# --- persistence ----------------------------------------------------------

_SCHEMA_KEYS = {"id", "modality", "text", "image_path", "label", "synthetic", "source"}


def _example_from_record(record: dict, line: int) -> LabeledExample:
    if not isinstance(record, dict):
        raise SchemaError("record is not a JSON object", line)
    unknown = set(record) - _SCHEMA_KEYS
    if unknown:
        raise SchemaError(f"unknown fields {sorted(unknown)}", line)
    for key in ("id", "modality", "label"):
        if key not in record:
            raise SchemaError(f"missing required field {key!r}", line)
    label = record["label"]
    if isinstance(label, bool) or label not in (0, 1):
        raise SchemaError(f"label must be 0 or 1, got {label!r}", line)
    synthetic = record.get("synthetic", False)
    if not isinstance(synthetic, bool):
        raise SchemaError("synthetic must be a boolean", line)
    source = record.get("source", "")
    if not isinstance(source, str):
        raise SchemaError("source must be a string", line)
    try:
        return LabeledExample(
            id=record["id"],
            modality=record["modality"],
            label=label,
            synthetic=synthetic,
            source=source,
            text=record.get("text"),
            image_path=record.get("image_path"),
        )
    except InvalidInput as exc:
        raise SchemaError(str(exc), line) from exc


def load_corpus(path) -> Corpus:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", line_no) from exc
            examples.append(_example_from_record(record, line_no))
    return Corpus(examples=tuple(examples))


def example_to_record(ex: LabeledExample) -> dict:
    record = {"id": ex.id, "modality": ex.modality}
    if ex.modality == "text":
        record["text"] = ex.text
    else:
        record["image_path"] = ex.image_path
    record["label"] = ex.label
    record["synthetic"] = ex.synthetic
    record["source"] = ex.source
    return record


def save_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in corpus:
            fh.write(json.dumps(example_to_record(ex), ensure_ascii=False))
            fh.write("\n")


def stats(corpus: Corpus) -> dict:
    by_label = Counter(str(ex.label) for ex in corpus)
    by_modality = Counter(ex.modality for ex in corpus)
    return {
        "total": len(corpus),
        "labels": {key: by_label[key] for key in sorted(by_label)},
        "modalities": {key: by_modality[key] for key in sorted(by_modality)},
        "synthetic": sum(1 for ex in corpus if ex.synthetic),
    }


# --- splitting ------------------------------------------------------------


def _take(indices: np.ndarray, fraction: float) -> int:
    # Round to nearest, then clamp so neither side is empty.
    n = indices.shape[0]
    return int(min(max(round(n * fraction), 1), n - 1))


def split(corpus: Corpus, spec: SplitSpec = SplitSpec()):
    """Deterministic (train, test) partition, stratified by label unless
    disabled. Output order follows the input corpus."""
    n = len(corpus)
    rng = np.random.default_rng(spec.seed)
    train_idx: list[int] = []
    if spec.stratified:
        by_label = defaultdict(list)
        for i, ex in enumerate(corpus):
            by_label[ex.label].append(i)
        for label in sorted(by_label):
            members = np.asarray(by_label[label])
            if members.shape[0] < 2:
                raise TooFewExamples(
                    f"class {label} has {members.shape[0]} example(s); need at least 2"
                )
            picked = rng.permutation(members.shape[0])[: _take(members, spec.train_fraction)]
            train_idx.extend(members[picked])
    else:
        if n < 2:
            raise TooFewExamples(f"corpus has {n} example(s); need at least 2")
        order = rng.permutation(n)
        train_idx.extend(order[: _take(order, spec.train_fraction)])
    chosen = set(train_idx)
    train = Corpus(tuple(ex for i, ex in enumerate(corpus) if i in chosen))
    test = Corpus(tuple(ex for i, ex in enumerate(corpus) if i not in chosen))
    return train, test


# --- source-dataset converters ---------------------------------------------


def ingest_hatespeech_csv(path) -> Corpus:
    """Hate-speech CSV converter: rows whose class column equals 1 become
    label-1 text examples (other classes are dropped). Text is cleaned;
    rows that clean to nothing are skipped."""
    examples = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"class", "tweet"} <= set(reader.fieldnames):
            raise SchemaError("CSV must have 'class' and 'tweet' columns", 1)
        for row_no, row in enumerate(reader, start=2):
            if row.get("class", "").strip() != "1":
                continue
            cleaned = clean_text(row.get("tweet") or "")
            if not cleaned:
                continue
            examples.append(
                LabeledExample(
                    id=f"hs-{row_no}",
                    modality="text",
                    label=1,
                    source="hatespeech-csv",
                    text=cleaned,
                )
            )
    return Corpus(tuple(examples))


def ingest_redcaps_manifest(path) -> Corpus:
    """RedCaps-style manifest converter: every entry becomes a label-0
    image example pointing at its URL (fetch-images localizes later)."""
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc.msg}", exc.lineno) from exc
    entries = payload.get("annotations") if isinstance(payload, dict) else payload
    if not isinstance(entries, list):
        raise SchemaError("manifest must be a list or contain 'annotations'", 1)
    examples = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or not isinstance(entry.get("url"), str):
            raise SchemaError(f"entry {i} lacks a url", 1)
        examples.append(
            LabeledExample(
                id=str(entry.get("image_id") or f"rc-{i}"),
                modality="image",
                label=0,
                source="redcaps",
                image_path=entry["url"],
            )
        )
    return Corpus(tuple(examples))


def load_review_manifest(path) -> Corpus:
    """Read back a hand-labeled review manifest; blank labels are skipped."""
    examples = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(MANIFEST_FIELDS) <= set(reader.fieldnames):
            raise SchemaError(f"manifest needs columns {MANIFEST_FIELDS}", 1)
        for row_no, row in enumerate(reader, start=2):
            raw = (row.get("label") or "").strip()
            if not raw:
                continue
            if raw not in ("0", "1"):
                raise SchemaError(f"label must be 0, 1 or blank, got {raw!r}", row_no)
            image_path = row["image_path"]
            examples.append(
                LabeledExample(
                    id=f"img-{Path(image_path).stem}",
                    modality="image",
                    label=int(raw),
                    source=f"search:{row.get('proposed_query', '')}",
                    image_path=image_path,
                )
            )
    return Corpus(tuple(examples))


# --- image search and retrieval ---------------------------------------------


class StubSearchClient:
    """Canned results from a fixture file: either a list of rows used for
    every query, or an object keyed by query string."""

    def __init__(self, fixture_path):
        with open(fixture_path, encoding="utf-8") as fh:
            self.fixture = json.load(fh)

    def search(self, query: str, limit: int):
        rows = self.fixture.get(query, []) if isinstance(self.fixture, dict) else self.fixture
        return [(row["url"], row.get("snippet", "")) for row in rows]


class HttpSearchClient:
    """GET-based image search: endpoint and key from arguments or the
    MODGUARD_SEARCH_URL / MODGUARD_SEARCH_KEY environment."""

    def __init__(self, endpoint=None, api_key=None, timeout_s=15.0):
        self.endpoint = endpoint or os.environ.get("MODGUARD_SEARCH_URL", "")
        self.api_key = api_key or os.environ.get("MODGUARD_SEARCH_KEY", "")
        self.timeout_s = timeout_s
        if not self.endpoint:
            raise InvalidInput("no search endpoint configured")

    def search(self, query: str, limit: int):
        params = {"q": query, "num": limit}
        if self.api_key:
            params["key"] = self.api_key
        try:
            resp = requests.get(self.endpoint, params=params, timeout=self.timeout_s)
        except requests.RequestException as exc:
            raise EndpointUnreachable(str(exc)) from exc
        if resp.status_code == 429:
            raise QuotaExceeded("search quota exhausted (HTTP 429)")
        if resp.status_code != 200:
            raise EndpointUnreachable(f"search endpoint returned {resp.status_code}")
        try:
            items = resp.json().get("items", [])
        except ValueError as exc:
            raise EndpointUnreachable(f"unparseable search response: {exc}") from exc
        return [(item.get("link", ""), item.get("snippet", "")) for item in items]


def image_search(client, query: str, limit: int):
    """Deduplicated (url, snippet) rows, at most limit of them."""
    if not query or not query.strip():
        raise InvalidInput("query must be non-empty")
    if limit < 0:
        raise InvalidInput("limit must be non-negative")
    if limit == 0:
        return []
    results = []
    seen = set()
    for url, snippet in client.search(query, limit):
        if url and url not in seen:
            seen.add(url)
            results.append((url, snippet))
        if len(results) == limit:
            break
    return results


def _default_fetcher(url: str, timeout_s: float) -> bytes:
    resp = requests.get(url, timeout=timeout_s)
    resp.raise_for_status()
    return resp.content


def fetch_images(
    urls,
    dest_dir,
    fetcher=None,
    max_workers: int = 8,
    per_host: int = 2,
    timeout_s: float = 15.0,
) -> FetchResult:
    """Download, decode, and canonically re-encode images; emit the review
    manifest for the human labeling pass.

    urls: iterable of url strings or (url, proposed_query) pairs. Failures
    are collected per url, never fatal. Downloads run concurrently with a
    per-host politeness cap.
    """
    dest = Path(dest_dir)
    dest.mkdir(parents=True, exist_ok=True)
    pairs = [(u, "") if isinstance(u, str) else (u[0], u[1]) for u in urls]
    fetch = fetcher or (lambda url: _default_fetcher(url, timeout_s))
    gates: dict[str, threading.Semaphore] = defaultdict(
        lambda: threading.Semaphore(per_host)
    )
    gate_lock = threading.Lock()

    def grab(url: str) -> bytes:
        host = urlsplit(url).netloc
        with gate_lock:
            gate = gates[host]
        with gate:
            return fetch(url)

    examples, failures, manifest_rows = [], [], []
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [pool.submit(grab, url) for url, _ in pairs]
        for (url, query), future in zip(pairs, futures):
            try:
                blob = future.result()
                image = Image.open(io.BytesIO(blob))
                image = image.convert("RGB")
            except Exception as exc:  # fetch or decode; collected, not fatal
                failures.append((url, f"{type(exc).__name__}: {exc}"))
                continue
            digest = hashlib.sha256(url.encode("utf-8")).hexdigest()[:16]
            out_path = dest / f"{digest}.png"
            image.save(out_path, format="PNG")
            examples.append(
                LabeledExample(
                    id=f"img-{digest}",
                    modality="image",
                    label=None,
                    source=url,
                    image_path=str(out_path),
                )
            )
            manifest_rows.append((str(out_path), query, ""))

    with open(dest / MANIFEST_NAME, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        writer.writerows(manifest_rows)
    return FetchResult(examples=examples, failures=failures)
