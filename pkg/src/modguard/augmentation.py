"""LLM client for paraphrase augmentation and keyword extraction.

Two client flavors share one call surface (``complete(prompt) -> str``):
an HTTP chat-completion client for a live instruct model, and a seeded
offline stub the test suite runs against. Prompts are rendered from
verbatim template files shipped with the package; responses are mined
for the first balanced JSON array, tolerant of prose and code fences.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources

import requests

from .corpus import Corpus, LabeledExample
from .errors import (
    DegenerateData,
    EmptyAfterFiltering,
    EndpointUnreachable,
    InvalidInput,
    MalformedResponse,
)

DEFAULT_MODEL_NAME = "Mistral-7B-Instruct"
TEMPLATE_NAMES = ("rephrase.txt", "keywords.txt")

_COMMENT_RE = re.compile(r'Comment: """(.*)"""', re.DOTALL)
_COUNT_RE = re.compile(r"in (\d+) different ways")
_TOKEN_RE = re.compile(r"[a-z0-9']+")

_STOPWORDS = frozenset(
    """a an and are as at be but by for from has have i if in is it its me my
    of on or our so that the their them they this to was we were will with you
    your""".split()
)

_OPENERS = (
    "honestly,",
    "frankly,",
    "put differently,",
    "in other words,",
    "to be clear,",
    "simply put,",
    "truth be told,",
    "look,",
    "basically,",
    "real talk,",
)

_SYNONYMS = {
    "hate": "despise",
    "love": "adore",
    "people": "folks",
    "good": "decent",
    "bad": "awful",
    "big": "huge",
    "small": "tiny",
    "stupid": "foolish",
    "never": "not ever",
    "always": "every time",
}


def template_text(name: str) -> str:
    return (resources.files("modguard") / "templates" / name).read_text("utf-8")


def template_hash(name: str) -> str:
    raw = (resources.files("modguard") / "templates" / name).read_bytes()
    return hashlib.sha256(raw).hexdigest()


def render_template(name: str, **subs) -> str:
    # Plain replace keeps user braces intact; str.format would choke on them.
    text = template_text(name)
    for key, value in subs.items():
        text = text.replace("{" + key + "}", str(value))
    return text


@dataclass(frozen=True)
class LlmClientConfig:
    endpoint_url: str = ""
    model_name: str = DEFAULT_MODEL_NAME
    timeout_s: float = 30.0
    max_retries: int = 2
    temperature: float = 0.7

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise InvalidInput("timeout_s must be positive")
        if self.max_retries < 0:
            raise InvalidInput("max_retries must be non-negative")


@dataclass(frozen=True)
class RephraseResult:
    original: str
    variants: list
    raw_response: str


class HttpLlmClient:
    """Chat-completion-style endpoint speaking the common JSON shape."""

    def __init__(self, config: LlmClientConfig | None = None):
        cfg = config or LlmClientConfig(
            endpoint_url=os.environ.get("MODGUARD_LLM_URL", "")
        )
        if not cfg.endpoint_url:
            raise InvalidInput("no LLM endpoint configured (MODGUARD_LLM_URL)")
        self.config = cfg
        self.max_retries = cfg.max_retries

    def complete(self, prompt: str) -> str:
        headers = {}
        key = os.environ.get("MODGUARD_LLM_KEY", "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        body = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        }
        try:
            resp = requests.post(
                self.config.endpoint_url,
                json=body,
                headers=headers,
                timeout=self.config.timeout_s,
            )
        except requests.RequestException as exc:
            raise EndpointUnreachable(str(exc)) from exc
        if resp.status_code != 200:
            raise EndpointUnreachable(f"endpoint returned {resp.status_code}")
        try:
            choice = resp.json()["choices"][0]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected envelope: {exc}") from exc
        content = choice.get("message", {}).get("content") or choice.get("text")
        if not isinstance(content, str):
            raise MalformedResponse("choice carries no text content")
        return content


class StubLlmClient:
    """Deterministic offline stand-in: synonym-substituted, opener-prefixed
    paraphrases and term-frequency keywords, seeded per input text."""

    max_retries = 0

    def __init__(self, seed: int = 0):
        self.seed = seed

    def _payload(self, prompt: str) -> str:
        match = _COMMENT_RE.search(prompt)
        if match is None:
            raise MalformedResponse("stub prompt lacks a comment block")
        return match.group(1)

    def complete(self, prompt: str) -> str:
        payload = self._payload(prompt)
        if "Rephrase" in prompt:
            count = _COUNT_RE.search(prompt)
            n = int(count.group(1)) if count else 10
            return json.dumps(self._variants(payload, n))
        return json.dumps(self._keywords(payload))

    def _variants(self, text: str, n: int) -> list:
        substituted = " ".join(
            _SYNONYMS.get(word.lower(), word) for word in text.split()
        )
        anchor = int.from_bytes(
            hashlib.sha256(f"{self.seed}:{text}".encode("utf-8")).digest()[:4], "little"
        )
        variants = []
        for i in range(n):
            opener = _OPENERS[(anchor + i) % len(_OPENERS)]
            suffix = "" if i < len(_OPENERS) else f" (take {i + 1})"
            variants.append(f"{opener} {substituted}{suffix}")
        return variants

    def _keywords(self, text: str) -> list:
        tokens = _TOKEN_RE.findall(text.lower())
        counts = Counter(t for t in tokens if t not in _STOPWORDS and len(t) > 1)
        first_seen = {t: i for i, t in reversed(list(enumerate(tokens)))}
        ranked = sorted(counts, key=lambda t: (-counts[t], first_seen[t]))
        return ranked[:3]


def extract_json_array(raw: str) -> list:
    """First balanced top-level JSON array in raw text.

    Bracket scanning is string- and escape-aware; anything unsalvageable
    raises MalformedResponse rather than crashing.
    """
    if not isinstance(raw, str):
        raise MalformedResponse("response is not text")
    start = raw.find("[")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(raw)):
            ch = raw[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
            elif ch == '"':
                in_string = True
            elif ch == "[":
                depth += 1
            elif ch == "]":
                depth -= 1
                if depth == 0:
                    try:
                        value = json.loads(raw[start : i + 1])
                    except json.JSONDecodeError:
                        break
                    if isinstance(value, list):
                        return value
                    break
        start = raw.find("[", start + 1)
    raise MalformedResponse("no JSON array found in response")


def _attempt_loop(client, prompt: str):
    attempts = getattr(client, "max_retries", 0) + 1
    last_error = None
    for _ in range(attempts):
        raw = client.complete(prompt)
        try:
            return raw, extract_json_array(raw)
        except MalformedResponse as exc:
            last_error = exc
    raise last_error


def rephrase(client, text: str, n: int = 10) -> RephraseResult:
    """Up to n paraphrases of text, deduplicated, never the verbatim input."""
    if not text or not text.strip():
        raise InvalidInput("text must be non-empty")
    if n < 1:
        raise InvalidInput("n must be at least 1")
    prompt = render_template("rephrase.txt", text=text, n=n)
    raw, items = _attempt_loop(client, prompt)
    variants = []
    seen = set()
    for item in items:
        if not isinstance(item, str):
            continue
        candidate = item.strip()
        if not candidate or candidate == text or candidate in seen:
            continue
        seen.add(candidate)
        variants.append(candidate)
        if len(variants) == n:
            break
    if not variants:
        raise EmptyAfterFiltering("every returned variant was filtered out")
    return RephraseResult(original=text, variants=variants, raw_response=raw)


def extract_keywords(client, text: str) -> list:
    """1-8 lowercased keywords, deduplicated, response order preserved."""
    if not text or not text.strip():
        raise InvalidInput("text must be non-empty")
    prompt = render_template("keywords.txt", text=text)
    _, items = _attempt_loop(client, prompt)
    keywords = []
    seen = set()
    for item in items:
        if not isinstance(item, str):
            continue
        keyword = item.strip().lower()
        if not keyword or keyword in seen:
            continue
        seen.add(keyword)
        keywords.append(keyword)
        if len(keywords) == 8:
            break
    if not keywords:
        raise EmptyAfterFiltering("no usable keywords in response")
    return keywords


def balance_corpus(corpus: Corpus, client, target_ratio: float = 1.0) -> Corpus:
    """Grow the minority class with synthetic paraphrases until
    minority/majority reaches target_ratio. Originals pass through
    unchanged; synthetics carry source=rephrase:<original id>."""
    if not 0.0 < target_ratio <= 1.0:
        raise InvalidInput("target_ratio must lie in (0, 1]")
    counts = corpus.label_counts()
    if counts[0] == 0 or counts[1] == 0:
        raise DegenerateData("both classes must be present to balance")
    minority = 0 if counts[0] < counts[1] else 1
    majority_count = counts[1 - minority]
    # Round half up so the target is a stable integer.
    target = int(math.floor(majority_count * target_ratio + 0.5))
    needed = target - counts[minority]
    if needed <= 0:
        return corpus
    sources = [
        ex for ex in corpus if ex.label == minority and ex.modality == "text"
    ]
    if not sources:
        raise DegenerateData("minority class has no text examples to paraphrase")

    existing_ids = {ex.id for ex in corpus}
    per_source = Counter()
    synthetics = []
    cursor = 0
    while needed > 0:
        origin = sources[cursor % len(sources)]
        cursor += 1
        result = rephrase(client, origin.text, n=min(10, needed))
        for variant in result.variants:
            if needed == 0:
                break
            per_source[origin.id] += 1
            new_id = f"{origin.id}-syn{per_source[origin.id]}"
            while new_id in existing_ids:
                per_source[origin.id] += 1
                new_id = f"{origin.id}-syn{per_source[origin.id]}"
            existing_ids.add(new_id)
            synthetics.append(
                LabeledExample(
                    id=new_id,
                    modality="text",
                    label=minority,
                    synthetic=True,
                    source=f"rephrase:{origin.id}",
                    text=variant,
                )
            )
            needed -= 1
    return Corpus(examples=corpus.examples + tuple(synthetics))
