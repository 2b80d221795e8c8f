"""HTTP classification service over a trained model snapshot.

Every request reads one immutable snapshot (classifier + embedding
backend + model-file hash); /v1/reload swaps in a freshly built snapshot
with a single attribute assignment, so concurrent requests always see
exactly one coherent state. Bodies are parsed by hand to keep the error
codes and the response bytes deterministic.
"""

from __future__ import annotations

import base64
import binascii
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, Request, Response

from .classifiers import load_model, predict
from .embedding import decode_image, get_backend
from .errors import DimMismatch, ImageDecodeError, InvalidInput
from .textprep import clean_text

DEFAULT_MAX_BODY = 8 * 1024 * 1024


@dataclass(frozen=True)
class ServiceConfig:
    bind_addr: str = "127.0.0.1:8000"
    model_file: str = ""
    backend: str = "mock"
    backend_dir: str | None = None
    max_body_bytes: int = DEFAULT_MAX_BODY
    threshold_override: float | None = None

    def __post_init__(self):
        if self.backend not in ("mock", "model"):
            raise InvalidInput(f"unknown backend {self.backend!r}")
        if self.max_body_bytes < 1:
            raise InvalidInput("max_body_bytes must be positive")
        host, sep, port = self.bind_addr.rpartition(":")
        if not sep or not host or not port.isdigit() or not 0 < int(port) < 65536:
            raise InvalidInput(f"bind_addr must be host:port, got {self.bind_addr!r}")

    @property
    def host(self) -> str:
        return self.bind_addr.rpartition(":")[0]

    @property
    def port(self) -> int:
        return int(self.bind_addr.rpartition(":")[2])


@dataclass(frozen=True)
class Snapshot:
    model: object
    model_hash: str
    backend: object


def build_snapshot(config: ServiceConfig) -> Snapshot:
    raw = Path(config.model_file).read_bytes()
    model = load_model(config.model_file)
    if config.threshold_override is not None:
        model = dataclasses.replace(model, threshold=config.threshold_override)
    if config.backend == "mock":
        backend = get_backend("mock", dim=model.dim)
    else:
        backend = get_backend("model", model_dir=config.backend_dir)
        if backend.dim != model.dim:
            raise DimMismatch(
                f"backend dim {backend.dim} != classifier dim {model.dim}"
            )
    return Snapshot(
        model=model, model_hash=hashlib.sha256(raw).hexdigest(), backend=backend
    )


def _json_bytes(payload: dict) -> bytes:
    # Fixed separators and insertion order: replaying a request against the
    # same snapshot must yield byte-identical bodies.
    return json.dumps(payload, separators=(",", ":")).encode("utf-8")


def _respond(payload: dict, status: int = 200) -> Response:
    return Response(
        content=_json_bytes(payload),
        status_code=status,
        media_type="application/json",
    )


def create_app(config: ServiceConfig) -> FastAPI:
    app = FastAPI(openapi_url=None, docs_url=None, redoc_url=None)
    app.state.config = config
    app.state.snapshot = build_snapshot(config)

    @app.post("/v1/classify")
    async def classify(request: Request) -> Response:
        snapshot: Snapshot = request.app.state.snapshot
        body = await request.body()
        if len(body) > config.max_body_bytes:
            return _respond({"error": "body too large"}, 413)
        try:
            payload = json.loads(body)
        except (UnicodeDecodeError, json.JSONDecodeError):
            return _respond({"error": "malformed JSON body"}, 400)
        if not isinstance(payload, dict):
            return _respond({"error": "body must be a JSON object"}, 400)
        has_text = isinstance(payload.get("text"), str)
        has_image = isinstance(payload.get("image_b64"), str)
        if has_text == has_image:
            return _respond({"error": "provide exactly one of text, image_b64"}, 400)
        if has_text:
            vector = snapshot.backend.embed_text(clean_text(payload["text"]))
        else:
            try:
                blob = base64.b64decode(payload["image_b64"], validate=True)
                image = decode_image(blob)
            except (binascii.Error, ValueError, ImageDecodeError):
                return _respond({"error": "undecodable image"}, 422)
            vector = snapshot.backend.embed_image(image)
        result = predict(snapshot.model, vector)
        return _respond(
            {
                "label": result.label,
                "score": result.score,
                "model_kind": snapshot.model.kind,
                "dim": snapshot.model.dim,
            }
        )

    @app.get("/v1/health")
    async def health(request: Request) -> Response:
        snapshot: Snapshot = request.app.state.snapshot
        return _respond({"status": "ok", "model_hash": snapshot.model_hash})

    @app.post("/v1/reload")
    async def reload(request: Request) -> Response:
        try:
            fresh = build_snapshot(request.app.state.config)
        except Exception as exc:  # keep serving the old snapshot
            return _respond({"error": f"reload failed: {exc}"}, 500)
        request.app.state.snapshot = fresh
        return _respond({"status": "reloaded", "model_hash": fresh.model_hash})

    return app


# --- configuration file and environment -----------------------------------

_CONFIG_KEYS = {
    "bind_addr": str,
    "model_file": str,
    "backend": str,
    "backend_dir": str,
    "max_body_bytes": int,
    "threshold_override": float,
}


def _coerce(key: str, raw: str):
    caster = _CONFIG_KEYS[key]
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        raw = raw[1:-1]
    try:
        return caster(raw)
    except ValueError as exc:
        raise InvalidInput(f"bad value for {key}: {raw!r}") from exc


def load_config_file(path) -> dict:
    """TOML-style flat key = value pairs; # starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            key, sep, raw = stripped.partition("=")
            key = key.strip()
            if not sep or key not in _CONFIG_KEYS:
                raise InvalidInput(f"line {line_no}: expected <known key> = <value>")
            values[key] = _coerce(key, raw.split("#", 1)[0])
    return values


def resolve_config(flag_values: dict, config_path=None) -> ServiceConfig:
    """Precedence: explicit flags > MODGUARD_* environment > config file."""
    values = {}
    if config_path:
        values.update(load_config_file(config_path))
    for key in _CONFIG_KEYS:
        env = os.environ.get(f"MODGUARD_{key.upper()}")
        if env is not None:
            values[key] = _coerce(key, env)
    values.update({k: v for k, v in flag_values.items() if v is not None})
    return ServiceConfig(**values)


def serve(config: ServiceConfig) -> None:  # pragma: no cover - blocking loop
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="warning")
