"""Export a CLIP-style vision-language checkpoint to the modguard
interchange format.

Emits into the output directory:

- ``text_encoder.npz`` / ``image_encoder.npz`` — fp32 weight archives keyed
  by the upstream parameter names
- ``vocab.json`` / ``merges.txt`` — byte-level BPE tokenizer files
- ``model.json`` — manifest with architecture shape, preprocessing
  constants, tool versions, and sha256 hashes of the emitted files

After writing, the exporter self-checks: a fixed probe string and a fixed
probe image are embedded through the native framework and through the
exported files (via ``modguard embed --backend model``), and the export is
rejected unless both cosines reach 0.999.

Usage: ``export_model.py --checkpoint <name-or-path> --out <dir>``
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import shutil
import struct
import subprocess
import sys
import tempfile
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

PROBE_TEXT = "a photo of a dog"
COSINE_FLOOR = 0.999
_STORE_HEADER = struct.Struct("<4sHIQ")


class ExportError(Exception):
    """Base class for export failures."""


class DownloadFailure(ExportError):
    """The checkpoint could not be fetched or loaded."""


class ExportMismatch(ExportError):
    """The emitted files disagree with the native model."""


@dataclass(frozen=True)
class ExportManifest:
    checkpoint_name: str
    dim: int
    text: dict
    vision: dict
    preprocessing: dict
    tool_versions: dict
    files: dict

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "checkpoint_name": self.checkpoint_name,
            "dim": self.dim,
            "text": self.text,
            "vision": self.vision,
            "preprocessing": self.preprocessing,
            "tool_versions": self.tool_versions,
            "files": self.files,
        }


# --- checkpoint loading --------------------------------------------------


def _load_checkpoint(name: str):
    import torch  # local import keeps --help fast
    from transformers import CLIPImageProcessor, CLIPModel, CLIPTokenizer

    try:
        model = CLIPModel.from_pretrained(name)
        tokenizer = CLIPTokenizer.from_pretrained(name)
        processor = CLIPImageProcessor.from_pretrained(name)
    except OSError as exc:
        raise DownloadFailure(
            f"could not load checkpoint {name!r}: {exc}. "
            "Check the checkpoint name, local path, and network access."
        ) from exc
    model.eval()
    torch.set_grad_enabled(False)
    return model, tokenizer, processor


def _size_value(size, *keys) -> int:
    """Pull an int out of a processor size spec (int, dict, or SizeDict)."""
    if isinstance(size, int):
        return size
    for key in keys:
        try:
            value = size[key]
        except (KeyError, TypeError):
            value = getattr(size, key, None)
        if value:
            return int(value)
    raise ExportMismatch(f"cannot read {'/'.join(keys)} from processor size {size!r}")


# --- file emission ---------------------------------------------------------


def _write_npz(path: Path, arrays: dict) -> None:
    # np.savez stamps zip entries with the current time; fixed timestamps
    # keep re-runs byte-identical for the same weights
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED, allowZip64=True) as zf:
        for key in sorted(arrays):
            buf = io.BytesIO()
            np.save(buf, np.ascontiguousarray(arrays[key], dtype=np.float32))
            info = zipfile.ZipInfo(key + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def _write_tokenizer_files(tokenizer, out_dir: Path) -> None:
    backend = getattr(tokenizer, "backend_tokenizer", None)
    if backend is not None:
        backend.model.save(str(out_dir))
    else:
        tokenizer.save_vocabulary(str(out_dir))
    for required in ("vocab.json", "merges.txt"):
        if not (out_dir / required).exists():
            raise ExportMismatch(f"tokenizer did not produce {required}")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


# --- probes ------------------------------------------------------------------


def probe_image(crop: int) -> Image.Image:
    """Deterministic gradient-plus-noise probe, already at crop size so both
    preprocessing pipelines skip resampling and see identical pixels."""
    rng = np.random.default_rng(1405)
    ramp = np.linspace(0.0, 255.0, crop)
    base = np.stack(
        [
            np.tile(ramp, (crop, 1)),
            np.tile(ramp[:, None], (1, crop)),
            np.full((crop, crop), 96.0),
        ],
        axis=-1,
    )
    arr = np.clip(base + rng.normal(0.0, 40.0, (crop, crop, 3)), 0.0, 255.0)
    return Image.fromarray(arr.astype(np.uint8), "RGB")


def _pooled(output) -> np.ndarray:
    # transformers >= 5 returns BaseModelOutputWithPooling; older returns a tensor
    features = getattr(output, "pooler_output", output)
    vec = features[0].detach().cpu().numpy().astype(np.float64)
    return vec / np.linalg.norm(vec)


def _native_probe_embeddings(model, tokenizer, processor, image: Image.Image):
    enc = tokenizer(PROBE_TEXT, return_tensors="pt")
    text_vec = _pooled(model.get_text_features(**enc))
    pixels = processor(images=image, return_tensors="pt")["pixel_values"]
    image_vec = _pooled(model.get_image_features(pixel_values=pixels))
    return text_vec, image_vec


# --- consumer-side embedding -----------------------------------------------


def _consumer_cli() -> list:
    exe = shutil.which("modguard")
    if exe:
        return [exe]
    return [sys.executable, "-m", "modguard"]


def read_store_vectors(path) -> tuple[list, np.ndarray]:
    """Read an embedding store (magic ``EMBS``, version u16, dim u32,
    count u64 LE, then count x dim float32 LE rows; ids in the JSONL
    sidecar ``<path>.meta``)."""
    raw = Path(path).read_bytes()
    magic, version, dim, count = _STORE_HEADER.unpack_from(raw)
    if magic != b"EMBS" or version != 1:
        raise ExportMismatch(f"unexpected store header in {path}")
    rows = np.frombuffer(raw, dtype="<f4", offset=_STORE_HEADER.size)
    rows = rows.reshape(count, dim)
    ids = [None] * count
    with open(f"{path}.meta", encoding="utf-8") as fh:
        for line in fh:
            record = json.loads(line)
            ids[record["row"]] = record["id"]
    return ids, rows


def _embed_via_consumer(export_dir: Path, records: list, workdir: Path) -> dict:
    """Run the exported files through ``modguard embed --backend model`` and
    return {id: unit vector}."""
    in_path = workdir / "probes.jsonl"
    store_path = workdir / "probes.embs"
    with open(in_path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")
    cmd = _consumer_cli() + [
        "embed",
        "--backend",
        "model",
        "--model",
        str(export_dir),
        "--in",
        str(in_path),
        "--out",
        str(store_path),
    ]
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True)
    except FileNotFoundError as exc:
        raise ExportError(
            "modguard CLI not found; install the primary package to run the self-check"
        ) from exc
    if proc.returncode != 0:
        tail = (proc.stderr or proc.stdout).strip().splitlines()[-3:]
        raise ExportMismatch(
            "exported files were rejected by the consumer CLI: " + " | ".join(tail)
        )
    ids, rows = read_store_vectors(store_path)
    return {id_: rows[i] for i, id_ in enumerate(ids)}


def self_check(checkpoint_name: str, export_dir) -> dict:
    """Embed the fixed probes natively and through the exported files;
    return both cosines or raise ExportMismatch below the 0.999 floor."""
    return _self_check_loaded(_load_checkpoint(checkpoint_name), export_dir)


def _self_check_loaded(loaded, export_dir) -> dict:
    model, tokenizer, processor = loaded
    export_dir = Path(export_dir)
    manifest = json.loads((export_dir / "model.json").read_text(encoding="utf-8"))
    image = probe_image(int(manifest["preprocessing"]["crop"]))

    native_text, native_image = _native_probe_embeddings(model, tokenizer, processor, image)
    with tempfile.TemporaryDirectory() as tmp:
        workdir = Path(tmp)
        png = workdir / "probe.png"
        image.save(png)
        vectors = _embed_via_consumer(
            export_dir,
            [
                {"id": "probe-text", "text": PROBE_TEXT},
                {"id": "probe-image", "image_path": str(png)},
            ],
            workdir,
        )
    cosines = {
        "text": float(np.dot(native_text, vectors["probe-text"].astype(np.float64))),
        "image": float(np.dot(native_image, vectors["probe-image"].astype(np.float64))),
    }
    for kind, value in cosines.items():
        if value < COSINE_FLOOR:
            raise ExportMismatch(
                f"self-check {kind} cosine {value:.6f} < {COSINE_FLOOR}; "
                "the exported files do not reproduce the native model"
            )
    return cosines


# --- export -----------------------------------------------------------------


def export(
    checkpoint_name: str, out_dir, run_self_check: bool = True, verbose: bool = False
) -> ExportManifest:
    import torch
    import transformers

    loaded = _load_checkpoint(checkpoint_name)
    model, tokenizer, processor = loaded
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    state = {
        key: tensor
        for key, tensor in model.state_dict().items()
        if tensor.dtype.is_floating_point and key != "logit_scale"
    }
    text_arrays = {
        key: tensor.numpy()
        for key, tensor in state.items()
        if key.startswith("text_model.") or key == "text_projection.weight"
    }
    vision_arrays = {
        key: tensor.numpy()
        for key, tensor in state.items()
        if key.startswith("vision_model.") or key == "visual_projection.weight"
    }

    dim = int(model.config.projection_dim)
    text_width = text_arrays["text_projection.weight"].shape[0]
    vision_width = vision_arrays["visual_projection.weight"].shape[0]
    if not dim == text_width == vision_width:
        raise ExportMismatch(
            f"projection widths disagree: config {dim}, text {text_width}, "
            f"vision {vision_width}"
        )

    _write_npz(out / "text_encoder.npz", text_arrays)
    _write_npz(out / "image_encoder.npz", vision_arrays)
    _write_tokenizer_files(tokenizer, out)

    text_cfg = model.config.text_config
    vision_cfg = model.config.vision_config
    manifest = ExportManifest(
        checkpoint_name=checkpoint_name,
        dim=dim,
        text={
            "layers": int(text_cfg.num_hidden_layers),
            "heads": int(text_cfg.num_attention_heads),
            "layer_norm_eps": float(text_cfg.layer_norm_eps),
            "hidden_act": str(text_cfg.hidden_act),
            "context_length": int(text_cfg.max_position_embeddings),
            "bos_token_id": int(text_cfg.bos_token_id),
            "eos_token_id": int(text_cfg.eos_token_id),
        },
        vision={
            "layers": int(vision_cfg.num_hidden_layers),
            "heads": int(vision_cfg.num_attention_heads),
            "layer_norm_eps": float(vision_cfg.layer_norm_eps),
            "hidden_act": str(vision_cfg.hidden_act),
            "patch_size": int(vision_cfg.patch_size),
        },
        preprocessing={
            "resize_shortest": _size_value(processor.size, "shortest_edge", "height"),
            "crop": _size_value(processor.crop_size, "height", "shortest_edge"),
            "mean": [float(v) for v in processor.image_mean],
            "std": [float(v) for v in processor.image_std],
        },
        tool_versions={
            "torch": torch.__version__,
            "transformers": transformers.__version__,
            "numpy": np.__version__,
        },
        files={
            name: _sha256(out / name)
            for name in ("text_encoder.npz", "image_encoder.npz", "vocab.json", "merges.txt")
        },
    )
    (out / "model.json").write_text(
        json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )

    if verbose:
        print(f"exported {checkpoint_name} -> {out} (dim {manifest.dim})")
        for name, digest in sorted(manifest.files.items()):
            print(f"  {name}  sha256:{digest[:16]}...")
    if run_self_check:
        cosines = _self_check_loaded(loaded, out)
        if verbose:
            print(
                f"self-check: text cosine {cosines['text']:.6f}, "
                f"image cosine {cosines['image']:.6f}"
            )
    return manifest


# --- CLI ----------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="export_model.py",
        description="Export a CLIP-style checkpoint to the modguard interchange format.",
    )
    parser.add_argument("--checkpoint", required=True, help="checkpoint name or local path")
    parser.add_argument("--out", required=True, help="output directory")
    args = parser.parse_args(argv)

    try:
        import transformers

        transformers.logging.set_verbosity_error()
        transformers.logging.disable_progress_bar()
    except Exception:
        pass

    try:
        export(args.checkpoint, args.out, verbose=True)
    except ExportError as exc:
        print(f"export_model: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
