"""Model checkpoints: one JSON manifest plus one raw little-endian float32 blob
per parameter tensor. Round-trips are bit-exact because parameters are stored
float32 in memory as well."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .netcore import ArchConfig, ModelParams

FORMAT = "polarcast-checkpoint/1"


def _blob_name(tensor_name: str) -> str:
    return tensor_name.replace(".", "_") + ".bin"


def save_checkpoint(ckpt_dir, params: ModelParams, meta: dict | None = None) -> Path:
    """Write manifest.json + per-tensor blobs into ``ckpt_dir``.

    ``meta`` carries seed / setting / epoch / val_loss and anything else
    JSON-serializable the caller wants alongside the weights.
    """
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    tensors = []
    for name, arr in params.tensors().items():
        blob = np.ascontiguousarray(arr, dtype="<f4")
        fname = _blob_name(name)
        blob.tofile(ckpt_dir / fname)
        tensors.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": "float32",
                "byte_order": "little",
                "file": fname,
            }
        )
    manifest = {
        "format": FORMAT,
        "arch": asdict(params.arch),
        "meta": meta or {},
        "tensors": tensors,
    }
    with open(ckpt_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return ckpt_dir


def load_checkpoint(ckpt_dir) -> tuple[ModelParams, dict]:
    """Read a checkpoint back; returns (params, meta)."""
    ckpt_dir = Path(ckpt_dir)
    with open(ckpt_dir / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != FORMAT:
        raise ValueError(f"not a model checkpoint: {ckpt_dir}")
    arch_d = dict(manifest["arch"])
    arch_d["conv_channels"] = tuple(arch_d["conv_channels"])
    arch_d["dense_widths"] = tuple(arch_d["dense_widths"])
    arch = ArchConfig(**arch_d)
    params = ModelParams(arch=arch, conv_w=[None] * 5, conv_b=[None] * 5,
                         dense_w=[None] * 2, dense_b=[None] * 2)
    for entry in manifest["tensors"]:
        raw = np.fromfile(ckpt_dir / entry["file"], dtype="<f4")
        arr = raw.reshape(entry["shape"]).astype(np.float32)
        params.set_tensor(entry["name"], arr)
    if any(t is None for t in [*params.conv_w, *params.conv_b,
                               *params.dense_w, *params.dense_b]):
        raise ValueError(f"checkpoint {ckpt_dir} is missing tensors")
    return params, manifest["meta"]


def checkpoint_digest(ckpt_dir) -> str:
    """sha256 over the manifest and every blob, for determinism checks."""
    ckpt_dir = Path(ckpt_dir)
    h = hashlib.sha256()
    with open(ckpt_dir / "manifest.json", "rb") as fh:
        h.update(fh.read())
    with open(ckpt_dir / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    for entry in manifest["tensors"]:
        with open(ckpt_dir / entry["file"], "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()


def params_digest(params: ModelParams) -> str:
    """sha256 over tensor names, shapes and float32 bytes (no files involved)."""
    h = hashlib.sha256()
    for name, arr in params.tensors().items():
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return h.hexdigest()
