"""Checkpoint directories: ``manifest.json`` + ``weights.bin``.

``weights.bin`` is little-endian IEEE-754 float32, row-major, tensors
concatenated in manifest order.
"""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .config import ModelConfig
from .errors import ConfigError
from .transformer import DTYPES, Seq2Seq

FORMAT_VERSION = 1
_LE_F32 = np.dtype("<f4")


def save_checkpoint(out_dir, role: str, cfg: ModelConfig, tensors: dict, provenance: dict = None,
                    extra: dict = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    offset = 0
    chunks = []
    for name, t in tensors.items():
        arr = np.ascontiguousarray(t.detach().cpu().numpy(), dtype=_LE_F32)
        b = arr.tobytes(order="C")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(b)})
        offset += len(b)
        chunks.append(b)
    (out / "weights.bin").write_bytes(b"".join(chunks))
    meta = {
        "format_version": FORMAT_VERSION,
        "role": role,
        "dtype": "f32",
        "endianness": "little",
        "model_config": dataclasses.asdict(cfg),
        "params": manifest,
        "provenance": provenance or {},
        "extra": extra or {},
    }
    (out / "manifest.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def read_checkpoint(path) -> tuple[dict, dict]:
    """Return ``(manifest, {name: float32 tensor})`` after validating the layout."""
    path = Path(path)
    try:
        meta = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: no manifest.json") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}/manifest.json: {exc}") from None
    if meta.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint format {meta.get('format_version')}")
    try:
        blob = (path / "weights.bin").read_bytes()
    except FileNotFoundError:
        raise ConfigError(f"{path}: no weights.bin") from None
    tensors = {}
    expected = 0
    for entry in meta["params"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        if entry["offset"] != expected or entry["nbytes"] != 4 * n:
            raise ConfigError(f"{path}: manifest entry {entry['name']} is inconsistent")
        if entry["offset"] + entry["nbytes"] > len(blob):
            raise ConfigError(f"{path}: weights.bin is truncated at {entry['name']}")
        arr = np.frombuffer(blob, dtype=_LE_F32, count=n, offset=entry["offset"])
        tensors[entry["name"]] = torch.from_numpy(arr.reshape(entry["shape"]).copy())
        expected += entry["nbytes"]
    if expected != len(blob):
        raise ConfigError(f"{path}: weights.bin has {len(blob)} bytes, manifest describes {expected}")
    return meta, tensors


def subdict(tensors: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}


def prefixed(state: dict, prefix: str) -> dict:
    return {prefix + k: v for k, v in state.items()}


def load_model(cfg: ModelConfig, state: dict, n_enc: Optional[int] = None,
               n_dec: Optional[int] = None) -> Seq2Seq:
    model = Seq2Seq(cfg, n_enc=n_enc, n_dec=n_dec)
    dt = DTYPES[cfg.dtype]
    model.load_state_dict({k: v.to(dt) for k, v in state.items()})
    return model


def model_config_from(meta: dict) -> ModelConfig:
    return ModelConfig(**meta["model_config"])


# ---------------------------------------------------------------- role helpers

def save_teacher(out_dir, model: Seq2Seq, provenance=None) -> Path:
    return save_checkpoint(out_dir, "teacher", model.cfg, model.state_dict(), provenance)


def load_teacher(path) -> Seq2Seq:
    meta, tensors = read_checkpoint(path)
    if meta["role"] not in ("teacher", "suite"):
        raise ConfigError(f"{path}: expected a teacher checkpoint, found role {meta['role']!r}")
    cfg = model_config_from(meta)
    state = subdict(tensors, "teacher.") if meta["role"] == "suite" else tensors
    model = load_model(cfg, state)
    model.eval()
    return model


def save_suite(out_dir, suite, provenance=None) -> Path:
    teacher = suite.teacher
    tensors = prefixed(teacher.state_dict(), "teacher.")
    tensors.update(prefixed(suite.state_dict(), "suite."))
    extra = {"granularities": suite.granularities}
    return save_checkpoint(out_dir, "suite", teacher.cfg, tensors, provenance, extra)


def load_suite(path):
    from .suite import freeze, init_suite

    meta, tensors = read_checkpoint(path)
    if meta["role"] != "suite":
        raise ConfigError(f"{path}: expected a suite checkpoint, found role {meta['role']!r}")
    cfg = model_config_from(meta)
    teacher = freeze(load_model(cfg, subdict(tensors, "teacher.")))
    teacher.eval()
    gs = meta["extra"]["granularities"]
    suite = init_suite(teacher, gs["enc"], gs["dec"])
    dt = DTYPES[cfg.dtype]
    suite.load_state_dict({k: v.to(dt) for k, v in subdict(tensors, "suite.").items()})
    suite.eval()
    return suite


def save_assembled(out_dir, model: Seq2Seq, assembly=None, provenance=None) -> Path:
    extra = {"n_enc_layers": len(model.enc_layers), "n_dec_layers": len(model.dec_layers)}
    if assembly is not None:
        extra["assembly"] = assembly.to_dict()
    return save_checkpoint(out_dir, "assembled", model.cfg, model.state_dict(), provenance, extra)


def load_any_model(path) -> tuple[Seq2Seq, dict]:
    """Load a teacher or assembled checkpoint as a runnable model."""
    meta, tensors = read_checkpoint(path)
    cfg = model_config_from(meta)
    role = meta["role"]
    if role == "teacher":
        model = load_model(cfg, tensors)
    elif role == "assembled":
        model = load_model(cfg, tensors, meta["extra"]["n_enc_layers"], meta["extra"]["n_dec_layers"])
    elif role == "suite":
        model = load_model(cfg, subdict(tensors, "teacher."))
    else:
        raise ConfigError(f"{path}: unknown role {role!r}")
    model.eval()
    return model, meta
