"""Versioned binary checkpoint container.

Layout: 4-byte magic, uint32 format version, uint64 header length, a JSON
header (model config, run config, config hash, rng seed, tensor manifest),
then raw little-endian float64 payloads in manifest order.  Everything is
written canonically, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelParams

MAGIC = b"DRCK"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable, truncated, or structurally wrong checkpoint file."""


class ConfigMismatchError(CheckpointError):
    """Checkpoint's config hash differs from the expected one."""


def _config_to_dict(config: ModelConfig) -> dict:
    return {
        "n_users": config.n_users,
        "n_items": config.n_items,
        "embed_dim": config.embed_dim,
        "max_seq_len": config.max_seq_len,
        "mlp_hidden": list(config.mlp_hidden),
        "backbone": config.backbone,
        "static_tower_input": config.static_tower_input,
        "lambda_e": config.lambda_e,
        "lambda_p": config.lambda_p,
        "lambda_reg": config.lambda_reg,
        "aux_on_negatives": config.aux_on_negatives,
    }


def _config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    d["mlp_hidden"] = tuple(d["mlp_hidden"])
    return ModelConfig(**d)


def save_checkpoint(
    params: ModelParams,
    path: str | Path,
    config_hash: str = "",
    rng_seed: int = 0,
    run_config: dict | None = None,
) -> None:
    """Write every named tensor plus configs to a deterministic container."""
    named = params.named_tensors()
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": _config_to_dict(params.config),
        "run_config": run_config or {},
        "config_hash": config_hash,
        "rng_seed": rng_seed,
        "tensors": [{"name": name, "shape": list(t.values.shape)} for name, t in named.items()],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for tensor in named.values():
            fh.write(np.ascontiguousarray(tensor.values, dtype="<f8").tobytes())


def load_checkpoint(
    path: str | Path,
    expected_config_hash: str | None = None,
) -> tuple[ModelParams, dict]:
    """Load a checkpoint; returns (params, header).

    Validates magic, version, manifest-vs-model shapes, and payload length.
    With ``expected_config_hash`` given, a differing stored hash raises
    :class:`ConfigMismatchError`.
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    header_len = struct.unpack("<Q", blob[8:16])[0]
    if len(blob) < 16 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(blob[16:16 + header_len].decode("utf-8"))
    if expected_config_hash is not None and header["config_hash"] != expected_config_hash:
        raise ConfigMismatchError(
            f"{path}: config hash mismatch: checkpoint has '{header['config_hash']}', "
            f"expected '{expected_config_hash}'")
    config = _config_from_dict(header["model_config"])
    params = ModelParams.build(config, seed=0)
    named = params.named_tensors()
    manifest = header["tensors"]
    if [m["name"] for m in manifest] != list(named.keys()):
        raise CheckpointError(f"{path}: tensor manifest does not match the model layout")
    offset = 16 + header_len
    for meta in manifest:
        name, shape = meta["name"], tuple(meta["shape"])
        tensor = named[name]
        if tensor.values.shape != shape:
            raise CheckpointError(
                f"{path}: tensor '{name}' has shape {shape}, model expects {tensor.values.shape}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        chunk = blob[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated payload at tensor '{name}'")
        tensor.values = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        tensor.grad = None
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes after payload")
    return params, header
