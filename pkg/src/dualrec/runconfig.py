"""Flat key=value run configuration with defaults, overrides, and hashing.

Precedence is defaults < config file < command-line flags.  Unknown keys are
rejected.  The effective configuration is echoed into the output directory,
and feeding that echo back reproduces the run.

``config_hash`` covers every field that determines training artifacts; pure
path fields (input, data_dir, out) and the evaluation centricity are
excluded, so moving a run between directories keeps its identity.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .training import TrainConfig


class ConfigError(ValueError):
    """Bad config file contents or unknown keys."""


@dataclass
class RunConfig:
    """Everything a command needs: data recipe plus TrainConfig fields."""

    input: str = ""
    data_dir: str = ""
    out: str = "out"
    centricity: str = "both"
    n_core: int = 10
    train_end: int = 0
    valid_end: int = 0
    embed_dim: int = 32
    batch_size: int = 200
    lr: float = 0.001
    max_seq_len: int = 20
    epochs_max: int = 50
    patience: int = 5
    lambda_e: float = 1e-4
    lambda_p: float = 1e-4
    lambda_reg: float = 1e-5
    backbone: str = "gru"
    static_tower_input: str = "embeddings"
    aux_on_negatives: bool = True
    k_neg_train: int = 1
    k_neg_eval: int = 49
    ndcg_k: int = 10
    seed: int = 0
    mlp_hidden: str = "100,64"

    def train_config(self) -> TrainConfig:
        hidden = tuple(int(x) for x in self.mlp_hidden.split(","))
        if len(hidden) != 2:
            raise ConfigError(f"mlp_hidden must be two comma-separated sizes, got '{self.mlp_hidden}'")
        return TrainConfig(
            embed_dim=self.embed_dim,
            batch_size=self.batch_size,
            lr=self.lr,
            max_seq_len=self.max_seq_len,
            epochs_max=self.epochs_max,
            patience=self.patience,
            lambda_e=self.lambda_e,
            lambda_p=self.lambda_p,
            lambda_reg=self.lambda_reg,
            backbone=self.backbone,
            static_tower_input=self.static_tower_input,
            aux_on_negatives=self.aux_on_negatives,
            k_neg_train=self.k_neg_train,
            k_neg_eval=self.k_neg_eval,
            ndcg_k=self.ndcg_k,
            seed=self.seed,
            mlp_hidden=hidden,
        )


_UNHASHED = {"input", "data_dir", "out", "centricity"}
_FIELDS = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELDS[key]
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"key '{key}': expected a boolean, got '{raw}'")
    if kind == "int":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"key '{key}': expected an integer, got '{raw}'") from None
    if kind == "float":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"key '{key}': expected a number, got '{raw}'") from None
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse key=value lines; blank lines and '#' comments are ignored."""
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}: line {lineno}: expected key=value, got '{stripped}'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"{source}: line {lineno}: unknown key '{key}'")
        out[key] = _parse_value(key, raw)
    return out


def load_run_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the config file, then non-None overrides."""
    values: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        values.update(parse_config_text(p.read_text(encoding="utf-8"), source=str(p)))
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key '{key}'")
        values[key] = _parse_value(key, str(val)) if isinstance(val, str) else val
    return RunConfig(**values)


def serialize_run_config(config: RunConfig) -> str:
    lines = [f"{key}={_format_value(val)}" for key, val in sorted(asdict(config).items())]
    return "\n".join(lines) + "\n"


def _format_value(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return repr(val)
    return str(val)


def config_hash(config: RunConfig) -> str:
    """sha256 over the canonical serialization of the hashed fields."""
    payload = "\n".join(
        f"{key}={_format_value(val)}"
        for key, val in sorted(asdict(config).items())
        if key not in _UNHASHED
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]
