"""Configuration records and JSON run-config loading."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError

# special token ids; payload tokens start at NUM_SPECIAL
PAD, BOS, EOS = 0, 1, 2
NUM_SPECIAL = 3


@dataclass
class ModelConfig:
    d_model: int = 32
    n_heads: int = 2
    d_ff: int = 128
    vocab_size: int = 16 + NUM_SPECIAL
    n_enc: int = 6
    n_dec: int = 6
    max_len: int = 16
    dtype: str = "f32"

    def __post_init__(self):
        for name in ("d_model", "n_heads", "d_ff", "vocab_size", "n_enc", "n_dec", "max_len"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.max_len < 2:
            raise ConfigError("max_len must be >= 2")
        if self.vocab_size <= NUM_SPECIAL:
            raise ConfigError("vocab_size must leave room for payload tokens")
        if self.dtype not in ("f32", "f64"):
            raise ConfigError(f"dtype must be 'f32' or 'f64', got {self.dtype!r}")


@dataclass
class TrainConfig:
    learning_rate: float = 2e-3
    warmup_ratio: float = 0.05
    label_smoothing: float = 0.1
    batch_size: int = 64
    total_steps: int = 3000
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    grad_clip: Optional[float] = 1.0
    seed: int = 0
    sampling_mode: str = "random-hybrid"
    curriculum_enabled: bool = True
    kd_enabled: bool = True
    finetune_steps: Optional[int] = None  # None -> total_steps // 8
    log_every: int = 1

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ConfigError("warmup_ratio must be in [0, 1)")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label_smoothing must be in [0, 1)")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.sampling_mode not in ("random-hybrid", "inference-configs-only"):
            raise ConfigError(f"unknown sampling_mode {self.sampling_mode!r}")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")

    @property
    def resolved_finetune_steps(self) -> int:
        return self.total_steps // 8 if self.finetune_steps is None else self.finetune_steps


@dataclass
class TaskSpec:
    kind: str = "copy"
    vocab_size: int = 16
    len_min: int = 4
    len_max: int = 12
    n_train: int = 20000
    n_valid: int = 1000
    n_test: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("copy", "reverse", "sort"):
            raise ConfigError(f"unknown task kind {self.kind!r}")
        if self.vocab_size < 1:
            raise ConfigError("task vocab_size must be >= 1")
        if not 1 <= self.len_min <= self.len_max:
            raise ConfigError("need 1 <= len_min <= len_max")
        if min(self.n_train, self.n_valid, self.n_test) < 0:
            raise ConfigError("split sizes must be nonnegative")


@dataclass
class ScheduleConfig:
    """Replacing-probability ramp and granularity waypoints.

    ``waypoints`` maps a stack name ("enc"/"dec") to a list of probability
    vectors; when absent the fine-to-coarse default is derived from the
    stack's granularity set.
    """
    p0: float = 0.5
    p_ramp_end: float = 0.5
    waypoints: Optional[dict] = None

    def __post_init__(self):
        if not 0.0 <= self.p0 <= 1.0:
            raise ConfigError("p0 must be in [0, 1]")
        if not 0.0 <= self.p_ramp_end <= 1.0:
            raise ConfigError("p_ramp_end must be in [0, 1]")


@dataclass
class CostConfig:
    a: float = 1.0
    b: float = 1.0
    c: float = 0.0
    cached: bool = False
    src_len: int = 10
    gen_len: int = 10


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    modular: TrainConfig = field(
        default_factory=lambda: TrainConfig(learning_rate=1e-3, total_steps=20000, batch_size=32))
    task: TaskSpec = field(default_factory=TaskSpec)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    cost: CostConfig = field(default_factory=CostConfig)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for sec in ("train", "modular"):
            d[sec]["adam_betas"] = list(d[sec]["adam_betas"])
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "modular": TrainConfig,
    "task": TaskSpec,
    "schedule": ScheduleConfig,
    "cost": CostConfig,
}


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def run_config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("run config must be a JSON object")
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    for name in _SECTIONS:
        if not isinstance(data.get(name, {}), dict):
            raise ConfigError(f"{name}: expected an object")
    defaults = RunConfig().to_dict()
    parts = {name: _build(cls, {**defaults[name], **data.get(name, {})}, name)
             for name, cls in _SECTIONS.items()}
    cfg = RunConfig(**parts)
    if cfg.task.len_max > cfg.model.max_len - 2:
        raise ConfigError(
            f"task.len_max={cfg.task.len_max} exceeds model.max_len - 2 = {cfg.model.max_len - 2}")
    if cfg.task.vocab_size + 3 > cfg.model.vocab_size:
        raise ConfigError("model.vocab_size must be >= task.vocab_size + 3")
    return cfg


def read_json_config(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: run config must be a JSON object")
    return data


def merge_config_dicts(base: dict, override: dict) -> dict:
    """Section-wise overlay of ``override`` onto ``base``."""
    out = {k: dict(v) if isinstance(v, dict) else v for k, v in base.items()}
    for sec, vals in override.items():
        if isinstance(vals, dict) and isinstance(out.get(sec), dict):
            out[sec].update(vals)
        else:
            out[sec] = vals
    return out


def load_run_config(path=None, base: Optional[dict] = None) -> RunConfig:
    """Parse a JSON run config; every field is optional."""
    data = {} if path is None else read_json_config(path)
    if base is not None:
        data = merge_config_dicts(base, data)
    return run_config_from_dict(data)
