"""Run configuration: a flat ``key = value`` text file with typed defaults."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

OCCLUSION_LEVELS = (0.0, 0.25, 0.5)
OPTIMIZERS = ("adam", "sgd")
LR_DECAYS = ("cosine", "constant")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # data
    n_train: int = 16
    n_eval: int = 16
    occlusion_level: float = 0.25
    two_hand_fraction: float = 0.5
    # model
    channels: int = 64
    d_model: int = 256
    ffn_dim: int = 256
    enc_layers: int = 3
    dec_layers: int = 3
    heads: int = 1
    num_queries: int = 64
    sigma: float = 1.5
    gamma: float = 3.0
    peak_threshold: float = 0.5
    max_peaks: int = 64
    max_background_tokens: int = 8
    pose_scale: float = 100.0
    object_depth_prior: float = 450.0
    # loss weights
    w_heatmap: float = 1.0
    w_joints: float = 1.0
    w_translation: float = 1.0
    w_hand_pose: float = 1.0
    w_object_pose: float = 1.0
    # optimisation
    optimizer: str = "adam"
    step_size: float = 1e-3
    transformer_step_size: float = 3e-4
    clip_norm: float = 10.0
    warmup: int = 100
    lr_decay: str = "cosine"
    iterations: int = 200
    # ablation
    use_ciet: bool = True
    use_sigmoid_attention: bool = True
    # evaluation
    auc_max: float = 50.0
    auc_steps: int = 100

    def __post_init__(self):
        if self.occlusion_level not in OCCLUSION_LEVELS:
            raise ConfigError(f"occlusion_level must be one of {OCCLUSION_LEVELS}, got {self.occlusion_level}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.lr_decay not in LR_DECAYS:
            raise ConfigError(f"lr_decay must be one of {LR_DECAYS}, got {self.lr_decay!r}")
        if self.num_queries < 44:
            raise ConfigError("num_queries must be at least 44 (42 joint slots, translation, object)")
        if self.d_model % self.heads:
            raise ConfigError("d_model must be divisible by heads")
        if self.d_model % 4:
            raise ConfigError("d_model must be divisible by 4 for the 2D positional encoding")
        if not 0.0 <= self.two_hand_fraction <= 1.0:
            raise ConfigError("two_hand_fraction must lie in [0, 1]")
        for name in ("n_train", "n_eval", "iterations", "max_background_tokens", "warmup"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.gamma <= 0 or self.sigma <= 0 or self.step_size <= 0 or self.transformer_step_size <= 0:
            raise ConfigError("gamma, sigma and the step sizes must be positive")

    def replace(self, **changes) -> "RunConfig":
        unknown = set(changes) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        return cls().replace(**{k: _coerce(k, v) for k, v in values.items()})

    def model_signature(self) -> dict:
        """Fields that fix parameter shapes and forward semantics."""
        keys = ("channels", "d_model", "ffn_dim", "enc_layers", "dec_layers", "heads",
                "num_queries", "use_ciet", "use_sigmoid_attention", "pose_scale",
                "object_depth_prior")
        return {k: getattr(self, k) for k in keys}

    def dumps(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key: str, value):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key: {key!r}")
    kind = _TYPES[key]
    if not isinstance(value, str):
        if kind == "float" and isinstance(value, int) and not isinstance(value, bool):
            return float(value)
        return value
    text = value.strip()
    try:
        if kind == "bool":
            lowered = text.lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key} ({kind}): {value!r}") from None
    return text


def parse_config(text: str) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return RunConfig.from_dict(values)


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text())
