"""Training and policy configuration.

A training config on disk is flat ``key=value`` text::

    # 6x6 desk run
    iterations = 1000
    num_jobs = 6
    num_machines = 6

Blank lines and ``#`` comments are ignored. Every key must be a
:class:`TrainConfig` field; unknown keys and bad values raise
:class:`ConfigError` naming the key.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.models import DEFAULT_SEMANTICS, AdjacencyMode, Semantics

__all__ = [
    "ConfigError",
    "PolicyConfig",
    "TrainConfig",
    "parse_config_text",
    "build_train_config",
    "load_train_config",
    "dump_config",
]


class ConfigError(ValueError):
    """A configuration file or value is invalid."""


class PolicyConfig(BaseModel):
    """Network shape. Nothing here depends on instance size."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    num_layers: int = Field(2, ge=1, description="GIN iterations K")
    hidden_gin: int = Field(64, ge=1, description="Hidden width of each GIN MLP")
    embed_dim: int = Field(64, ge=1, description="Node embedding size p")
    hidden_head: int = Field(32, ge=1, description="Hidden width of actor and critic")
    epsilon_gin: float = Field(0.0, description="Fixed self-weight epsilon in the GIN update")
    feature_scale: float = Field(1000.0, gt=0, description="Divisor for completion bounds")
    adjacency: AdjacencyMode = AdjacencyMode.ADDING_ARC
    init_seed: int = Field(0, ge=0, description="Seed for Xavier initialization")


_POLICY_FIELDS = tuple(PolicyConfig.model_fields)


class TrainConfig(BaseModel):
    """Everything one training run needs; defaults reproduce the published setup."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    # PPO
    iterations: int = Field(10_000, ge=1, description="Training iterations U")
    trajectories: int = Field(4, ge=1, description="Trajectories per iteration N")
    gamma: float = Field(1.0, gt=0, le=1)
    epochs: int = Field(1, ge=1, description="Update passes per batch")
    clip_eps: float = Field(0.2, gt=0)
    c_policy: float = Field(2.0, ge=0)
    c_value: float = Field(1.0, ge=0)
    c_entropy: float = Field(0.01, ge=0)
    lr: float = Field(2e-5, gt=0)
    reward_scale: float = Field(
        1000.0, gt=0, description="Rewards are divided by this before returns are formed"
    )

    # Instance distribution
    num_jobs: int = Field(6, ge=1)
    num_machines: int = Field(6, ge=1)
    low: int = Field(1, ge=1, description="Smallest duration")
    high: int = Field(99, ge=1, description="Largest duration")
    semantics: Semantics = DEFAULT_SEMANTICS

    # Validation and logging
    validation_size: int = Field(100, ge=1)
    validation_seed: int = Field(10_000, ge=0)
    validate_every: int = Field(10, ge=1)
    rolling_window: int = Field(200, ge=1, description="Training instances in the rolling mean")
    log_every: int = Field(10, ge=1)
    progress: bool = True
    seed: int = Field(0, ge=0)
    out_dir: Path = Path("runs/default")

    # Policy (see PolicyConfig)
    num_layers: int = Field(2, ge=1)
    hidden_gin: int = Field(64, ge=1)
    embed_dim: int = Field(64, ge=1)
    hidden_head: int = Field(32, ge=1)
    epsilon_gin: float = 0.0
    feature_scale: float = Field(1000.0, gt=0)
    adjacency: AdjacencyMode = AdjacencyMode.ADDING_ARC
    init_seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _duration_range(self) -> TrainConfig:
        if self.low > self.high:
            raise ValueError(f"low ({self.low}) must not exceed high ({self.high})")
        return self

    def policy_config(self) -> PolicyConfig:
        return PolicyConfig(**{name: getattr(self, name) for name in _POLICY_FIELDS})


def parse_config_text(text: str) -> dict[str, str]:
    """Split flat ``key=value`` text into a dict, rejecting malformed lines."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def _describe(err: ValidationError, raw: dict[str, Any]) -> str:
    parts = []
    for e in err.errors():
        key = ".".join(str(x) for x in e["loc"]) or "config"
        if e["type"] == "extra_forbidden":
            parts.append(f"{key}: unknown key")
        elif key in raw:
            parts.append(f"{key}: {e['msg']} (got {raw[key]!r})")
        else:
            parts.append(f"{key}: {e['msg']}")
    return "; ".join(parts)


def build_train_config(raw: dict[str, Any]) -> TrainConfig:
    """Validate a key/value mapping, converting errors to :class:`ConfigError`."""
    try:
        return TrainConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(_describe(e, raw)) from None


def load_train_config(path: Path) -> TrainConfig:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    return build_train_config(parse_config_text(text))


def dump_config(cfg: TrainConfig) -> str:
    """Render *cfg* back to ``key=value`` text that :func:`load_train_config` accepts."""
    lines = []
    for name, value in cfg.model_dump(mode="json").items():
        if isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"
