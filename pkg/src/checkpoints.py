"""Policy checkpoints: versioned JSON with atomic writes.

A checkpoint file holds ``{version, config, tensors, validation_makespan,
training}``. ``tensors`` maps each parameter (and batch-norm statistic) to
``{shape, values}``; ``training`` is present only on resumable checkpoints and
carries the iteration counter, Adam moments and the rolling window.
"""

from __future__ import annotations

import json
import logging
import shutil
from datetime import UTC, datetime
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, Field, ValidationError, model_validator

from src.config import PolicyConfig
from src.nn import AdamState, ShapeError
from src.policy import PolicyParams, init_params

__all__ = [
    "CHECKPOINT_VERSION",
    "CheckpointError",
    "TensorRecord",
    "TrainingSnapshot",
    "CheckpointPayload",
    "CheckpointStore",
    "save_checkpoint",
    "load_payload",
    "load_checkpoint",
]

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """A checkpoint is missing, corrupt, or does not match the expected network."""


class TensorRecord(BaseModel):
    shape: list[int]
    values: list[float]

    @model_validator(mode="after")
    def _count_matches_shape(self) -> TensorRecord:
        expected = int(np.prod(self.shape)) if self.shape else 1
        if len(self.values) != expected:
            raise ValueError(f"{len(self.values)} values for shape {self.shape}")
        return self

    @classmethod
    def of(cls, array: np.ndarray) -> TensorRecord:
        return cls(shape=list(array.shape), values=array.reshape(-1).tolist())

    def to_array(self) -> np.ndarray:
        return np.array(self.values, dtype=np.float64).reshape(self.shape)


class TrainingSnapshot(BaseModel):
    """State needed to continue a training run where it stopped."""

    iteration: int = Field(..., ge=0, description="Iterations completed")
    adam_t: int = Field(..., ge=0)
    adam_m: dict[str, TensorRecord]
    adam_v: dict[str, TensorRecord]
    window: list[int] = Field(default_factory=list, description="Recent training makespans")
    best_validation: float | None = None
    train_config: dict[str, Any] = Field(default_factory=dict)

    @classmethod
    def capture(
        cls,
        iteration: int,
        opt: AdamState,
        window: list[int],
        best_validation: float | None,
        train_config: dict[str, Any],
    ) -> TrainingSnapshot:
        return cls(
            iteration=iteration,
            adam_t=opt.t,
            adam_m={k: TensorRecord.of(v) for k, v in opt.m.items()},
            adam_v={k: TensorRecord.of(v) for k, v in opt.v.items()},
            window=list(window),
            best_validation=best_validation,
            train_config=train_config,
        )

    def restore_optimizer(self, lr: float) -> AdamState:
        return AdamState(
            lr=lr,
            t=self.adam_t,
            m={k: r.to_array() for k, r in self.adam_m.items()},
            v={k: r.to_array() for k, r in self.adam_v.items()},
        )


class CheckpointPayload(BaseModel):
    version: int
    config: PolicyConfig
    tensors: dict[str, TensorRecord]
    validation_makespan: float | None = None
    training: TrainingSnapshot | None = None


# ---------------------------------------------------------------------------
# File-level API
# ---------------------------------------------------------------------------


def save_checkpoint(
    params: PolicyParams,
    path: Path,
    validation_makespan: float | None = None,
    training: TrainingSnapshot | None = None,
) -> Path:
    """Write *params* to *path* atomically (write .tmp then rename)."""
    payload = CheckpointPayload(
        version=CHECKPOINT_VERSION,
        config=params.config,
        tensors={k: TensorRecord.of(v) for k, v in params.store.to_arrays().items()},
        validation_makespan=validation_makespan,
        training=training,
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    # json.dumps writes floats with repr, which round-trips exactly.
    tmp.write_text(json.dumps(payload.model_dump(mode="json")), encoding="utf-8")
    tmp.replace(path)
    logger.debug("saved checkpoint %s", path)
    return path


def load_payload(path: Path) -> CheckpointPayload:
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        payload = CheckpointPayload.model_validate(raw)
    except (OSError, json.JSONDecodeError, ValidationError) as e:
        raise CheckpointError(f"corrupt checkpoint {path}: {e}") from None
    if payload.version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has version {payload.version}, expected {CHECKPOINT_VERSION}"
        )
    return payload


def _config_diff(stored: PolicyConfig, expected: PolicyConfig) -> list[str]:
    a, b = stored.model_dump(), expected.model_dump()
    return [f"{k}: stored {a[k]!r}, expected {b[k]!r}" for k in a if a[k] != b[k]]


def load_checkpoint(path: Path, expected: PolicyConfig | None = None) -> PolicyParams:
    """Load policy parameters; shapes are checked against the stored config.

    When *expected* is given the stored config must equal it.
    """
    payload = load_payload(path)
    if expected is not None:
        diff = _config_diff(payload.config, expected)
        if diff:
            raise CheckpointError(f"checkpoint config mismatch in {path}: {'; '.join(diff)}")
    params = init_params(payload.config)
    try:
        params.store.assign_arrays({k: r.to_array() for k, r in payload.tensors.items()})
    except ShapeError as e:
        raise CheckpointError(f"checkpoint {path} does not fit its config: {e}") from None
    return params


# ---------------------------------------------------------------------------
# Run directory
# ---------------------------------------------------------------------------


class CheckpointStore:
    """Named checkpoints of one training run.

    Each checkpoint is stored as ``{run_dir}/{name}.json``; training writes
    ``best`` (best validation average) and ``last`` (resumable).
    """

    def __init__(self, run_dir: Path) -> None:
        self.run_dir = run_dir
        self.run_dir.mkdir(parents=True, exist_ok=True)

    def path_for(self, name: str) -> Path:
        return self.run_dir / f"{name}.json"

    def exists(self, name: str) -> bool:
        return self.path_for(name).exists()

    def list_checkpoints(self) -> list[str]:
        """Names of the readable checkpoints, sorted."""
        names = []
        for p in sorted(self.run_dir.glob("*.json")):
            try:
                load_payload(p)
            except CheckpointError:
                # Skip corrupt files, don't crash
                continue
            names.append(p.stem)
        return names

    def save(
        self,
        name: str,
        params: PolicyParams,
        validation_makespan: float | None = None,
        training: TrainingSnapshot | None = None,
    ) -> Path:
        return save_checkpoint(params, self.path_for(name), validation_makespan, training)

    def load(self, name: str, expected: PolicyConfig | None = None) -> PolicyParams:
        return load_checkpoint(self.path_for(name), expected)

    def payload(self, name: str) -> CheckpointPayload:
        return load_payload(self.path_for(name))

    def backup(self, name: str) -> Path | None:
        """Copy a checkpoint to ``backups/`` with a timestamp; None if absent."""
        path = self.path_for(name)
        if not path.exists():
            return None
        ts = datetime.now(UTC).strftime("%Y%m%d_%H%M%S")
        backup_dir = self.run_dir / "backups"
        backup_dir.mkdir(exist_ok=True)
        backup_path = backup_dir / f"{name}_{ts}.json"
        shutil.copy2(path, backup_path)
        return backup_path
