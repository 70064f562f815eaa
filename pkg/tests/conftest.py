"""Shared pytest fixtures for the job-shop dispatch tests."""

from __future__ import annotations

from pathlib import Path

import pytest

from src.config import PolicyConfig, TrainConfig
from src.models import Instance

FIXTURES_DIR = Path(__file__).parent / "fixtures"


@pytest.fixture
def tiny() -> Instance:
    """Two jobs on two machines; SPT and the optimum both reach makespan 7.

    Job 0: (M0, 3) -> (M1, 2)
    Job 1: (M1, 2) -> (M0, 4)
    """
    return Instance(
        num_jobs=2,
        num_machines=2,
        routes=((0, 1), (1, 0)),
        proc_times=((3, 2), (2, 4)),
        id="tiny",
    )


@pytest.fixture
def push_instance() -> Instance:
    """Dispatching A0, A1, B0, B1 places B1 ahead of A1 under push only.

    Job A: (M0, 7) -> (M1, 3)
    Job B: (M2, 5) -> (M1, 6)
    """
    return Instance(
        num_jobs=2,
        num_machines=3,
        routes=((0, 1), (2, 1)),
        proc_times=((7, 3), (5, 6)),
        id="push",
    )


@pytest.fixture
def tiny_path() -> Path:
    return FIXTURES_DIR / "tiny.txt"


@pytest.fixture
def tiny_taillard_path() -> Path:
    return FIXTURES_DIR / "tiny_taillard.txt"


@pytest.fixture
def tiny_refs_path() -> Path:
    return FIXTURES_DIR / "tiny_refs.txt"


@pytest.fixture
def tiny_train_cfg_path() -> Path:
    return FIXTURES_DIR / "tiny_train.cfg"


@pytest.fixture
def small_policy_config() -> PolicyConfig:
    """Narrow network so forward and backward passes stay fast."""
    return PolicyConfig(hidden_gin=8, embed_dim=8, hidden_head=6)


@pytest.fixture
def small_train_config(tmp_path: Path) -> TrainConfig:
    """Two-iteration run on 3x3 instances writing into a temp directory."""
    return TrainConfig(
        iterations=2,
        trajectories=2,
        num_jobs=3,
        num_machines=3,
        validation_size=2,
        validate_every=1,
        log_every=1,
        progress=False,
        hidden_gin=8,
        embed_dim=8,
        hidden_head=6,
        out_dir=tmp_path / "run",
    )
