"""PPO training of the dispatching policy.

One iteration:

1. Draw ``trajectories`` fresh instances and roll each out under the frozen
   behaviour parameters θ_old, sampling actions. Log-probabilities and critic
   values are recorded at collection time.
2. Recompute every step under θ, form the clipped surrogate, value and entropy
   terms (returns use rewards divided by ``reward_scale``), sum them over steps
   and trajectories (in collection order) and take one Adam step per epoch.
3. Copy θ into θ_old.

Batch norm runs in ``train`` mode for both collection and update; only the
update pass folds statistics into the running averages, so θ_old is never
mutated while it is being sampled from. Greedy evaluation uses ``eval`` mode.
"""

from __future__ import annotations

import json
import logging
import math
from collections import deque
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.checkpoints import CheckpointError, CheckpointStore, TrainingSnapshot
from src.config import TrainConfig, dump_config
from src.dispatch import DispatchResult, rollout
from src.env import State, lower_bound_H, makespan, reset, step
from src.instance_io import generate_taillard
from src.models import DEFAULT_SEMANTICS, EvalReport, Instance, OpId, Semantics
from src.nn import (
    AdamState,
    NonFiniteError,
    Tensor,
    adam_step,
    backward,
    clip,
    entropy,
    exp,
    log_prob,
    minimum,
)
from src.policy import (
    ActionMode,
    Greedy,
    Observation,
    PolicyParams,
    Sample,
    forward,
    init_params,
    observe,
    select_action,
    select_index,
)

__all__ = [
    "TrainingDiverged",
    "StepRecord",
    "Trajectory",
    "Losses",
    "TrainResult",
    "CURVE_COLUMNS",
    "iteration_seeds",
    "sample_trajectory",
    "collect_trajectories",
    "returns_to_go",
    "scaled_returns",
    "advantages",
    "clipped_surrogate",
    "ppo_losses",
    "update",
    "greedy_rollout",
    "validation_set",
    "validate",
    "evaluate",
    "train",
    "read_curve",
]

logger = logging.getLogger(__name__)

CURVE_COLUMNS: tuple[str, ...] = (
    "iteration",
    "instances_seen",
    "avg_makespan_train",
    "avg_makespan_validation",
    "loss_total",
    "loss_clip",
    "loss_value",
    "loss_entropy",
)


class TrainingDiverged(RuntimeError):
    """A loss or parameter became non-finite; a diagnostic dump was written."""

    def __init__(self, message: str, dump_path: Path) -> None:
        super().__init__(f"{message} (diagnostics in {dump_path})")
        self.dump_path = dump_path


# ---------------------------------------------------------------------------
# 1. Trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepRecord:
    obs: Observation
    action: int
    old_log_prob: float
    old_value: float
    reward: int


@dataclass(frozen=True)
class Trajectory:
    instance_id: str
    num_ops: int
    h0: int
    makespan: int
    steps: tuple[StepRecord, ...]

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def rewards(self) -> list[int]:
        return [s.reward for s in self.steps]

    @property
    def complete(self) -> bool:
        return len(self.steps) == self.num_ops


def iteration_seeds(cfg: TrainConfig, iteration: int) -> list[tuple[int, int]]:
    """``(instance seed, sampling seed)`` per trajectory of *iteration*."""
    words = np.random.SeedSequence([cfg.seed, iteration]).generate_state(2 * cfg.trajectories)
    return [(int(words[2 * n]), int(words[2 * n + 1])) for n in range(cfg.trajectories)]


def sample_trajectory(
    inst: Instance,
    params: PolicyParams,
    mode: ActionMode,
    semantics: Semantics = DEFAULT_SEMANTICS,
) -> Trajectory:
    """Roll out *inst* under *params*, recording what the update pass needs."""
    s = reset(inst, semantics)
    h0 = lower_bound_H(s)
    records: list[StepRecord] = []
    while not s.done:
        obs = observe(s, params.config)
        out = forward(obs, params, mode="train", update_stats=False)
        probs = out.dist.value
        flat = select_index(probs, mode)
        s, outcome = step(s, s.op_of(flat))
        records.append(
            StepRecord(
                obs=obs,
                action=flat,
                old_log_prob=math.log(probs[flat]),
                old_value=out.value.item(),
                reward=outcome.reward,
            )
        )
    return Trajectory(inst.id, inst.num_ops, h0, makespan(s), tuple(records))


def collect_trajectories(
    params_old: PolicyParams, cfg: TrainConfig, iteration: int
) -> list[Trajectory]:
    """Sample ``cfg.trajectories`` episodes on freshly generated instances."""
    trajs = []
    for inst_seed, act_seed in iteration_seeds(cfg, iteration):
        inst = generate_taillard(cfg.num_jobs, cfg.num_machines, cfg.low, cfg.high, inst_seed)
        trajs.append(sample_trajectory(inst, params_old, Sample.seeded(act_seed), cfg.semantics))
    return trajs


# ---------------------------------------------------------------------------
# 2. Advantages and losses
# ---------------------------------------------------------------------------


def returns_to_go(rewards: Sequence[float], gamma: float) -> np.ndarray:
    """``G_t = sum_{k>=t} gamma^(k-t) r_k``."""
    out = np.zeros(len(rewards))
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def scaled_returns(traj: Trajectory, gamma: float, reward_scale: float = 1.0) -> np.ndarray:
    """Returns-to-go of the rewards divided by *reward_scale*; the critic's target."""
    return returns_to_go([r / reward_scale for r in traj.rewards], gamma)


def advantages(traj: Trajectory, gamma: float, reward_scale: float = 1.0) -> np.ndarray:
    """``G_t - v_old(s_t)`` per step, on rewards divided by *reward_scale*."""
    if not traj.complete:
        raise ValueError(
            f"trajectory {traj.instance_id!r} is incomplete: "
            f"{len(traj)} of {traj.num_ops} steps"
        )
    values = np.array([s.old_value for s in traj.steps])
    return scaled_returns(traj, gamma, reward_scale) - values


class Losses(NamedTuple):
    clip: Tensor
    value: Tensor
    entropy: Tensor
    total: Tensor

    def as_floats(self) -> dict[str, float]:
        return {
            "loss_total": self.total.item(),
            "loss_clip": self.clip.item(),
            "loss_value": self.value.item(),
            "loss_entropy": self.entropy.item(),
        }


def clipped_surrogate(ratio: Tensor, advantage: float, eps: float) -> Tensor:
    """``min(r A, clip(r, 1-eps, 1+eps) A)``."""
    return minimum(ratio * advantage, clip(ratio, 1.0 - eps, 1.0 + eps) * advantage)


def ppo_losses(
    trajs: Sequence[Trajectory],
    params: PolicyParams,
    cfg: TrainConfig,
    update_stats: bool = True,
) -> Losses:
    """Summed surrogate, value and entropy terms plus the total to minimize.

    ``total = -(c_policy * clip - c_value * value + c_entropy * entropy)``.
    """
    if not trajs:
        raise ValueError("no trajectories to learn from")
    clip_sum: Tensor | None = None
    value_sum: Tensor | None = None
    ent_sum: Tensor | None = None
    for traj in trajs:
        adv = advantages(traj, cfg.gamma, cfg.reward_scale)
        targets = scaled_returns(traj, cfg.gamma, cfg.reward_scale)
        for t, rec in enumerate(traj.steps):
            out = forward(rec.obs, params, mode="train", update_stats=update_stats)
            ratio = exp(log_prob(out.dist, rec.action) - rec.old_log_prob)
            surr = clipped_surrogate(ratio, float(adv[t]), cfg.clip_eps)
            vf = (out.value - float(targets[t])).square()
            ent = entropy(out.dist)
            clip_sum = surr if clip_sum is None else clip_sum + surr
            value_sum = vf if value_sum is None else value_sum + vf
            ent_sum = ent if ent_sum is None else ent_sum + ent
    assert clip_sum is not None and value_sum is not None and ent_sum is not None
    total = -(clip_sum * cfg.c_policy - value_sum * cfg.c_value + ent_sum * cfg.c_entropy)
    return Losses(clip_sum, value_sum, ent_sum, total)


def update(
    params: PolicyParams, opt: AdamState, trajs: Sequence[Trajectory], cfg: TrainConfig
) -> Losses:
    """``cfg.epochs`` Adam steps on the same batch; returns the last losses."""
    losses: Losses | None = None
    for _ in range(cfg.epochs):
        losses = ppo_losses(trajs, params, cfg, update_stats=True)
        backward(losses.total)
        adam_step(params.store, opt)
    assert losses is not None
    return losses


# ---------------------------------------------------------------------------
# 3. Evaluation
# ---------------------------------------------------------------------------


def greedy_rollout(
    inst: Instance, params: PolicyParams, semantics: Semantics = DEFAULT_SEMANTICS
) -> DispatchResult:
    """Deterministic episode: argmax action, running batch-norm statistics."""
    greedy = Greedy()

    def choose(s: State) -> OpId:
        probs = forward(observe(s, params.config), params, mode="eval").dist.value
        return select_action(s, probs, greedy)

    return rollout(inst, choose, semantics)


def validation_set(cfg: TrainConfig) -> list[Instance]:
    """Fixed instances drawn once per run from the training distribution."""
    return [
        generate_taillard(
            cfg.num_jobs, cfg.num_machines, cfg.low, cfg.high, cfg.validation_seed + k
        )
        for k in range(cfg.validation_size)
    ]


def validate(
    params: PolicyParams,
    instances: Sequence[Instance],
    semantics: Semantics = DEFAULT_SEMANTICS,
) -> float:
    """Average greedy makespan over *instances*."""
    return float(np.mean([greedy_rollout(i, params, semantics).makespan for i in instances]))


def evaluate(
    params: PolicyParams,
    instances: Sequence[Instance],
    refs: dict[str, float] | None = None,
    semantics: Semantics = DEFAULT_SEMANTICS,
    method: str = "policy",
) -> list[EvalReport]:
    """One report per instance; gap is omitted when no reference is known."""
    refs = refs or {}
    reports = []
    for inst in instances:
        result = greedy_rollout(inst, params, semantics)
        ref = refs.get(inst.id)
        if ref is None:
            logger.warning("no reference value for %s; gap omitted", inst.id)
        reports.append(
            EvalReport(
                instance_id=inst.id,
                method=method,
                makespan=result.makespan,
                gap=None if ref is None else (result.makespan - ref) / ref,
                time_ms=result.wall_time * 1000.0,
                semantics=semantics,
            )
        )
    return reports


# ---------------------------------------------------------------------------
# 4. Training loop
# ---------------------------------------------------------------------------


class TrainResult(NamedTuple):
    best_path: Path
    last_path: Path
    curve_path: Path
    best_validation: float
    initial_validation: float | None


def read_curve(path: Path) -> pd.DataFrame:
    """Load a curve CSV; validation cells are NaN on non-validation iterations."""
    df = pd.read_csv(path)
    missing = [c for c in CURVE_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"{path} is not a training curve: missing {', '.join(missing)}")
    return df


def _write_curve(rows: list[dict[str, Any]], path: Path) -> None:
    tmp = path.with_suffix(".csv.tmp")
    pd.DataFrame(rows, columns=list(CURVE_COLUMNS)).to_csv(tmp, index=False)
    tmp.replace(path)


def _dump_divergence(
    out_dir: Path, iteration: int, error: Exception, params: PolicyParams, trajs: list[Trajectory]
) -> Path:
    dump = {
        "iteration": iteration,
        "error": str(error),
        "param_norms": {
            name: float(np.linalg.norm(t.value)) for name, t in params.store.items()
        },
        "trajectories": [
            {"instance_id": t.instance_id, "makespan": t.makespan, "h0": t.h0} for t in trajs
        ],
    }
    path = out_dir / "diverged.json"
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(dump, indent=2), encoding="utf-8")
    tmp.replace(path)
    return path


def train(cfg: TrainConfig, resume: bool = False) -> TrainResult:
    """Run PPO for ``cfg.iterations`` iterations, writing into ``cfg.out_dir``.

    Writes ``curve.csv``, ``config.cfg``, ``best.json`` (best validation
    average) and ``last.json`` (resumable). With *resume*, training continues
    after the iteration stored in ``last.json`` and the curve is truncated to it.
    """
    out = cfg.out_dir
    store = CheckpointStore(out)
    curve_path = out / "curve.csv"
    (out / "config.cfg").write_text(dump_config(cfg), encoding="utf-8")

    validation = validation_set(cfg)
    window: deque[int] = deque(maxlen=cfg.rolling_window)
    rows: list[dict[str, Any]] = []
    best: float | None = None
    initial: float | None = None
    start = 0

    if resume and store.exists("last"):
        snapshot = store.payload("last").training
        if snapshot is None:
            raise CheckpointError(f"{store.path_for('last')} holds no training state")
        params = store.load("last", expected=cfg.policy_config())
        opt = snapshot.restore_optimizer(cfg.lr)
        start = snapshot.iteration
        window.extend(snapshot.window)
        best = snapshot.best_validation
        if curve_path.exists():
            prior = read_curve(curve_path)
            rows = prior[prior["iteration"] <= start].to_dict("records")
        store.backup("last")
        logger.info("resuming %s after iteration %d", out, start)
    else:
        params = init_params(cfg.policy_config())
        opt = AdamState.for_params(params.store, cfg.lr)
        try:
            initial = validate(params, validation, cfg.semantics)
        except NonFiniteError as e:
            dump = _dump_divergence(out, 0, e, params, [])
            raise TrainingDiverged(f"initial policy is non-finite: {e}", dump) from e
        logger.info("initial validation average %.2f", initial)
        best = initial
        store.save("best", params, validation_makespan=initial)

    params_old = params.copy()
    seen = start * cfg.trajectories

    def snapshot_now(iteration: int) -> TrainingSnapshot:
        return TrainingSnapshot.capture(
            iteration, opt, list(window), best, cfg.model_dump(mode="json")
        )

    bar = tqdm(
        range(start + 1, cfg.iterations + 1),
        initial=start,
        total=cfg.iterations,
        desc="PPO",
        disable=not cfg.progress,
    )
    for it in bar:
        trajs: list[Trajectory] = []
        val: float | None = None
        try:
            trajs = collect_trajectories(params_old, cfg, it)
            losses = update(params, opt, trajs, cfg)
            params_old.store.load_from(params.store)
            if it % cfg.validate_every == 0 or it == cfg.iterations:
                val = validate(params, validation, cfg.semantics)
        except NonFiniteError as e:
            dump = _dump_divergence(out, it, e, params, trajs)
            raise TrainingDiverged(f"training diverged at iteration {it}: {e}", dump) from e
        window.extend(t.makespan for t in trajs)
        seen += len(trajs)

        if val is not None:
            if best is None or val < best:
                best = val
                store.save("best", params, validation_makespan=val)
            logger.info("iteration %d: validation average %.2f (best %.2f)", it, val, best)

        train_avg = float(np.mean(window))
        rows.append(
            {
                "iteration": it,
                "instances_seen": seen,
                "avg_makespan_train": train_avg,
                "avg_makespan_validation": val,
                **losses.as_floats(),
            }
        )
        bar.set_postfix(train=f"{train_avg:.1f}")
        if it % cfg.log_every == 0:
            logger.info(
                "iteration %d: rolling train average %.2f, loss %.4f",
                it,
                train_avg,
                losses.total.item(),
            )
        if val is not None:
            store.save("last", params, training=snapshot_now(it))
            _write_curve(rows, curve_path)

    if start >= cfg.iterations:
        logger.info("nothing to do: %s already reached iteration %d", out, start)
    _write_curve(rows, curve_path)
    assert best is not None
    return TrainResult(
        store.path_for("best"), store.path_for("last"), curve_path, best, initial
    )
