"""Size-agnostic GIN policy: encoder, actor head and critic head.

Parameter shapes depend only on :class:`~src.config.PolicyConfig`, so one set
of weights runs on any instance size. Parameter names::

    gin.<k>.w1 / b1 / bn1.gamma / bn1.beta    first layer of GIN MLP k
    gin.<k>.w2 / b2 / bn2.gamma / bn2.beta    second layer of GIN MLP k
    actor.w1 .. actor.b3                      2p -> h -> h -> 1
    critic.w1 .. critic.b3                    p -> h -> h -> 1

Batch-norm running statistics live under ``gin.<k>.bn1`` / ``gin.<k>.bn2``.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from src.config import PolicyConfig
from src.env import State, adjacency, eligible_actions, node_features
from src.models import OpId
from src.nn import (
    Mode,
    ParamStore,
    Tensor,
    batch_norm,
    concat,
    constant,
    dense,
    mean_pool,
    neighbor_sum,
    relu,
    softmax_masked,
    xavier_uniform,
)

__all__ = [
    "PolicyParams",
    "Greedy",
    "Sample",
    "ActionMode",
    "Observation",
    "PolicyOutput",
    "init_params",
    "observe",
    "embed",
    "actor_distribution",
    "critic_value",
    "forward",
    "select_index",
    "select_action",
]


@dataclass
class PolicyParams:
    config: PolicyConfig
    store: ParamStore

    def copy(self) -> PolicyParams:
        return PolicyParams(self.config, self.store.copy())


@dataclass(frozen=True)
class Greedy:
    """Pick the most probable operation."""


@dataclass(frozen=True)
class Sample:
    """Draw by inverse CDF from *rng*."""

    rng: np.random.Generator

    @classmethod
    def seeded(cls, seed: int) -> Sample:
        return cls(np.random.default_rng(seed))


ActionMode = Greedy | Sample


class Observation(NamedTuple):
    """What the network sees of a state."""

    features: np.ndarray
    adjacency: list[list[int]]
    mask: np.ndarray


class PolicyOutput(NamedTuple):
    dist: Tensor
    value: Tensor


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


def _add_bn(store: ParamStore, prefix: str, dim: int) -> None:
    store.add(f"{prefix}.gamma", np.ones(dim))
    store.add(f"{prefix}.beta", np.zeros(dim))
    store.add_stats(prefix, dim)


def _add_head(
    store: ParamStore, rng: np.random.Generator, name: str, n_in: int, hidden: int
) -> None:
    widths = (n_in, hidden, hidden, 1)
    for i in range(3):
        store.add(f"{name}.w{i + 1}", xavier_uniform(rng, widths[i], widths[i + 1]))
        store.add(f"{name}.b{i + 1}", np.zeros(widths[i + 1]))


def init_params(cfg: PolicyConfig) -> PolicyParams:
    """Xavier-uniform weights, zero biases, unit batch-norm scale."""
    rng = np.random.default_rng(cfg.init_seed)
    store = ParamStore()
    n_in = 2
    for k in range(cfg.num_layers):
        store.add(f"gin.{k}.w1", xavier_uniform(rng, n_in, cfg.hidden_gin))
        store.add(f"gin.{k}.b1", np.zeros(cfg.hidden_gin))
        _add_bn(store, f"gin.{k}.bn1", cfg.hidden_gin)
        store.add(f"gin.{k}.w2", xavier_uniform(rng, cfg.hidden_gin, cfg.embed_dim))
        store.add(f"gin.{k}.b2", np.zeros(cfg.embed_dim))
        _add_bn(store, f"gin.{k}.bn2", cfg.embed_dim)
        n_in = cfg.embed_dim
    _add_head(store, rng, "actor", 2 * cfg.embed_dim, cfg.hidden_head)
    _add_head(store, rng, "critic", cfg.embed_dim, cfg.hidden_head)
    return PolicyParams(cfg, store)


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------


def observe(s: State, cfg: PolicyConfig) -> Observation:
    mask = np.zeros(s.layout.num_ops, dtype=bool)
    for op in eligible_actions(s):
        mask[s.flat(op)] = True
    return Observation(
        node_features(s, cfg.feature_scale),
        adjacency(s, cfg.adjacency),
        mask,
    )


def _bn(params: PolicyParams, x: Tensor, prefix: str, mode: Mode, update_stats: bool) -> Tensor:
    st = params.store
    return batch_norm(
        x, st[f"{prefix}.gamma"], st[f"{prefix}.beta"], st.stats(prefix), mode, update_stats
    )


def embed(
    features: np.ndarray,
    adj: Sequence[Sequence[int]],
    params: PolicyParams,
    mode: Mode = "eval",
    update_stats: bool = False,
) -> tuple[Tensor, Tensor]:
    """Node embeddings (|O| x p) and their mean (p,)."""
    st = params.store
    eps = params.config.epsilon_gin
    h = constant(features)
    for k in range(params.config.num_layers):
        agg = neighbor_sum(h, adj)
        agg = agg + h if eps == 0.0 else agg + h * (1.0 + eps)
        x = dense(agg, st[f"gin.{k}.w1"], st[f"gin.{k}.b1"])
        x = relu(_bn(params, x, f"gin.{k}.bn1", mode, update_stats))
        x = dense(x, st[f"gin.{k}.w2"], st[f"gin.{k}.b2"])
        h = relu(_bn(params, x, f"gin.{k}.bn2", mode, update_stats))
    return h, mean_pool(h)


def _head(params: PolicyParams, name: str, x: Tensor) -> Tensor:
    st = params.store
    x = relu(dense(x, st[f"{name}.w1"], st[f"{name}.b1"]))
    x = relu(dense(x, st[f"{name}.w2"], st[f"{name}.b2"]))
    return dense(x, st[f"{name}.w3"], st[f"{name}.b3"])


def actor_distribution(
    nodes: Tensor, graph: Tensor, mask: np.ndarray, params: PolicyParams
) -> Tensor:
    """Probability over all flat operations; exactly zero where *mask* is false."""
    scores = _head(params, "actor", concat(nodes, graph))
    return softmax_masked(scores.reshape(nodes.shape[0]), mask)


def critic_value(graph: Tensor, params: PolicyParams) -> Tensor:
    return _head(params, "critic", graph.reshape(1, graph.shape[0])).reshape()


def forward(
    obs: Observation,
    params: PolicyParams,
    mode: Mode = "eval",
    update_stats: bool = False,
) -> PolicyOutput:
    nodes, graph = embed(obs.features, obs.adjacency, params, mode, update_stats)
    return PolicyOutput(
        actor_distribution(nodes, graph, obs.mask, params),
        critic_value(graph, params),
    )


# ---------------------------------------------------------------------------
# Action selection
# ---------------------------------------------------------------------------


def select_index(probs: np.ndarray, mode: ActionMode) -> int:
    """Flat index chosen from *probs*.

    Greedy ties resolve to the lowest flat index, which is the lowest job
    index because flat order is job-major.
    """
    if isinstance(mode, Greedy):
        return int(np.argmax(probs))
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, mode.rng.random(), side="right"))
    if idx >= len(probs):
        idx = int(np.flatnonzero(probs > 0)[-1])
    return idx


def select_action(s: State, probs: np.ndarray, mode: ActionMode) -> OpId:
    return s.op_of(select_index(probs, mode))
