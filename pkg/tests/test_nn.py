"""Tests for the autodiff core, layers, parameter store and Adam."""

from __future__ import annotations

import math
from collections.abc import Callable

import numpy as np
import pytest

from src.nn import (
    BN_MOMENTUM,
    AdamState,
    BatchNormStats,
    Mode,
    NonFiniteError,
    ParamStore,
    ShapeError,
    Tensor,
    adam_step,
    batch_norm,
    clip,
    concat,
    constant,
    dense,
    entropy,
    exp,
    finite_difference,
    log_prob,
    mean_pool,
    minimum,
    neighbor_sum,
    relative_error,
    relu,
    softmax_masked,
    xavier_uniform,
)


def param(value: object) -> Tensor:
    return Tensor(value, requires_grad=True)


def fd_error(loss: Callable[[], Tensor], t: Tensor) -> float:
    t.grad = None
    loss().backward()
    assert t.grad is not None
    return relative_error(t.grad, finite_difference(loss, t))


class TestTape:
    def test_broadcast_add_sums_gradient(self) -> None:
        x = param(np.ones((3, 2)))
        b = param([1.0, 2.0])
        (x + b).sum().backward()
        assert b.grad is not None
        assert b.grad.tolist() == [3.0, 3.0]

    def test_mul_gradients(self) -> None:
        a = param([2.0, 3.0])
        b = param([5.0, 7.0])
        (a * b).sum().backward()
        assert a.grad is not None and b.grad is not None
        assert a.grad.tolist() == [5.0, 7.0]
        assert b.grad.tolist() == [2.0, 3.0]

    def test_reused_node_accumulates(self) -> None:
        x = param([3.0])
        (x * x).sum().backward()
        assert x.grad is not None
        assert x.grad.tolist() == [6.0]

    def test_repeated_backward_accumulates(self) -> None:
        x = param([1.0, 2.0])
        x.square().sum().backward()
        x.square().sum().backward()
        assert x.grad is not None
        assert x.grad.tolist() == [4.0, 8.0]

    def test_scalar_arithmetic(self) -> None:
        x = param([1.0, -2.0])
        y = (1.0 - x * 2.0 + 3.0).mean()
        assert y.item() == pytest.approx(5.0)
        y.backward()
        assert x.grad is not None
        assert x.grad.tolist() == [-1.0, -1.0]

    def test_non_scalar_loss_rejected(self) -> None:
        with pytest.raises(ShapeError, match="scalar"):
            param([1.0, 2.0]).backward()

    def test_constant_loss_rejected(self) -> None:
        with pytest.raises(RuntimeError, match="no trainable inputs"):
            constant([1.0]).sum().backward()

    def test_constants_record_nothing(self) -> None:
        y = constant([1.0]) + constant([2.0])
        assert not y.requires_grad

    def test_broadcast_mismatch(self) -> None:
        with pytest.raises(ShapeError, match="broadcast"):
            param(np.ones(3)) + param(np.ones(2))

    def test_reshape(self) -> None:
        x = param([[1.0, 2.0]])
        assert x.reshape(2).shape == (2,)
        assert x.reshape(1, 1, 2).shape == (1, 1, 2)
        with pytest.raises(ShapeError):
            x.reshape(3)

    def test_non_finite_output_detected(self) -> None:
        dist = softmax_masked(param([0.0, 1.0]), np.array([True, False]))
        with pytest.raises(NonFiniteError, match="log_prob"):
            log_prob(dist, 1)


class TestLayers:
    def test_dense_forward_and_gradients(self) -> None:
        rng = np.random.default_rng(0)
        x = param(rng.normal(size=(4, 3)))
        w = param(rng.normal(size=(3, 2)))
        b = param(rng.normal(size=2))
        weights = constant(rng.normal(size=(4, 2)))
        out = dense(x, w, b)
        assert out.value == pytest.approx(x.value @ w.value + b.value)

        def loss() -> Tensor:
            return (dense(x, w, b) * weights).sum()

        for t in (x, w, b):
            assert fd_error(loss, t) < 1e-7

    def test_dense_shape_checks(self) -> None:
        with pytest.raises(ShapeError, match="incompatible"):
            dense(param(np.ones((2, 3))), param(np.ones((2, 2))), param(np.ones(2)))
        with pytest.raises(ShapeError, match="bias"):
            dense(param(np.ones((2, 3))), param(np.ones((3, 2))), param(np.ones(3)))

    def test_relu(self) -> None:
        x = param([-1.0, 0.0, 2.0])
        y = relu(x)
        assert y.value.tolist() == [0.0, 0.0, 2.0]
        y.sum().backward()
        assert x.grad is not None
        assert x.grad.tolist() == [0.0, 0.0, 1.0]

    def test_exp(self) -> None:
        x = param([0.0, 1.0])
        exp(x).sum().backward()
        assert x.grad is not None
        assert x.grad == pytest.approx([1.0, math.e])

    def test_clip_passes_gradient_inside(self) -> None:
        x = param([0.5, 1.0, 1.5])
        y = clip(x, 0.8, 1.2)
        assert y.value.tolist() == [0.8, 1.0, 1.2]
        y.sum().backward()
        assert x.grad is not None
        assert x.grad.tolist() == [0.0, 1.0, 0.0]

    def test_minimum_ties_go_to_first(self) -> None:
        a = param([1.0, 2.0, 3.0])
        b = param([2.0, 2.0, 1.0])
        y = minimum(a, b)
        assert y.value.tolist() == [1.0, 2.0, 1.0]
        y.sum().backward()
        assert a.grad is not None and b.grad is not None
        assert a.grad.tolist() == [1.0, 1.0, 0.0]
        assert b.grad.tolist() == [0.0, 0.0, 1.0]

    def test_concat_tiles_vector(self) -> None:
        x = param(np.ones((3, 2)))
        y = param([5.0])
        out = concat(x, y)
        assert out.shape == (3, 3)
        assert out.value[:, 2].tolist() == [5.0, 5.0, 5.0]
        out.sum().backward()
        assert y.grad is not None
        assert y.grad.tolist() == [3.0]

    def test_concat_row_mismatch(self) -> None:
        with pytest.raises(ShapeError, match="row mismatch"):
            concat(param(np.ones((3, 2))), param(np.ones((2, 2))))

    def test_neighbor_sum(self) -> None:
        x = param([[1.0], [10.0], [100.0]])
        adj = [[], [0], [0, 1]]
        out = neighbor_sum(x, adj)
        assert out.value[:, 0].tolist() == [0.0, 1.0, 11.0]
        weights = constant([[1.0], [2.0], [3.0]])
        assert fd_error(lambda: (neighbor_sum(x, adj) * weights).sum(), x) < 1e-7
        assert x.grad is not None
        assert x.grad[:, 0].tolist() == [5.0, 3.0, 0.0]

    def test_neighbor_sum_checks(self) -> None:
        with pytest.raises(ShapeError, match="neighbour lists"):
            neighbor_sum(param(np.ones((2, 1))), [[]])
        with pytest.raises(ShapeError, match="out of range"):
            neighbor_sum(param(np.ones((2, 1))), [[], [5]])

    def test_mean_pool(self) -> None:
        x = param([[1.0, 2.0], [3.0, 6.0]])
        y = mean_pool(x)
        assert y.value.tolist() == [2.0, 4.0]
        y.sum().backward()
        assert x.grad is not None
        assert x.grad.tolist() == [[0.5, 0.5], [0.5, 0.5]]


class TestBatchNorm:
    def setup_method(self) -> None:
        rng = np.random.default_rng(1)
        self.x = param(rng.normal(3.0, 2.0, size=(6, 4)))
        self.gamma = param(rng.uniform(0.5, 1.5, size=4))
        self.beta = param(rng.normal(size=4))

    def test_train_normalizes_columns(self) -> None:
        y = batch_norm(self.x, self.gamma, self.beta, BatchNormStats.fresh(4), "train", False)
        z = (y.value - self.beta.value) / self.gamma.value
        assert z.mean(axis=0) == pytest.approx(np.zeros(4), abs=1e-9)
        assert z.var(axis=0) == pytest.approx(np.ones(4), rel=1e-4)

    def test_running_stats_update(self) -> None:
        stats = BatchNormStats.fresh(4)
        batch_norm(self.x, self.gamma, self.beta, stats, "train", True)
        n = self.x.shape[0]
        mu = self.x.value.mean(axis=0)
        unbiased = self.x.value.var(axis=0) * n / (n - 1)
        assert stats.mean == pytest.approx(BN_MOMENTUM * mu)
        assert stats.var == pytest.approx((1 - BN_MOMENTUM) + BN_MOMENTUM * unbiased)

    def test_stats_untouched_without_update(self) -> None:
        stats = BatchNormStats.fresh(4)
        batch_norm(self.x, self.gamma, self.beta, stats, "train", False)
        assert stats.mean.tolist() == [0.0] * 4
        assert stats.var.tolist() == [1.0] * 4

    def test_eval_uses_running_stats(self) -> None:
        stats = BatchNormStats(mean=np.full(4, 3.0), var=np.full(4, 4.0))
        y = batch_norm(self.x, self.gamma, self.beta, stats, "eval")
        expected = self.gamma.value * (self.x.value - 3.0) / np.sqrt(4.0 + 1e-5) + self.beta.value
        assert y.value == pytest.approx(expected)

    @pytest.mark.parametrize("mode", ["train", "eval"])
    def test_gradients(self, mode: Mode) -> None:
        weights = constant(np.random.default_rng(2).normal(size=(6, 4)))

        def loss() -> Tensor:
            stats = BatchNormStats.fresh(4)
            y = batch_norm(self.x, self.gamma, self.beta, stats, mode, False)
            return (y * weights).sum()

        for t in (self.x, self.gamma, self.beta):
            assert fd_error(loss, t) < 1e-5

    def test_shape_check(self) -> None:
        with pytest.raises(ShapeError, match="batch_norm"):
            batch_norm(self.x, param(np.ones(3)), self.beta, BatchNormStats.fresh(4))


class TestDistributions:
    def test_softmax_masked(self) -> None:
        p = softmax_masked(param([1.0, 5.0, 1.0]), np.array([True, False, True]))
        assert p.value.tolist() == [0.5, 0.0, 0.5]

    def test_softmax_large_scores(self) -> None:
        p = softmax_masked(param([1000.0, 1001.0]), np.array([True, True]))
        assert p.value.sum() == pytest.approx(1.0)
        assert p.value[1] == pytest.approx(1.0 / (1.0 + math.exp(-1.0)))

    def test_softmax_empty_mask(self) -> None:
        with pytest.raises(ValueError, match="no entry"):
            softmax_masked(param([1.0, 2.0]), np.array([False, False]))

    def test_log_prob_gradient(self) -> None:
        scores = param([0.3, -1.2, 0.8, 2.0])
        mask = np.array([True, True, False, True])
        err = fd_error(lambda: log_prob(softmax_masked(scores, mask), 1), scores)
        assert err < 1e-7
        assert scores.grad is not None
        assert scores.grad[2] == 0.0

    def test_log_prob_index_checked(self) -> None:
        with pytest.raises(ShapeError):
            log_prob(param([0.5, 0.5]), 2)

    def test_entropy_uniform(self) -> None:
        assert entropy(param([0.25] * 4)).item() == pytest.approx(math.log(4))

    def test_entropy_ignores_zeros(self) -> None:
        assert entropy(param([0.5, 0.0, 0.5])).item() == pytest.approx(math.log(2))

    def test_entropy_gradient(self) -> None:
        scores = param([0.1, 0.7, -0.4])
        mask = np.array([True, True, True])
        assert fd_error(lambda: entropy(softmax_masked(scores, mask)), scores) < 1e-7


class TestParamStore:
    def _store(self) -> ParamStore:
        store = ParamStore()
        store.add("w", np.ones((2, 3)))
        store.add("b", np.zeros(3))
        store.add_stats("bn", 3)
        return store

    def test_duplicate_rejected(self) -> None:
        store = self._store()
        with pytest.raises(ValueError, match="duplicate"):
            store.add("w", np.ones(1))

    def test_iteration_order(self) -> None:
        store = self._store()
        assert list(store) == ["w", "b"]
        assert "w" in store
        assert store["w"].requires_grad

    def test_copy_is_independent(self) -> None:
        store = self._store()
        twin = store.copy()
        store["w"].value[0, 0] = 9.0
        store.stats("bn").mean[0] = 9.0
        assert twin["w"].value[0, 0] == 1.0
        assert twin.stats("bn").mean[0] == 0.0

    def test_load_from(self) -> None:
        store, other = self._store(), self._store()
        other["b"].value[:] = 4.0
        other.version = 3
        store.load_from(other)
        assert store["b"].value.tolist() == [4.0, 4.0, 4.0]
        assert store.version == 3

    def test_load_from_layout_mismatch(self) -> None:
        other = ParamStore()
        other.add("w", np.ones((2, 3)))
        with pytest.raises(ValueError, match="layouts"):
            self._store().load_from(other)

    def test_arrays_round_trip(self) -> None:
        store = self._store()
        arrays = {k: v.copy() for k, v in store.to_arrays().items()}
        assert sorted(arrays) == ["b", "bn.mean", "bn.var", "w"]
        arrays["bn.var"][:] = 2.0
        store.assign_arrays(arrays)
        assert store.stats("bn").var.tolist() == [2.0, 2.0, 2.0]

    def test_assign_arrays_checks(self) -> None:
        store = self._store()
        arrays = store.to_arrays()
        with pytest.raises(ShapeError, match="missing"):
            store.assign_arrays({k: v for k, v in arrays.items() if k != "b"})
        bad = dict(arrays)
        bad["w"] = np.ones((3, 2))
        with pytest.raises(ShapeError, match="w: shape"):
            store.assign_arrays(bad)

    def test_zero_grad(self) -> None:
        store = self._store()
        (store["w"].sum() + store["b"].sum()).backward()
        assert all(g is not None for g in store.grads().values())
        store.zero_grad()
        assert all(g is None for g in store.grads().values())


class TestAdam:
    def test_first_step_moves_by_lr(self) -> None:
        store = ParamStore()
        x = store.add("x", np.array([1.0, -1.0]))
        opt = AdamState.for_params(store, lr=0.01)
        (x * constant([2.0, -3.0])).sum().backward()
        adam_step(store, opt)
        assert x.value == pytest.approx([0.99, -0.99])
        assert x.grad is None
        assert store.version == 1
        assert opt.t == 1

    def test_missing_gradient(self) -> None:
        store = ParamStore()
        x = store.add("x", np.array([1.0]))
        store.add("unused", np.array([1.0]))
        x.square().sum().backward()
        with pytest.raises(ValueError, match="missing gradients for unused"):
            adam_step(store, AdamState.for_params(store))

    def test_minimizes_quadratic(self) -> None:
        store = ParamStore()
        x = store.add("x", np.array([0.0]))
        opt = AdamState.for_params(store, lr=0.1)
        for _ in range(1000):
            (x - 3.0).square().sum().backward()
            adam_step(store, opt)
        assert x.value[0] == pytest.approx(3.0, abs=0.1)


class TestInitAndChecks:
    def test_xavier_bounds(self) -> None:
        w = xavier_uniform(np.random.default_rng(0), 30, 34)
        assert w.shape == (30, 34)
        assert np.abs(w).max() <= math.sqrt(6.0 / 64)

    def test_relative_error(self) -> None:
        assert relative_error(np.zeros(2), np.zeros(2)) == 0.0
        assert relative_error(np.array([1.0]), np.array([1.0])) == 0.0
        assert relative_error(np.array([1.0]), np.array([-1.0])) == pytest.approx(1.0)
