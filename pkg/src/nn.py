"""Small float64 tensor library with a dynamic reverse-mode tape.

Every operation records its inputs and a closure that maps the output
gradient to input gradients. :func:`backward` walks the recorded graph in
reverse topological order (parents visited in argument order, so gradient
accumulation order is fixed) and accumulates into leaf ``grad`` arrays.

Layers provided for the policy network: :func:`dense`, :func:`relu`,
:func:`batch_norm`, :func:`concat`, :func:`neighbor_sum`, :func:`mean_pool`,
:func:`softmax_masked`, :func:`log_prob`, :func:`entropy`; plus the
elementwise arithmetic the PPO losses need, a :class:`ParamStore` and Adam.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "BatchNormStats",
    "ParamStore",
    "AdamState",
    "constant",
    "dense",
    "relu",
    "batch_norm",
    "concat",
    "neighbor_sum",
    "mean_pool",
    "softmax_masked",
    "log_prob",
    "entropy",
    "exp",
    "clip",
    "minimum",
    "backward",
    "adam_step",
    "xavier_uniform",
    "finite_difference",
    "relative_error",
    "BN_EPS",
    "BN_MOMENTUM",
    "Mode",
]

BN_EPS: float = 1e-5
BN_MOMENTUM: float = 0.1

Mode = Literal["train", "eval"]
_GradFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or infinity."""


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------


class Tensor:
    """A float64 array with an optional place on the tape."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_grad_fn", "op")

    def __init__(
        self,
        value: Any,
        requires_grad: bool = False,
        parents: tuple[Tensor, ...] = (),
        grad_fn: _GradFn | None = None,
        op: str = "leaf",
    ) -> None:
        self.value: np.ndarray = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._grad_fn = grad_fn
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.value.shape)

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else math.nan

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

    # ----- arithmetic --------------------------------------------------------

    def __add__(self, other: Tensor | float) -> Tensor:
        o = _lift(other)
        return _node(
            _broadcast(np.add, self, o, "add"),
            (self, o),
            lambda g: (_unbroadcast(g, self.shape), _unbroadcast(g, o.shape)),
            "add",
        )

    __radd__ = __add__

    def __sub__(self, other: Tensor | float) -> Tensor:
        o = _lift(other)
        return _node(
            _broadcast(np.subtract, self, o, "sub"),
            (self, o),
            lambda g: (_unbroadcast(g, self.shape), _unbroadcast(-g, o.shape)),
            "sub",
        )

    def __rsub__(self, other: float) -> Tensor:
        return _lift(other) - self

    def __mul__(self, other: Tensor | float) -> Tensor:
        o = _lift(other)
        return _node(
            _broadcast(np.multiply, self, o, "mul"),
            (self, o),
            lambda g: (
                _unbroadcast(g * o.value, self.shape),
                _unbroadcast(g * self.value, o.shape),
            ),
            "mul",
        )

    __rmul__ = __mul__

    def __neg__(self) -> Tensor:
        return _node(-self.value, (self,), lambda g: (-g,), "neg")

    def square(self) -> Tensor:
        return _node(self.value**2, (self,), lambda g: (2.0 * self.value * g,), "square")

    def sum(self) -> Tensor:
        return _node(
            np.asarray(self.value.sum()),
            (self,),
            lambda g: (np.broadcast_to(g, self.shape).copy(),),
            "sum",
        )

    def mean(self) -> Tensor:
        n = max(self.value.size, 1)
        return _node(
            np.asarray(self.value.mean()),
            (self,),
            lambda g: (np.broadcast_to(g / n, self.shape).copy(),),
            "mean",
        )

    def reshape(self, *shape: int) -> Tensor:
        src = self.shape
        try:
            out = self.value.reshape(shape)
        except ValueError as e:
            raise ShapeError(f"cannot reshape {src} to {shape}") from e
        return _node(out, (self,), lambda g: (g.reshape(src),), "reshape")


def _lift(x: Tensor | float) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(value: Any) -> Tensor:
    """A tensor that never receives gradients."""
    return Tensor(value)


def _check_finite(value: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite output from {op}")
    return value


def _node(value: np.ndarray, parents: tuple[Tensor, ...], grad_fn: _GradFn, op: str) -> Tensor:
    _check_finite(value, op)
    needs = any(p.requires_grad for p in parents)
    return Tensor(
        value,
        requires_grad=needs,
        parents=parents if needs else (),
        grad_fn=grad_fn if needs else None,
        op=op,
    )


def _broadcast(fn: Callable[..., np.ndarray], a: Tensor, b: Tensor, op: str) -> np.ndarray:
    try:
        return np.asarray(fn(a.value, b.value))
    except ValueError as e:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from e


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum *grad* down to *shape* after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every leaf that requires gradients."""
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise RuntimeError("backward without a recorded forward: loss has no trainable inputs")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._grad_fn is None:
            if g.shape != node.value.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {node.shape}")
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._grad_fn(g), strict=True):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` for ``x`` of shape (n, in)."""
    if x.value.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: x {x.shape} incompatible with w {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"dense: bias {b.shape} does not match output width {w.shape[1]}")
    return _node(
        x.value @ w.value + b.value,
        (x, w, b),
        lambda g: (g @ w.value.T, x.value.T @ g, g.sum(axis=0)),
        "dense",
    )


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0
    return _node(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,), "relu")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.value)
    return _node(out, (x,), lambda g: (g * out,), "exp")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient passes where the input lies inside."""
    inside = (x.value >= lo) & (x.value <= hi)
    return _node(np.clip(x.value, lo, hi), (x,), lambda g: (g * inside,), "clip")


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise minimum; ties send the gradient to *a*."""
    if a.shape != b.shape:
        raise ShapeError(f"minimum: {a.shape} vs {b.shape}")
    take_a = a.value <= b.value
    return _node(
        np.where(take_a, a.value, b.value),
        (a, b),
        lambda g: (g * take_a, g * ~take_a),
        "minimum",
    )


@dataclass
class BatchNormStats:
    """Running statistics of one batch-norm layer."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, dim: int) -> BatchNormStats:
        return cls(mean=np.zeros(dim), var=np.ones(dim))

    def copy(self) -> BatchNormStats:
        return BatchNormStats(mean=self.mean.copy(), var=self.var.copy())


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    stats: BatchNormStats,
    mode: Mode = "train",
    update_stats: bool = True,
) -> Tensor:
    """Normalize over the node (row) dimension.

    ``train`` uses the statistics of *x* and, when *update_stats*, folds them
    into *stats* with momentum 0.1 (unbiased variance). ``eval`` uses *stats*.
    """
    if x.value.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batch_norm: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    n = x.shape[0]

    if mode == "eval":
        inv_std = 1.0 / np.sqrt(stats.var + BN_EPS)
        xhat = (x.value - stats.mean) * inv_std
        return _node(
            gamma.value * xhat + beta.value,
            (x, gamma, beta),
            lambda g: (g * gamma.value * inv_std, (g * xhat).sum(axis=0), g.sum(axis=0)),
            "batch_norm",
        )

    mu = x.value.mean(axis=0)
    var = x.value.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x.value - mu) * inv_std
    if update_stats:
        unbiased = var * n / (n - 1) if n > 1 else var
        stats.mean = (1.0 - BN_MOMENTUM) * stats.mean + BN_MOMENTUM * mu
        stats.var = (1.0 - BN_MOMENTUM) * stats.var + BN_MOMENTUM * unbiased

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        dxhat = g * gamma.value
        dx = (inv_std / n) * (
            n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
        )
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _node(gamma.value * xhat + beta.value, (x, gamma, beta), grad_fn, "batch_norm")


def concat(x: Tensor, y: Tensor) -> Tensor:
    """Join columns; a 1-D *y* is repeated on every row of *x*."""
    if x.value.ndim != 2:
        raise ShapeError(f"concat: x must be 2-D, got {x.shape}")
    n, dx = x.shape
    if y.value.ndim == 1:
        tiled = np.broadcast_to(y.value, (n, y.shape[0]))
        return _node(
            np.concatenate((x.value, tiled), axis=1),
            (x, y),
            lambda g: (g[:, :dx], g[:, dx:].sum(axis=0)),
            "concat",
        )
    if y.value.ndim != 2 or y.shape[0] != n:
        raise ShapeError(f"concat: row mismatch {x.shape} vs {y.shape}")
    return _node(
        np.concatenate((x.value, y.value), axis=1),
        (x, y),
        lambda g: (g[:, :dx], g[:, dx:]),
        "concat",
    )


def _edges(adjacency: Sequence[Sequence[int]], n: int) -> tuple[np.ndarray, np.ndarray]:
    if len(adjacency) != n:
        raise ShapeError(f"neighbor_sum: {len(adjacency)} neighbour lists for {n} nodes")
    dst = np.fromiter(
        (v for v, nbrs in enumerate(adjacency) for _ in nbrs), dtype=np.int64
    )
    src = np.fromiter((u for nbrs in adjacency for u in nbrs), dtype=np.int64)
    if src.size and (src.min() < 0 or src.max() >= n):
        raise ShapeError("neighbor_sum: neighbour index out of range")
    return src, dst


def neighbor_sum(x: Tensor, adjacency: Sequence[Sequence[int]]) -> Tensor:
    """Row ``v`` of the output is the sum of rows ``u`` in ``adjacency[v]``."""
    if x.value.ndim != 2:
        raise ShapeError(f"neighbor_sum: x must be 2-D, got {x.shape}")
    src, dst = _edges(adjacency, x.shape[0])
    out = np.zeros_like(x.value)
    np.add.at(out, dst, x.value[src])

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        gx = np.zeros_like(g)
        np.add.at(gx, src, g[dst])
        return (gx,)

    return _node(out, (x,), grad_fn, "neighbor_sum")


def mean_pool(x: Tensor) -> Tensor:
    """Average of the rows: (n, d) -> (d,)."""
    if x.value.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"mean_pool: need a non-empty 2-D input, got {x.shape}")
    n = x.shape[0]
    return _node(
        x.value.mean(axis=0),
        (x,),
        lambda g: (np.broadcast_to(g / n, x.shape).copy(),),
        "mean_pool",
    )


def softmax_masked(x: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the entries where *mask* is true; exact zeros elsewhere."""
    mask = np.asarray(mask, dtype=bool)
    if x.value.ndim != 1 or mask.shape != x.shape:
        raise ShapeError(f"softmax_masked: scores {x.shape}, mask {mask.shape}")
    if not mask.any():
        raise ValueError("softmax_masked: mask selects no entry")
    shift = x.value[mask].max()
    e = np.where(mask, np.exp(np.where(mask, x.value - shift, 0.0)), 0.0)
    p = e / e.sum()
    return _node(p, (x,), lambda g: (p * (g - (p * g).sum()),), "softmax_masked")


def log_prob(dist: Tensor, index: int) -> Tensor:
    """``log dist[index]`` as a 0-d tensor."""
    if dist.value.ndim != 1 or not 0 <= index < dist.shape[0]:
        raise ShapeError(f"log_prob: index {index} outside distribution {dist.shape}")
    pi = dist.value[index]

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        out = np.zeros_like(dist.value)
        out[index] = g / pi
        return (out,)

    with np.errstate(divide="ignore"):
        value = np.log(pi)
    return _node(np.asarray(value), (dist,), grad_fn, "log_prob")


def entropy(dist: Tensor) -> Tensor:
    """Shannon entropy in nats; zero-probability entries contribute nothing."""
    p = dist.value
    support = p > 0
    logp = np.where(support, np.log(np.where(support, p, 1.0)), 0.0)
    return _node(
        np.asarray(-(p * logp).sum()),
        (dist,),
        lambda g: (np.where(support, -(logp + 1.0), 0.0) * g,),
        "entropy",
    )


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class ParamStore:
    """Named trainable tensors plus named batch-norm statistics."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}
        self._stats: dict[str, BatchNormStats] = {}
        self.version = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, op=name)
        self._params[name] = t
        return t

    def add_stats(self, name: str, dim: int) -> BatchNormStats:
        if name in self._stats:
            raise ValueError(f"duplicate statistics name {name!r}")
        self._stats[name] = BatchNormStats.fresh(dim)
        return self._stats[name]

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: object) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def stats(self, name: str) -> BatchNormStats:
        return self._stats[name]

    def items(self) -> list[tuple[str, Tensor]]:
        return list(self._params.items())

    def stat_items(self) -> list[tuple[str, BatchNormStats]]:
        return list(self._stats.items())

    def grads(self) -> dict[str, np.ndarray | None]:
        return {name: t.grad for name, t in self._params.items()}

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def copy(self) -> ParamStore:
        """Deep copy of values and statistics (gradients are not copied)."""
        out = ParamStore()
        for name, t in self._params.items():
            out.add(name, t.value.copy())
        for name, st in self._stats.items():
            out._stats[name] = st.copy()
        out.version = self.version
        return out

    def load_from(self, other: ParamStore) -> None:
        """Overwrite values and statistics with copies of *other*'s."""
        if list(other._params) != list(self._params) or list(other._stats) != list(self._stats):
            raise ValueError("parameter stores have different layouts")
        for name, t in self._params.items():
            t.value = other._params[name].value.copy()
        for name, st in other._stats.items():
            self._stats[name] = st.copy()
        self.version = other.version

    def to_arrays(self) -> dict[str, np.ndarray]:
        """Flat name -> array map; statistics appear as ``<name>.mean``/``<name>.var``."""
        out = {name: t.value for name, t in self._params.items()}
        for name, st in self._stats.items():
            out[f"{name}.mean"] = st.mean
            out[f"{name}.var"] = st.var
        return out

    def assign_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Load a :meth:`to_arrays` map, checking names and shapes."""
        expected = {name: a.shape for name, a in self.to_arrays().items()}
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        if missing or extra:
            raise ShapeError(f"tensor names differ: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            if tuple(arrays[name].shape) != tuple(shape):
                raise ShapeError(f"{name}: shape {arrays[name].shape} != expected {shape}")
        for name, t in self._params.items():
            t.value = np.array(arrays[name], dtype=np.float64)
        for name, st in self._stats.items():
            st.mean = np.array(arrays[f"{name}.mean"], dtype=np.float64)
            st.var = np.array(arrays[f"{name}.var"], dtype=np.float64)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Bias-corrected Adam; defaults match common framework defaults."""

    lr: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamStore, lr: float = 2e-5) -> AdamState:
        state = cls(lr=lr)
        for name, t in params.items():
            state.m[name] = np.zeros_like(t.value)
            state.v[name] = np.zeros_like(t.value)
        return state


def adam_step(params: ParamStore, opt: AdamState) -> None:
    """Apply one Adam update from the accumulated gradients, then zero them."""
    missing = [name for name, g in params.grads().items() if g is None]
    if missing:
        raise ValueError(f"missing gradients for {', '.join(missing)}")

    opt.t += 1
    c1 = 1.0 - opt.beta1**opt.t
    c2 = 1.0 - opt.beta2**opt.t
    for name, t in params.items():
        g = t.grad
        assert g is not None
        if name not in opt.m:
            opt.m[name] = np.zeros_like(t.value)
            opt.v[name] = np.zeros_like(t.value)
        opt.m[name] = opt.beta1 * opt.m[name] + (1.0 - opt.beta1) * g
        opt.v[name] = opt.beta2 * opt.v[name] + (1.0 - opt.beta2) * g * g
        m_hat = opt.m[name] / c1
        v_hat = opt.v[name] / c2
        t.value = _check_finite(t.value - opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps), name)
    params.zero_grad()
    params.version += 1


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def finite_difference(f: Callable[[], Tensor], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f()`` with respect to *param*."""
    grad = np.zeros_like(param.value)
    flat = param.value.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = f().item()
        flat[k] = orig - h
        down = f().item()
        flat[k] = orig
        grad.reshape(-1)[k] = (up - down) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``|a - b| / (|a| + |b|)`` in the 2-norm; 0 when both are zero."""
    denom = float(np.linalg.norm(a) + np.linalg.norm(b))
    return 0.0 if denom == 0.0 else float(np.linalg.norm(a - b)) / denom
