"""Minimal reverse-mode differentiation over dense float64 tensors.

Define-by-run: every primitive op records its parents and a backward
closure on the output tensor, so each training step rebuilds the graph
from scratch (denominator graphs have data-dependent shape). backward()
replays the recorded ops exactly once in reverse topological order and
accumulates adjoints into every requires_grad leaf.

All probabilities handled by this package live in log space; the only
ops that ever exponentiate (logsumexp, log_softmax, softmax, sigmoid)
do so with max-subtraction or an equivalent stable form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (decoding, eval)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """Dense float64 array with an optional gradient slot.

    `values` is always C-contiguous (row-major). `grad` is allocated
    lazily as a same-shape zero array the first time an adjoint arrives,
    or eagerly for requires_grad leaves.
    """

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.values = _as_array(data)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.values) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values)

    def detach(self) -> "Tensor":
        """Constant view of the same values; gradients stop here."""
        return Tensor(self.values)

    def zero_grad(self):
        self.grad = np.zeros_like(self.values)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; the module-level functions are the real surface
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_all(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(values: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(values)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.grad = None  # allocated on first adjoint
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(t: Tensor, delta: np.ndarray):
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += delta


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (reverses numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    values = a.values + b.values

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _make(values, (a, b), backward)


def neg(a) -> Tensor:
    a = _wrap(a)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, -g)

    return _make(-a.values, (a,), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    values = a.values * b.values

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.values, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.values, b.shape))

    return _make(values, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors; adjoints reach both inputs."""
    a, b = _wrap(a), _wrap(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    values = a.values @ b.values

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ b.values.T)
        if b.requires_grad:
            _accumulate(b, a.values.T @ g)

    return _make(values, (a, b), backward)


def tanh(a) -> Tensor:
    a = _wrap(a)
    y = np.tanh(a.values)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * (1.0 - y * y))

    return _make(y, (a,), backward)


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    x = a.values
    # exp only of non-positive arguments, so no overflow either side
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * y * (1.0 - y))

    return _make(y, (a,), backward)


def exp(a) -> Tensor:
    a = _wrap(a)
    y = np.exp(a.values)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * y)

    return _make(y, (a,), backward)


def sum_all(a) -> Tensor:
    a = _wrap(a)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, np.broadcast_to(g, a.shape).copy())

    return _make(a.values.sum(), (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    a = _wrap(a)
    values = a.values.reshape(shape).copy()

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g.reshape(a.shape))

    return _make(values, (a,), backward)


def transpose(a: Tensor) -> Tensor:
    a = _wrap(a)
    if a.values.ndim != 2:
        raise ShapeError(f"transpose: rank-2 tensor required, got shape {a.shape}")
    values = np.ascontiguousarray(a.values.T)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, np.ascontiguousarray(g.T))

    return _make(values, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: need at least one tensor")
    values = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def backward(g):
        offset = 0
        for t, n in zip(tensors, sizes):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offset, offset + n)
                _accumulate(t, g[tuple(idx)])
            offset += n

    return _make(values, tensors, backward)


def stack_scalars(tensors: Sequence[Tensor]) -> Tensor:
    """Stack scalar tensors into a 1-D tensor (n-best score vectors)."""
    tensors = [_wrap(t) for t in tensors]
    for t in tensors:
        if t.size != 1:
            raise ValueError(f"stack_scalars: scalar expected, got shape {t.shape}")
    values = np.array([float(t.values) for t in tensors])

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                _accumulate(t, np.reshape(g[i], t.shape))

    return _make(values, tensors, backward)


def rows(table: Tensor, indices) -> Tensor:
    """Select rows of a rank-2 tensor (embedding lookup); scatter-add on backward."""
    table = _wrap(table)
    if table.values.ndim != 2:
        raise ShapeError(f"rows: rank-2 table required, got shape {table.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    n = table.shape[0]
    for pos, i in enumerate(idx.ravel()):
        if not 0 <= i < n:
            raise ValueError(f"rows: index {i} at position {pos} out of range [0, {n})")
    values = table.values[idx].copy()

    def backward(g):
        if table.requires_grad:
            delta = np.zeros_like(table.values)
            np.add.at(delta, idx, g)
            _accumulate(table, delta)

    return _make(values, (table,), backward)


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    """log sum exp over one axis, stable under arbitrary common offsets."""
    a = _wrap(a)
    if a.values.ndim == 0:
        raise ValueError("logsumexp: rank-0 tensor has no axis to reduce")
    if a.shape[axis] < 1:
        raise ValueError(f"logsumexp: empty reduction axis {axis} in shape {a.shape}")
    m = np.max(a.values, axis=axis, keepdims=True)
    shifted = np.exp(a.values - m)
    total = shifted.sum(axis=axis, keepdims=True)
    values = np.squeeze(m + np.log(total), axis=axis)
    soft = shifted / total  # softmax over the reduced axis

    def backward(g):
        if a.requires_grad:
            _accumulate(a, np.expand_dims(g, axis=axis) * soft)

    return _make(values, (a,), backward)


def log_softmax(a: Tensor) -> Tensor:
    """Normalize the last axis so each slice logsumexps to zero."""
    a = _wrap(a)
    if a.values.ndim == 0:
        raise ValueError("log_softmax: rank-0 tensor has no class axis")
    m = np.max(a.values, axis=-1, keepdims=True)
    shifted = a.values - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g - np.exp(y) * g.sum(axis=-1, keepdims=True))

    return _make(y, (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _wrap(a)
    m = np.max(a.values, axis=axis, keepdims=True)
    e = np.exp(a.values - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            inner = (g * y).sum(axis=axis, keepdims=True)
            _accumulate(a, y * (g - inner))

    return _make(y, (a,), backward)


def gather_logprob(logprobs: Tensor, indices) -> Tensor:
    """out[n] = logprobs[n, indices[n]]; adjoints scatter to the picked entries."""
    logprobs = _wrap(logprobs)
    if logprobs.values.ndim != 2:
        raise ShapeError(f"gather_logprob: rank-2 input required, got shape {logprobs.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    n, v = logprobs.shape
    if idx.ndim != 1 or len(idx) != n:
        raise ValueError(f"gather_logprob: need {n} indices, got shape {idx.shape}")
    for pos, i in enumerate(idx):
        if not 0 <= i < v:
            raise ValueError(f"gather_logprob: index {i} at position {pos} out of range [0, {v})")
    values = logprobs.values[np.arange(n), idx].copy()

    def backward(g):
        if logprobs.requires_grad:
            delta = np.zeros_like(logprobs.values)
            delta[np.arange(n), idx] = g
            _accumulate(logprobs, delta)

    return _make(values, (logprobs,), backward)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def backward(root: Tensor):
    """Accumulate d root / d leaf into every requires_grad leaf.

    The recorded graph is walked in reverse topological order; each op
    node fires exactly once, so a leaf reached over several paths ends
    up with the sum of all path adjoints.
    """
    if root.size != 1:
        raise ValueError(f"backward: scalar root required, got shape {root.shape}")
    if not root.requires_grad:
        return

    # iterative postorder DFS; graphs can be deep (long utterances)
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    _accumulate(root, np.ones_like(root.values))
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)
            # interior adjoints are dead after firing; free them eagerly
            if node is not root:
                node.grad = None


def zero_grads(params: Sequence[Tensor]):
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# finite-difference validation
# ---------------------------------------------------------------------------


@dataclass
class FiniteDiffReport:
    max_rel_err: float
    passed: bool
    non_finite: bool = False
    worst: tuple[int, int] | None = None  # (param index, flat coordinate)

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return f"finite-diff check: max_rel_err={self.max_rel_err:.3e} [{status}]"


def finite_diff_check(f, params: Sequence[Tensor], step: float = 1e-5,
                      tol: float = 1e-6) -> FiniteDiffReport:
    """Compare analytic gradients of `f(params)` against central differences.

    `f` must be a deterministic map from the current parameter values to a
    scalar Tensor built with the ops above. Relative error per coordinate
    is |a - n| / max(|a|, |n|, 1e-8).
    """
    if step <= 0:
        raise ValueError("finite_diff_check: step must be positive")
    zero_grads(params)
    out = f(params)
    if not np.isfinite(out.values).all():
        return FiniteDiffReport(max_rel_err=math.inf, passed=False, non_finite=True)
    backward(out)
    analytic = [p.grad.copy() for p in params]

    max_rel = 0.0
    worst = None
    non_finite = False
    with no_grad():
        for pi, p in enumerate(params):
            flat = p.values.reshape(-1)
            for ci in range(flat.size):
                orig = flat[ci]
                flat[ci] = orig + step
                f_plus = float(f(params).values)
                flat[ci] = orig - step
                f_minus = float(f(params).values)
                flat[ci] = orig
                if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                    non_finite = True
                    continue
                numeric = (f_plus - f_minus) / (2.0 * step)
                a = analytic[pi].reshape(-1)[ci]
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                if rel > max_rel:
                    max_rel = rel
                    worst = (pi, ci)
    passed = (max_rel < tol) and not non_finite
    return FiniteDiffReport(max_rel_err=max_rel, passed=passed,
                            non_finite=non_finite, worst=worst)
