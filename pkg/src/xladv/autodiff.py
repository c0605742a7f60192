"""Define-by-run reverse-mode differentiation over dense float64 arrays.

A :class:`Graph` records every operation applied through it in insertion
order; :meth:`Graph.backward` walks that record in reverse and accumulates
gradients into the ``grad`` buffers of the participating tensors.

Broadcasting is deliberately limited to adding a bias vector to every row of
a matrix, so each backward rule stays easy to audit against finite
differences.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class Tensor:
    """Array value plus a lazily allocated gradient buffer."""

    __slots__ = ("value", "grad", "requires_grad", "name", "node")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.ascontiguousarray(value, dtype=DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        # index of the producing node in its graph; None for leaves
        self.node: Optional[int] = None

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.value.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(value, name: str | None = None) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False)


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Graph:
    """Insertion-ordered operation record.

    Each op method computes its output eagerly and appends a node holding a
    backward closure.  Outputs whose inputs do not require gradients are
    still recorded but carry ``requires_grad=False`` and are skipped during
    backpropagation.
    """

    nodes: list = field(default_factory=list)

    def _record(self, op: str, inputs: tuple, value: np.ndarray, backward) -> Tensor:
        out = Tensor(value)
        out.requires_grad = any(t.requires_grad for t in inputs)
        out.node = len(self.nodes)
        for t in inputs:
            if t.node is not None and t.node >= out.node:
                raise RuntimeError(f"{op}: input node {t.node} not before {out.node}")
        self.nodes.append(Node(op, inputs, out, backward))
        return out

    # -- linear algebra -------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        """[m, k] @ [k, n] -> [m, n]."""
        if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        av, bv = a.value, b.value

        def backward(g):
            return g @ bv.T, av.T @ g

        return self._record("matmul", (a, b), av @ bv, backward)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        """Elementwise sum; ``b`` may also be a bias vector [n] added to every row of ``a`` [m, n]."""
        if a.shape == b.shape:
            return self._record("add", (a, b), a.value + b.value, lambda g: (g, g))
        if a.value.ndim == 2 and b.value.ndim == 1 and a.shape[1] == b.shape[0]:
            return self._record(
                "add", (a, b), a.value + b.value, lambda g: (g, g.sum(axis=0))
            )
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")
        return self._record("sub", (a, b), a.value - b.value, lambda g: (g, -g))

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
        av, bv = a.value, b.value
        return self._record("mul", (a, b), av * bv, lambda g: (g * bv, g * av))

    def scale(self, a: Tensor, c: float) -> Tensor:
        c = float(c)
        return self._record("scale", (a,), a.value * c, lambda g: (g * c,))

    # -- nonlinearities -------------------------------------------------

    def tanh(self, a: Tensor) -> Tensor:
        y = np.tanh(a.value)
        return self._record("tanh", (a,), y, lambda g: (g * (1.0 - y * y),))

    def sigmoid(self, a: Tensor) -> Tensor:
        y = _sigmoid(a.value)
        return self._record("sigmoid", (a,), y, lambda g: (g * y * (1.0 - y),))

    def relu(self, a: Tensor) -> Tensor:
        mask = a.value > 0
        return self._record("relu", (a,), a.value * mask, lambda g: (g * mask,))

    # -- structure ------------------------------------------------------

    def concat(self, tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
        tensors = tuple(tensors)
        if not tensors:
            raise ShapeError("concat: no inputs")
        ndim = tensors[0].value.ndim
        ax = axis % ndim
        for t in tensors[1:]:
            other = [d for i, d in enumerate(t.shape) if i != ax]
            first = [d for i, d in enumerate(tensors[0].shape) if i != ax]
            if t.value.ndim != ndim or other != first:
                raise ShapeError(
                    f"concat: incompatible shapes {tensors[0].shape} and {t.shape} on axis {axis}"
                )
        bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

        def backward(g):
            return tuple(np.split(g, bounds, axis=ax))

        return self._record(
            "concat", tensors, np.concatenate([t.value for t in tensors], axis=ax), backward
        )

    def columns(self, a: Tensor, start: int, stop: int) -> Tensor:
        """Column slice ``a[:, start:stop]`` of a matrix."""
        if a.value.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
            raise ShapeError(f"columns: bad slice [{start}:{stop}] of shape {a.shape}")
        n_cols = a.shape[1]

        def backward(g):
            full = np.zeros((g.shape[0], n_cols), dtype=DTYPE)
            full[:, start:stop] = g
            return (full,)

        return self._record("columns", (a,), a.value[:, start:stop], backward)

    def rows(self, a: Tensor, start: int, stop: int) -> Tensor:
        """Row slice ``a[start:stop]`` of a matrix."""
        if a.value.ndim != 2 or not 0 <= start < stop <= a.shape[0]:
            raise ShapeError(f"rows: bad slice [{start}:{stop}] of shape {a.shape}")
        shape = a.shape

        def backward(g):
            full = np.zeros(shape, dtype=DTYPE)
            full[start:stop] = g
            return (full,)

        return self._record("rows", (a,), a.value[start:stop], backward)

    def row_lookup(self, table: Tensor, ids) -> Tensor:
        """Gather rows ``table[ids]``; repeated ids accumulate their gradients."""
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        if table.value.ndim != 2:
            raise ShapeError(f"row_lookup: table must be a matrix, got shape {table.shape}")
        n_rows = table.shape[0]
        if ids.size and (ids.min() < 0 or ids.max() >= n_rows):
            raise IndexError(
                f"row_lookup: id out of range [0, {n_rows}) (got {ids.min()}..{ids.max()})"
            )

        def backward(g):
            full = np.zeros(table.shape, dtype=DTYPE)
            np.add.at(full, ids, g)
            return (full,)

        return self._record("row_lookup", (table,), table.value[ids], backward)

    # -- reductions -----------------------------------------------------

    def sum(self, a: Tensor) -> Tensor:
        shape = a.shape
        return self._record(
            "sum", (a,), np.array(a.value.sum()), lambda g: (np.full(shape, g, dtype=DTYPE),)
        )

    def mean(self, a: Tensor) -> Tensor:
        shape, n = a.shape, a.size
        if n == 0:
            raise ShapeError("mean: empty tensor")
        return self._record(
            "mean",
            (a,),
            np.array(a.value.sum() / n),
            lambda g: (np.full(shape, g / n, dtype=DTYPE),),
        )

    # -- losses ---------------------------------------------------------

    def softmax_cross_entropy_with_logits(
        self, logits: Tensor, gold, legal: Optional[np.ndarray] = None
    ) -> Tensor:
        """Mean negative log-likelihood of ``gold`` rows under softmax(logits).

        ``legal`` optionally marks allowed classes per row; the others are
        treated as having logit -inf.
        """
        gold = np.asarray(gold, dtype=np.int64).reshape(-1)
        z = logits.value
        if z.ndim == 1:
            z = z[None, :]
        if z.ndim != 2 or z.shape[0] != gold.size or gold.size == 0:
            raise ShapeError(
                f"softmax_cross_entropy_with_logits: logits {logits.shape} vs gold {gold.shape}"
            )
        if gold.min() < 0 or gold.max() >= z.shape[1]:
            raise IndexError("softmax_cross_entropy_with_logits: gold class out of range")
        if legal is not None:
            legal = np.asarray(legal, dtype=bool).reshape(z.shape)
            if not legal[np.arange(gold.size), gold].all():
                raise ValueError("softmax_cross_entropy_with_logits: gold class is masked out")
            z = np.where(legal, z, -np.inf)
        shifted = z - z.max(axis=1, keepdims=True)
        expz = np.exp(shifted)
        denom = expz.sum(axis=1, keepdims=True)
        log_probs = shifted - np.log(denom)
        rows = np.arange(gold.size)
        loss = -log_probs[rows, gold].sum() / gold.size
        probs = expz / denom
        shape = logits.shape

        def backward(g):
            d = probs.copy()
            d[rows, gold] -= 1.0
            return ((g / gold.size) * d.reshape(shape),)

        return self._record("softmax_xent", (logits,), np.array(loss), backward)

    def sigmoid_cross_entropy_with_logits(self, logits: Tensor, targets) -> Tensor:
        """Mean Bernoulli negative log-likelihood of 0/1 ``targets``."""
        t = np.asarray(targets, dtype=DTYPE).reshape(logits.shape)
        if logits.size == 0:
            raise ShapeError("sigmoid_cross_entropy_with_logits: empty logits")
        z = logits.value
        # log(1 + exp(-|z|)) keeps both tails finite
        loss = (np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))).sum() / z.size
        p = _sigmoid(z)
        n = z.size
        return self._record(
            "sigmoid_xent", (logits,), np.array(loss), lambda g: (g * (p - t) / n,)
        )

    # -- gradient reversal ----------------------------------------------

    def grad_reverse(self, x: Tensor, lam: float) -> Tensor:
        """Identity forward; multiplies the incoming gradient by ``-lam`` backward."""
        lam = float(lam)
        if not lam >= 0.0:
            raise ValueError(f"grad_reverse: lambda must be nonnegative, got {lam}")
        return self._record("grad_reverse", (x,), x.value.copy(), lambda g: (-lam * g,))

    # -- driver ---------------------------------------------------------

    def backward(self, loss: Tensor) -> None:
        """Accumulate d loss / d t into ``t.grad`` for every reachable tensor."""
        if loss.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
        if loss.node is None or loss.node >= len(self.nodes) or self.nodes[loss.node].output is not loss:
            raise ValueError("backward: loss was not produced by this graph")
        loss.accumulate(np.ones(loss.shape, dtype=DTYPE))
        for node in reversed(self.nodes[: loss.node + 1]):
            out = node.output
            if out.grad is None or not out.requires_grad:
                continue
            grads = node.backward(out.grad)
            for t, g in zip(node.inputs, grads):
                if t.requires_grad and g is not None:
                    t.accumulate(g)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # exp of a nonpositive argument only: no overflow, full relative precision in both tails
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def zero_grads(tensors) -> None:
    for t in tensors:
        t.zero_grad()


def numerical_gradient(f: Callable[[], float], t: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` with respect to ``t.value``."""
    grad = np.zeros_like(t.value)
    flat = t.value.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / denom))
