"""Array-valued reverse-mode differentiation on a Wengert tape.

Each operation whose inputs need gradients appends one record to the tape
in execution order; :meth:`Tape.backward` replays those records in reverse
exactly once. Operands that are plain arrays or :class:`Var` objects
without ``requires_grad`` are constants and never recorded, so a forward
pass over constant parameters costs nothing beyond numpy.

Only the handful of operations the forecasting policy and the training
losses need are provided.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

Vjp = Callable[[np.ndarray], np.ndarray]


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Var:
    __array_ufunc__ = None  # make ndarray <op> Var dispatch to Var

    def __init__(self, value, tape: "Tape | None" = None, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=float)
        self.tape = tape
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.parents: tuple[tuple["Var", Vjp], ...] = ()

    def __repr__(self):
        return f"Var(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        other = _lift(other)
        return _record(self.value + other.value, [
            (self, lambda g: _unbroadcast(g, self.shape)),
            (other, lambda g: _unbroadcast(g, other.shape)),
        ])

    __radd__ = __add__

    def __sub__(self, other):
        other = _lift(other)
        return _record(self.value - other.value, [
            (self, lambda g: _unbroadcast(g, self.shape)),
            (other, lambda g: _unbroadcast(-g, other.shape)),
        ])

    def __rsub__(self, other):
        return _lift(other) - self

    def __mul__(self, other):
        other = _lift(other)
        a, b = self.value, other.value
        return _record(a * b, [
            (self, lambda g: _unbroadcast(g * b, self.shape)),
            (other, lambda g: _unbroadcast(g * a, other.shape)),
        ])

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _lift(other)
        a, b = self.value, other.value
        return _record(a / b, [
            (self, lambda g: _unbroadcast(g / b, self.shape)),
            (other, lambda g: _unbroadcast(-g * a / (b * b), other.shape)),
        ])

    def __neg__(self):
        return _record(-self.value, [(self, lambda g: -g)])

    def __matmul__(self, other):
        other = _lift(other)
        a, b = self.value, other.value
        return _record(a @ b, [
            (self, lambda g: g @ b.T),
            (other, lambda g: a.T @ g),
        ])

    def __rmatmul__(self, other):
        return _lift(other) @ self

    def __getitem__(self, idx):
        shape = self.shape

        def vjp(g):
            out = np.zeros(shape)
            if _has_fancy(idx):
                np.add.at(out, idx, g)
            else:
                out[idx] = g
            return out

        return _record(self.value[idx], [(self, vjp)])

    # elementwise ----------------------------------------------------------
    def square(self):
        a = self.value
        return _record(a * a, [(self, lambda g: 2.0 * g * a)])

    def exp(self):
        out = np.exp(self.value)
        return _record(out, [(self, lambda g: g * out)])

    def log(self):
        a = self.value
        return _record(np.log(a), [(self, lambda g: g / a)])

    def tanh(self):
        out = np.tanh(self.value)
        return _record(out, [(self, lambda g: g * (1.0 - out * out))])

    def clip(self, lo: float, hi: float):
        a = self.value
        inside = (a >= lo) & (a <= hi)
        return _record(np.clip(a, lo, hi), [(self, lambda g: g * inside)])

    # reductions / reshaping ---------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape).copy()

        return _record(np.sum(self.value, axis=axis, keepdims=keepdims), [(self, vjp)])

    def mean(self, axis=None, keepdims: bool = False):
        n = self.value.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        old = self.shape
        return _record(self.value.reshape(*shape), [(self, lambda g: g.reshape(old))])


def _has_fancy(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def _lift(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _record(value, parents: list[tuple[Var, Vjp]]) -> Var:
    live = [(p, f) for p, f in parents if p.requires_grad]
    if not live:
        return Var(value)
    tape = live[0][0].tape
    out = Var(value, tape, requires_grad=True)
    out.parents = tuple(live)
    tape.records.append(out)
    return out


def minimum(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    take_a = a.value <= b.value
    return _record(np.minimum(a.value, b.value), [
        (a, lambda g: _unbroadcast(g * take_a, a.shape)),
        (b, lambda g: _unbroadcast(g * ~take_a, b.shape)),
    ])


class Tape:
    def __init__(self):
        self.records: list[Var] = []
        self.leaves: list[Var] = []
        self.sweep_length = 0

    def leaf(self, value) -> Var:
        v = Var(value, self, requires_grad=True)
        self.leaves.append(v)
        return v

    def backward(self, out: Var) -> None:
        """Accumulate ``d out / d leaf`` into ``leaf.grad`` for every leaf."""
        if out.value.size != 1:
            raise ValueError("backward needs a scalar output")
        for v in self.leaves:
            v.grad = np.zeros_like(v.value)
        if not out.requires_grad:
            self.sweep_length = 0
            return
        for v in self.records:
            v.grad = None
        out.grad = np.ones_like(out.value)
        swept = 0
        for node in reversed(self.records):
            swept += 1
            if node.grad is None:
                continue
            for parent, vjp in node.parents:
                g = vjp(node.grad)
                parent.grad = g if parent.grad is None else parent.grad + g
        self.sweep_length = swept
