"""Scalar reverse-mode automatic differentiation.

A :class:`Tape` records every scalar operation performed on :class:`Var`
objects in evaluation order; :func:`backward` sweeps it once in reverse to
obtain the gradient of one scalar output with respect to every recorded
input. Plain Python floats act as constants and are never recorded.

Node storage and the reverse sweep live in a compiled extension when it is
importable (``_tape_ext``) and fall back to ``_tape_py`` otherwise. Set
``DIFFMPC_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import math
import os
from contextlib import contextmanager

import numpy as np

from diffmpc.errors import DomainError, SeedNotScalar, TapeMismatch

from . import _tape_py

try:
    if os.environ.get("DIFFMPC_PURE_PYTHON", "") == "1":
        raise ImportError("pure Python backend forced")
    from . import _tape_ext
except ImportError:
    _tape_ext = None

BACKENDS = {"python": _tape_py.TapeBuffer}
if _tape_ext is not None:
    BACKENDS["cython"] = _tape_ext.TapeBuffer
DEFAULT_BACKEND = "cython" if _tape_ext is not None else "python"


@contextmanager
def use_backend(name: str):
    """Make ``name`` the backend of tapes created inside the block.

    Process-wide; meant for benchmarks and tests, not for threaded code.
    """
    global DEFAULT_BACKEND
    if name not in BACKENDS:
        raise ValueError(f"unknown tape backend {name!r}; available: {sorted(BACKENDS)}")
    previous, DEFAULT_BACKEND = DEFAULT_BACKEND, name
    try:
        yield
    finally:
        DEFAULT_BACKEND = previous

# op kinds stored with each node
LEAF, ADD, SUB, MUL, DIV, NEG = 0, 1, 2, 3, 4, 5
SIN, COS, SINH, COSH, SQRT, EXP, LOG, POW, MAX, ABS = 6, 7, 8, 9, 10, 11, 12, 13, 14, 15
OP_NAMES = {
    LEAF: "leaf", ADD: "add", SUB: "sub", MUL: "mul", DIV: "div", NEG: "neg",
    SIN: "sin", COS: "cos", SINH: "sinh", COSH: "cosh", SQRT: "sqrt",
    EXP: "exp", LOG: "log", POW: "pow", MAX: "max", ABS: "abs_smooth",
}


class Tape:
    """Append-only record of scalar operations.

    Tapes are cheap; the optimizers build a fresh one per iteration. A tape
    and its Vars belong to one thread.
    """

    __slots__ = ("_buf", "backend")

    def __init__(self, backend: str | None = None):
        self.backend = backend or DEFAULT_BACKEND
        try:
            self._buf = BACKENDS[self.backend]()
        except KeyError:
            raise ValueError(f"unknown tape backend {self.backend!r}; "
                             f"available: {sorted(BACKENDS)}") from None

    def __len__(self) -> int:
        return len(self._buf)

    def __repr__(self) -> str:
        return f"Tape(nodes={len(self)}, backend={self.backend!r})"

    def var(self, value: float) -> Var:
        value = float(value)
        return Var(value, self._buf.push(LEAF, value, -1, 0.0, -1, 0.0), self)

    def vars(self, values) -> list[Var]:
        return [self.var(v) for v in np.asarray(values, dtype=float).ravel().tolist()]

    def reset(self) -> None:
        """Drop all nodes. Vars created before the reset must not be reused."""
        self._buf.clear()

    def node(self, index: int) -> tuple:
        """``(op_name, value, parents, partials)`` for one node."""
        kind, value, parents, partials = self._buf.node(index)
        return OP_NAMES[kind], value, parents, partials


class Var:
    """A real value, optionally tracked on a tape.

    ``index == -1`` marks a constant; constants carry no tape and receive no
    adjoint.
    """

    __slots__ = ("value", "index", "tape")
    __array_ufunc__ = None  # make numpy scalars defer to our reflected ops

    def __init__(self, value: float, index: int = -1, tape: Tape | None = None):
        self.value = value
        self.index = index
        self.tape = tape

    @classmethod
    def const(cls, value: float) -> Var:
        return cls(float(value))

    @property
    def is_const(self) -> bool:
        return self.tape is None

    def __repr__(self) -> str:
        tag = "const" if self.tape is None else f"#{self.index}"
        return f"Var({self.value!r}, {tag})"

    def __float__(self) -> float:
        return self.value

    # comparisons act on values only
    def __lt__(self, other):
        return self.value < _val(other)

    def __le__(self, other):
        return self.value <= _val(other)

    def __gt__(self, other):
        return self.value > _val(other)

    def __ge__(self, other):
        return self.value >= _val(other)

    def __add__(self, other):
        if isinstance(other, Var):
            return _record2(ADD, self, other, self.value + other.value, 1.0, 1.0)
        return _record1(ADD, self, self.value + _num(other), 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Var):
            return _record2(SUB, self, other, self.value - other.value, 1.0, -1.0)
        return _record1(SUB, self, self.value - _num(other), 1.0)

    def __rsub__(self, other):
        return _record1(SUB, self, _num(other) - self.value, -1.0)

    def __mul__(self, other):
        if isinstance(other, Var):
            return _record2(MUL, self, other, self.value * other.value,
                            other.value, self.value)
        c = _num(other)
        return _record1(MUL, self, self.value * c, c)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            b = other.value
            if b == 0.0:
                raise DomainError("division by zero")
            q = self.value / b
            return _record2(DIV, self, other, q, 1.0 / b, -q / b)
        c = _num(other)
        if c == 0.0:
            raise DomainError("division by zero")
        return _record1(DIV, self, self.value / c, 1.0 / c)

    def __rtruediv__(self, other):
        a = self.value
        if a == 0.0:
            raise DomainError("division by zero")
        q = _num(other) / a
        return _record1(DIV, self, q, -q / a)

    def __neg__(self):
        return _record1(NEG, self, -self.value, -1.0)

    def __pos__(self):
        return self

    def __pow__(self, other):
        if isinstance(other, Var):
            a = self.value
            if a <= 0.0:
                raise DomainError(f"Var ** Var needs a positive base, got {a}")
            v = a ** other.value
            return _record2(POW, self, other, v, other.value * a ** (other.value - 1.0),
                            v * math.log(a))
        c = _num(other)
        if c == 2.0:
            return _record1(MUL, self, self.value * self.value, 2.0 * self.value)
        a = self.value
        if a < 0.0 and not float(c).is_integer():
            raise DomainError(f"negative base {a} with non-integer exponent {c}")
        if a == 0.0 and c < 1.0 and c != 0.0:
            raise DomainError(f"0 ** {c} has no finite derivative")
        return _record1(POW, self, a ** c, c * a ** (c - 1.0) if c != 0.0 else 0.0)

    def __rpow__(self, other):
        c = _num(other)
        if c <= 0.0:
            raise DomainError(f"constant ** Var needs a positive base, got {c}")
        v = c ** self.value
        return _record1(POW, self, v, v * math.log(c))


def _num(x) -> float:
    try:
        return float(x)
    except TypeError:
        raise TypeError(f"cannot combine Var with {type(x).__name__}") from None


def _val(x) -> float:
    return x.value if isinstance(x, Var) else float(x)


def _record1(kind, a: Var, value: float, da: float) -> Var:
    tape = a.tape
    if tape is None:
        return Var(value)
    return Var(value, tape._buf.push(kind, value, a.index, da, -1, 0.0), tape)


def _record2(kind, a: Var, b: Var, value: float, da: float, db: float) -> Var:
    ta, tb = a.tape, b.tape
    if ta is None:
        if tb is None:
            return Var(value)
        return Var(value, tb._buf.push(kind, value, b.index, db, -1, 0.0), tb)
    if tb is None:
        return Var(value, ta._buf.push(kind, value, a.index, da, -1, 0.0), ta)
    if ta is not tb:
        raise TapeMismatch("cannot combine Vars recorded on different tapes")
    return Var(value, ta._buf.push(kind, value, a.index, da, b.index, db), ta)


def lift(value: float, tape: Tape) -> Var:
    """Record ``value`` as a new leaf on ``tape``."""
    return tape.var(value)


class Gradient:
    """Adjoints of every node with respect to one seed node."""

    __slots__ = ("tape", "seed_index", "adjoints")

    def __init__(self, tape: Tape | None, seed_index: int, adjoints):
        self.tape = tape
        self.seed_index = seed_index
        self.adjoints = adjoints

    def wrt(self, v: Var) -> float:
        if v.tape is None:
            return 0.0
        if v.tape is not self.tape:
            raise TapeMismatch("Var does not belong to the differentiated tape")
        if v.index >= len(self.adjoints):
            return 0.0
        return self.adjoints[v.index]

    __getitem__ = wrt

    def wrt_many(self, vs) -> np.ndarray:
        return np.array([self.wrt(v) for v in vs], dtype=float)

    def leaves(self) -> dict[int, float]:
        """Adjoint per leaf node handle, for leaves up to the seed."""
        if self.tape is None:
            return {}
        kinds = self.tape._buf.kind
        n = len(self.adjoints)
        return {i: self.adjoints[i] for i in range(n) if kinds[i] == LEAF}


def backward(seed: Var) -> Gradient:
    """Reverse sweep from ``seed``; adjoint of the seed itself is 1."""
    if not isinstance(seed, Var):
        raise SeedNotScalar(f"seed must be a scalar Var, got {type(seed).__name__}")
    if seed.tape is None:
        return Gradient(None, -1, ())
    return Gradient(seed.tape, seed.index, seed.tape._buf.reverse(seed.index))


def value_and_grad(fn, x, backend: str | None = None) -> tuple[float, np.ndarray]:
    """Evaluate scalar ``fn(list_of_vars)`` at ``x`` and its gradient.

    ``x`` is flattened; ``fn`` receives a flat list of Vars and may return a
    Var or a plain number (in which case the gradient is zero).
    """
    x = np.asarray(x, dtype=float)
    tape = Tape(backend)
    xs = tape.vars(x)
    out = fn(xs)
    if not isinstance(out, Var):
        return float(out), np.zeros(x.shape)
    g = backward(out)
    return out.value, g.wrt_many(xs).reshape(x.shape)


def value_of(x):
    """Strip AD tracking from a scalar or (nested) sequence of scalars."""
    if isinstance(x, Var):
        return x.value
    if isinstance(x, (list, tuple)):
        return [value_of(e) for e in x]
    return float(x)
