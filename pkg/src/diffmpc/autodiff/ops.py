"""Elementary functions that accept either floats or :class:`Var`.

Floats go through :mod:`math` untouched, so the same model code runs as a
plain numeric simulation or as a recorded computation.
"""
from __future__ import annotations

import math

from diffmpc.errors import DomainError

from .tape import (ABS, COS, COSH, EXP, LOG, MAX, SIN, SINH, SQRT, Var,
                   _record1)

# floor used only in the derivative of sqrt near 0
SQRT_GRAD_FLOOR = 1e-30


def sin(x):
    if isinstance(x, Var):
        return _record1(SIN, x, math.sin(x.value), math.cos(x.value))
    return math.sin(x)


def cos(x):
    if isinstance(x, Var):
        return _record1(COS, x, math.cos(x.value), -math.sin(x.value))
    return math.cos(x)


def sinh(x):
    if isinstance(x, Var):
        return _record1(SINH, x, math.sinh(x.value), math.cosh(x.value))
    return math.sinh(x)


def cosh(x):
    if isinstance(x, Var):
        return _record1(COSH, x, math.cosh(x.value), math.sinh(x.value))
    return math.cosh(x)


def exp(x):
    if isinstance(x, Var):
        v = math.exp(x.value)
        return _record1(EXP, x, v, v)
    return math.exp(x)


def log(x):
    a = x.value if isinstance(x, Var) else x
    if a <= 0.0:
        raise DomainError(f"log of non-positive value {a}")
    if isinstance(x, Var):
        return _record1(LOG, x, math.log(a), 1.0 / a)
    return math.log(a)


def sqrt(x):
    """Square root; at 0 the partial is taken at ``SQRT_GRAD_FLOOR``."""
    a = x.value if isinstance(x, Var) else x
    if a < 0.0:
        raise DomainError(f"sqrt of negative value {a}")
    v = math.sqrt(a)
    if isinstance(x, Var):
        return _record1(SQRT, x, v, 0.5 / math.sqrt(max(a, SQRT_GRAD_FLOOR)))
    return v


def power(x, p):
    return x ** p


def square(x):
    return x * x


def maximum(x, c: float):
    """``max(x, c)`` for constant ``c``; subgradient 0 at the kink."""
    if isinstance(x, Var):
        if x.value > c:
            return _record1(MAX, x, x.value, 1.0)
        return _record1(MAX, x, float(c), 0.0)
    return max(x, c)


def hinge(x, threshold: float):
    """``max(x - threshold, 0)``."""
    return maximum(x - threshold, 0.0)


def smooth_abs(x, eps: float = 1e-12):
    """``sqrt(x**2 + eps**2)``: differentiable everywhere."""
    a = x.value if isinstance(x, Var) else x
    v = math.sqrt(a * a + eps * eps)
    if isinstance(x, Var):
        return _record1(ABS, x, v, a / v)
    return v


def vsum(xs):
    """Sum starting from an exact 0.0 (keeps constants constant)."""
    total = 0.0
    for x in xs:
        total = total + x
    return total
