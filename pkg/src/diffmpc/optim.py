"""Projected Adam and the feasibility projections used by every solver."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from diffmpc.errors import InfeasibleConstraint, LengthMismatch


@dataclass(frozen=True)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, n: int, learning_rate: float = 1e-2, **kw) -> AdamState:
        return cls(np.zeros(n), np.zeros(n), 0, learning_rate, **kw)


def adam_step(state: AdamState, point, gradient) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update; returns the new state and point."""
    x = np.asarray(point, dtype=float)
    g = np.asarray(gradient, dtype=float)
    if x.shape != g.shape or x.size != state.first_moment.size:
        raise LengthMismatch(
            f"point {x.shape}, gradient {g.shape}, state {state.first_moment.shape}")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * g.ravel()
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * g.ravel() ** 2
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    x_new = x - (state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)).reshape(x.shape)
    return replace(state, first_moment=m, second_moment=v, step_count=t), x_new


@dataclass(frozen=True)
class BoxRateConstraint:
    """``lower <= r <= upper`` and ``|r - anchor| <= rate_limit`` componentwise."""

    lower: np.ndarray
    upper: np.ndarray
    rate_limit: np.ndarray
    anchor: np.ndarray

    def __post_init__(self):
        for name in ("lower", "upper", "rate_limit", "anchor"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.lower.shape
        if not (self.upper.shape == self.rate_limit.shape == self.anchor.shape == n):
            raise LengthMismatch("constraint arrays must share one shape")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        if np.any(self.rate_limit < 0):
            raise ValueError("rate limit must be nonnegative")

    def with_anchor(self, anchor) -> BoxRateConstraint:
        return replace(self, anchor=np.asarray(anchor, dtype=float))

    def is_feasible(self, r) -> bool:
        r = np.asarray(r, dtype=float)
        return bool(np.all(r >= self.lower) and np.all(r <= self.upper)
                    and np.all(np.abs(r - self.anchor) <= self.rate_limit))


def project_box(candidate, lower, upper) -> np.ndarray:
    c = np.asarray(candidate, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if c.shape != lower.shape or c.shape != upper.shape:
        raise LengthMismatch(f"candidate {c.shape} vs bounds {lower.shape}/{upper.shape}")
    return np.minimum(np.maximum(c, lower), upper)


def project(candidate, constraint: BoxRateConstraint) -> np.ndarray:
    """Box clamp, then rate clamp around the anchor, then box clamp again."""
    c = np.asarray(candidate, dtype=float)
    if c.shape != constraint.lower.shape:
        raise LengthMismatch(f"candidate {c.shape} vs constraint {constraint.lower.shape}")
    r_lo, r_hi = rate_window(constraint.anchor, constraint.rate_limit)
    lo = np.maximum(constraint.lower, r_lo)
    hi = np.minimum(constraint.upper, r_hi)
    bad = np.flatnonzero(lo > hi)
    if bad.size:
        raise InfeasibleConstraint(
            f"box and rate window around the anchor are disjoint at indices {bad.tolist()}")
    r = np.minimum(np.maximum(c, constraint.lower), constraint.upper)
    r = np.minimum(np.maximum(r, r_lo), r_hi)
    return np.minimum(np.maximum(r, constraint.lower), constraint.upper)


def rate_window(anchor, rate_limit) -> tuple[np.ndarray, np.ndarray]:
    """``anchor -/+ rate_limit``, pulled inward until ``|r - anchor| <= rate_limit``
    holds exactly in floating point at both ends."""
    anchor = np.asarray(anchor, dtype=float)
    rate = np.asarray(rate_limit, dtype=float)
    lo = anchor - rate
    hi = anchor + rate
    while np.any(m := anchor - lo > rate):
        lo = np.where(m, np.nextafter(lo, np.inf), lo)
    while np.any(m := hi - anchor > rate):
        hi = np.where(m, np.nextafter(hi, -np.inf), hi)
    return lo, hi


def project_sequence(plan, constraint: BoxRateConstraint) -> np.ndarray:
    """Project rows of ``plan`` in order, each anchored at the previous
    projected row (the first at ``constraint.anchor``)."""
    plan = np.asarray(plan, dtype=float)
    out = np.empty_like(plan)
    anchor = constraint.anchor
    for k in range(plan.shape[0]):
        out[k] = project(plan[k], constraint.with_anchor(anchor))
        anchor = out[k]
    return out


@dataclass(frozen=True)
class StepDecay:
    factor: float
    after_cycle: int

    def __post_init__(self):
        if not 0.0 < self.factor <= 1.0:
            raise ValueError("decay factor must lie in (0, 1]")


@dataclass(frozen=True)
class ExpDecay:
    """``base_lr * factor ** cycle``."""

    factor: float

    def __post_init__(self):
        if not 0.0 < self.factor <= 1.0:
            raise ValueError("decay factor must lie in (0, 1]")


def lr_decay(schedule: StepDecay | ExpDecay | None, cycle: int, base_lr: float) -> float:
    if schedule is None:
        return base_lr
    if isinstance(schedule, ExpDecay):
        return base_lr * schedule.factor ** cycle
    if cycle < schedule.after_cycle:
        return base_lr
    return base_lr * schedule.factor


@dataclass
class AdamResult:
    x: np.ndarray
    trace: list[float] = field(default_factory=list)  # objective at each evaluated iterate
    state: AdamState | None = None


def projected_adam(value_and_grad, x0, lr: float, iters: int, projection=None,
                   state: AdamState | None = None) -> AdamResult:
    """Run ``iters`` Adam steps, projecting after each one.

    ``value_and_grad(x) -> (f, g)``; the trace records ``f`` at every point
    the gradient was taken. Passing the ``state`` of a previous run continues
    its moment estimates (at learning rate ``lr``) instead of starting fresh.
    """
    x = np.asarray(x0, dtype=float).copy()
    if projection is not None:
        x = projection(x)
    if state is None:
        state = AdamState.zeros(x.size, learning_rate=lr)
    else:
        state = replace(state, learning_rate=lr)
    trace = []
    for _ in range(iters):
        f, g = value_and_grad(x)
        trace.append(float(f))
        state, x = adam_step(state, x, g)
        if projection is not None:
            x = projection(x)
    return AdamResult(x, trace, state)
