"""Gradient-based receding-horizon control through a differentiable plant.

The plan is optimized with projected Adam: gradients of the horizon cost
come from the tape, box and rate limits are enforced by projection after
each step, and output limits enter the cost as a squared hinge.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from diffmpc.autodiff import hinge, value_and_grad, vsum
from diffmpc.optim import (BoxRateConstraint, StepDecay, lr_decay, project_sequence,
                           projected_adam)
from diffmpc.plant import Plant, rollout


@dataclass(frozen=True)
class Reference:
    """Piecewise-constant reference: ``segments[i] = (start_step, values)``."""

    segments: tuple

    def __post_init__(self):
        segs = tuple((int(s), tuple(float(v) for v in np.atleast_1d(vals)))
                     for s, vals in self.segments)
        if not segs or segs[0][0] != 0:
            raise ValueError("reference must start at step 0")
        if any(b[0] <= a[0] for a, b in zip(segs, segs[1:])):
            raise ValueError("reference segments must have increasing start steps")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def constant(cls, values) -> Reference:
        return cls(((0, values),))

    def at(self, t: int) -> np.ndarray:
        current = self.segments[0][1]
        for start, vals in self.segments:
            if start > t:
                break
            current = vals
        return np.array(current)

    def window(self, t: int, n: int) -> np.ndarray:
        return np.array([self.at(t + k) for k in range(n)])


@dataclass
class MpcConfig:
    horizon: int = 5
    reference: Reference = field(default_factory=lambda: Reference.constant([0.01, 0.01]))
    tracked_outputs: tuple | None = (6, 7)   # None tracks every output
    tracking_weight: float = 1.0
    input_weight: float = 0.0                # rho in rho * ||u||^2
    terminal_weight: float = 0.0
    lambda_smooth: float = 1e-4
    lambda_soft: float = 1.0
    y_max: float | None = 0.014
    lr: float = 1e-2
    iters: int = 50
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    du_max: float | np.ndarray = 0.1
    lr_schedule: StepDecay | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.iters < 0:
            raise ValueError("iters must be nonnegative")
        if self.lambda_smooth < 0 or self.lambda_soft < 0:
            raise ValueError("penalty weights must be nonnegative")

    def constraint(self, u_prev) -> BoxRateConstraint:
        u_prev = np.asarray(u_prev, dtype=float)
        n = u_prev.size
        lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, float)
        du = np.broadcast_to(np.asarray(self.du_max, dtype=float), (n,)).copy()
        return BoxRateConstraint(lower, upper, du, u_prev)


@dataclass
class HorizonPlan:
    inputs: np.ndarray                      # (N, n_u)
    u_prev: np.ndarray
    origin: Literal["cold", "shifted", "optimized"] = "cold"

    @classmethod
    def cold(cls, u_prev, horizon: int) -> HorizonPlan:
        u_prev = np.asarray(u_prev, dtype=float)
        return cls(np.tile(u_prev, (horizon, 1)), u_prev.copy(), "cold")


def warm_start_shift(previous: HorizonPlan) -> HorizonPlan:
    """Drop the first input and repeat the last one."""
    inputs = np.concatenate([previous.inputs[1:], previous.inputs[-1:]], axis=0)
    return HorizonPlan(inputs, previous.inputs[0].copy(), "shifted")


def smoothness(plan: Sequence[Sequence], u_prev) -> object:
    """Sum of squared consecutive input changes, starting from ``u_prev``."""
    terms = []
    prev = list(u_prev)
    for u in plan:
        terms.extend((a - b) * (a - b) for a, b in zip(u, prev))
        prev = u
    return vsum(terms)


def soft_penalty(outputs: Sequence[Sequence], y_max) -> object:
    """Sum of squared exceedances of ``y_max`` over all predicted outputs."""
    y_max = np.broadcast_to(np.asarray(y_max, dtype=float), (len(outputs[0]),)).tolist()
    return vsum(hinge(y, m) ** 2 for ys in outputs for y, m in zip(ys, y_max))


def _tracking(y, ref, idx):
    sel = y if idx is None else [y[i] for i in idx]
    return vsum((a - r) * (a - r) for a, r in zip(sel, ref))


def mpc_cost(plan, x_hat, theta_hat, plant: Plant, config: MpcConfig, u_prev,
             t: int = 0):
    """Horizon cost of ``plan`` (N rows of n_u scalars, floats or Vars).

    ``(1/N) sum_k [w ||y_k - r_{t+k}||^2 + rho ||u_k||^2] + w_f ||y_N - r_{t+N}||^2
    + lambda_smooth * smoothness + lambda_soft * soft_penalty``.
    """
    n = len(plan)
    theta = list(theta_hat)
    terminal = config.terminal_weight != 0.0 and plant.kind == "dynamic"
    res = rollout(plant, x_hat, plan, theta, terminal=terminal)
    refs = config.reference.window(t, n + 1).tolist()
    idx = config.tracked_outputs
    stage = []
    for k in range(n):
        term = config.tracking_weight * _tracking(res.outputs[k], refs[k], idx)
        if config.input_weight:
            term = term + config.input_weight * vsum(u * u for u in plan[k])
        stage.append(term)
    cost = vsum(stage) / n
    if config.terminal_weight != 0.0:
        y_end = res.outputs[n] if terminal else res.outputs[n - 1]
        cost = cost + config.terminal_weight * _tracking(y_end, refs[n], idx)
    if config.lambda_smooth:
        cost = cost + config.lambda_smooth * smoothness(plan, u_prev)
    if config.lambda_soft and config.y_max is not None:
        cost = cost + config.lambda_soft * soft_penalty(res.outputs[:n], config.y_max)
    return cost


@dataclass
class MpcSolution:
    u_applied: np.ndarray
    plan: HorizonPlan
    cost_trace: list


def solve_mpc(x_hat, theta_hat, warm: HorizonPlan | None, plant: Plant, config: MpcConfig,
              u_prev, t: int = 0, cycle: int | None = None) -> MpcSolution:
    """Projected-Adam solve of the horizon problem at step ``t``.

    Raises :class:`~diffmpc.errors.InfeasibleConstraint` if the box and the
    rate window around ``u_prev`` do not intersect.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    if not plant.theta_box.contains(theta_hat):
        raise ValueError(f"theta_hat {theta_hat.tolist()} outside the admissible box")
    u_prev = np.asarray(u_prev, dtype=float)
    n, m = config.horizon, plant.n_u
    start = warm.inputs if warm is not None else HorizonPlan.cold(u_prev, n).inputs
    constraint = config.constraint(u_prev)
    x_list = None if x_hat is None else np.asarray(x_hat, dtype=float).tolist()
    theta_list = theta_hat.tolist()

    def fg(flat):
        def cost(vs):
            plan = [vs[k * m:(k + 1) * m] for k in range(n)]
            return mpc_cost(plan, x_list, theta_list, plant, config, u_prev.tolist(), t)
        return value_and_grad(cost, flat)

    def proj(flat):
        return project_sequence(flat.reshape(n, m), constraint).ravel()

    lr = lr_decay(config.lr_schedule, t if cycle is None else cycle, config.lr)
    result = projected_adam(fg, start.ravel(), lr, config.iters, proj)
    inputs = result.x.reshape(n, m)
    plan = HorizonPlan(inputs, u_prev.copy(), "optimized")
    return MpcSolution(inputs[0].copy(), plan, result.trace)
