"""Registered gradient checks: every objective the solvers differentiate.

Each case pairs an objective with a random feasible point. The suite is what
``diffmpc grad-check`` runs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from diffmpc.autodiff import GradCheckReport, grad_check
from diffmpc.beamline import (DEFAULT_THETA_TRUE, BeamlinePlant, default_lattice,
                              setpoint_bounds)
from diffmpc.estimation import EstimationWindow, Record, estimation_loss
from diffmpc.mpc import MpcConfig, Reference, mpc_cost
from diffmpc.oscillator import OscillatorPlant
from diffmpc.plant import plant_truth

GRAD_TOL = 1e-5
FD_STEP = 3e-6   # near the cube root of machine epsilon, balances truncation and roundoff


@dataclass
class GradientCase:
    name: str
    fn: Callable
    point: np.ndarray
    scale: np.ndarray | float = 1.0


def _beamline_cases(rng: np.random.Generator):
    plant = BeamlinePlant()
    lo, hi = setpoint_bounds(default_lattice().nominal_setpoints())
    theta_ref = np.asarray(DEFAULT_THETA_TRUE)
    cfg = MpcConfig(horizon=3, lower=lo, upper=hi)
    n, m = cfg.horizon, plant.n_u
    u_prev = rng.uniform(lo, hi)
    plan = rng.uniform(lo, hi, size=(n, m))
    theta = rng.uniform(0.5, 1.5) * theta_ref * rng.uniform(0.8, 1.2, size=4)
    theta_scale = np.full(4, 1e-3)

    def cost(vs):
        rows = [vs[k * m:(k + 1) * m] for k in range(n)]
        return mpc_cost(rows, None, vs[n * m:], plant, cfg, u_prev.tolist())

    point = np.concatenate([plan.ravel(), theta])
    scale = np.concatenate([np.ones(n * m), theta_scale])
    yield GradientCase("beamline/mpc_cost", cost, point, scale)

    window = EstimationWindow("expanding", None)
    theta_data = theta_ref * rng.uniform(0.7, 1.3, size=4)
    for k in range(5):
        u = rng.uniform(lo, hi)
        y, _ = plant_truth(plant, theta_data, None, u)
        window.append(Record(u, y, None, k))
    yield GradientCase("beamline/estimation_loss",
                       lambda vs: estimation_loss(vs, window, plant), theta, theta_scale)


def _oscillator_cases(rng: np.random.Generator):
    plant = OscillatorPlant()
    cfg = MpcConfig(horizon=10, reference=Reference.constant([1.0]), tracked_outputs=None,
                    input_weight=1e-3, terminal_weight=1.0, lambda_smooth=1e-2,
                    lambda_soft=1.0, y_max=1.5, lower=[-3.0], upper=[3.0])
    n = cfg.horizon
    x = rng.uniform(-1.0, 1.0, size=2)
    plan = rng.uniform(-3.0, 3.0, size=n)
    theta = rng.uniform(0.05, 5.0, size=1)
    u_prev = [float(plan[0])]

    def cost(vs):
        rows = [[v] for v in vs[:n]]
        return mpc_cost(rows, vs[n:n + 2], vs[n + 2:], plant, cfg, u_prev)

    yield GradientCase("oscillator/mpc_cost", cost, np.concatenate([plan, x, theta]))

    window = EstimationWindow("sliding", 15, lambda_theta=1e-6)
    xs = rng.uniform(-1.0, 1.0, size=2)
    theta_data = rng.uniform(0.05, 5.0, size=1)
    anchor = xs.copy()
    for k in range(15):
        u = rng.uniform(-1.0, 1.0, size=1)
        y, xn = plant_truth(plant, theta_data, None, u, xs)
        window.append(Record(u, y, anchor if k == 0 else xs.copy(), k))
        xs = xn
    yield GradientCase("oscillator/estimation_loss",
                       lambda vs: estimation_loss(vs, window, plant), theta)


def registered_cases(n_points: int = 100, seed: int = 0):
    """``n_points`` random draws per plant, each yielding an MPC and an estimation case."""
    rng = np.random.default_rng(seed)
    for _ in range(n_points):
        yield from _beamline_cases(rng)
    for _ in range(n_points):
        yield from _oscillator_cases(rng)


def run_grad_checks(n_points: int = 100, seed: int = 0,
                    step: float = FD_STEP) -> list[tuple[str, GradCheckReport]]:
    return [(c.name, grad_check(c.fn, c.point, step=step, scale=c.scale))
            for c in registered_cases(n_points, seed)]
