"""Differentiable plant contract and rollout machinery.

A plant is a pair of maps ``x+ = f(x, u; phi, theta)`` and
``y = h(x, u; phi, theta)``. Static plants have no state and only ``h``.
All maps take and return plain lists whose entries are floats or
:class:`~diffmpc.autodiff.Var`, so one implementation serves both the
simulated "real" plant and the differentiated model.
"""
from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from diffmpc.errors import DimensionMismatch, StaticPlantHasNoStep, WrongPlantKind


@dataclass(frozen=True)
class ThetaBox:
    """Admissible set for the unknown parameters, plus prior and its weight."""

    lower: np.ndarray
    upper: np.ndarray
    prior: np.ndarray
    weight: float = 0.0

    def __post_init__(self):
        for name in ("lower", "upper", "prior"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if not self.lower.shape == self.upper.shape == self.prior.shape:
            raise DimensionMismatch("theta bounds and prior must have one shape")
        if np.any(self.lower > self.prior) or np.any(self.prior > self.upper):
            raise ValueError("theta prior must lie inside its bounds")
        if self.weight < 0:
            raise ValueError("theta regularization weight must be nonnegative")

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))


class Plant(abc.ABC):
    """Base class for concrete simulators.

    Subclasses set the dimension attributes and implement :meth:`f` (dynamic
    plants only) and :meth:`h`. ``phi`` is whatever record the subclass
    needs; nothing outside the subclass reads it.
    """

    kind: Literal["dynamic", "static"] = "dynamic"
    n_x: int = 0
    n_u: int = 0
    n_y: int = 0
    n_theta: int = 0
    theta_box: ThetaBox

    def f(self, x: list, u: list, theta: list) -> list:
        raise StaticPlantHasNoStep(f"{type(self).__name__} is static and has no step map")

    @abc.abstractmethod
    def h(self, x: list | None, u: list, theta: list) -> list:
        ...


def _as_list(v, n: int, what: str) -> list:
    if isinstance(v, np.ndarray):
        v = v.tolist()
    else:
        v = list(v)
    if len(v) != n:
        raise DimensionMismatch(f"{what} has length {len(v)}, expected {n}")
    return v


def step(plant: Plant, x, u, theta) -> list:
    """One application of the dynamics map."""
    if plant.kind != "dynamic":
        raise StaticPlantHasNoStep(f"{type(plant).__name__} is static and has no step map")
    out = plant.f(_as_list(x, plant.n_x, "state"), _as_list(u, plant.n_u, "input"),
                  _as_list(theta, plant.n_theta, "theta"))
    return out


def measure(plant: Plant, x, u, theta) -> list:
    """The output map; ``x`` must be given iff the plant is dynamic."""
    if plant.kind == "dynamic":
        if x is None:
            raise DimensionMismatch("dynamic plant needs a state to measure")
        x = _as_list(x, plant.n_x, "state")
    elif x is not None and len(x) != 0:
        raise DimensionMismatch("static plant takes no state")
    else:
        x = None
    return plant.h(x, _as_list(u, plant.n_u, "input"), _as_list(theta, plant.n_theta, "theta"))


@dataclass
class RolloutResult:
    states: list = field(default_factory=list)   # x_0..x_N; empty for static plants
    outputs: list = field(default_factory=list)  # y_0..y_{N-1} (+ y_N when terminal)


def rollout(plant: Plant, x0, inputs: Sequence, theta, terminal: bool = False) -> RolloutResult:
    """Predicted trajectory under ``inputs``.

    With ``terminal`` a dynamic rollout also measures the final state (with
    the last input held); static plants ignore it.
    """
    if len(inputs) == 0:
        raise DimensionMismatch("rollout needs at least one input")
    theta = _as_list(theta, plant.n_theta, "theta")
    res = RolloutResult()
    if plant.kind == "static":
        res.outputs = [measure(plant, None, u, theta) for u in inputs]
        return res
    x = _as_list(x0, plant.n_x, "state")
    res.states.append(x)
    for u in inputs:
        res.outputs.append(measure(plant, x, u, theta))
        x = step(plant, x, u, theta)
        res.states.append(x)
    if terminal:
        res.outputs.append(measure(plant, x, inputs[-1], theta))
    return res


@dataclass
class NoiseSpec:
    """Additive zero-mean Gaussian measurement noise."""

    sigma: float = 0.0
    rng: np.random.Generator | None = None

    def sample(self, n: int) -> np.ndarray:
        if self.sigma == 0.0:
            return np.zeros(n)
        if self.rng is None:
            raise ValueError("noise with sigma > 0 needs an rng")
        return self.rng.normal(0.0, self.sigma, size=n)


def plant_truth(plant: Plant, theta_true, noise: NoiseSpec | None, u, x=None):
    """Evaluate the simulator at the hidden true parameters.

    Returns ``(y, x_next)``; ``x_next`` is None for static plants. ``y`` is
    measured at ``x`` (before ``u`` acts on the state) for dynamic plants.
    """
    theta = np.asarray(theta_true, dtype=float).tolist()
    u = np.asarray(u, dtype=float).tolist()
    if plant.kind == "static":
        if x is not None and len(x) != 0:
            raise WrongPlantKind("static plant takes no state")
        y = np.array(measure(plant, None, u, theta), dtype=float)
        x_next = None
    else:
        xs = np.asarray(x, dtype=float).tolist()
        y = np.array(measure(plant, xs, u, theta), dtype=float)
        x_next = np.array(step(plant, xs, u, theta), dtype=float)
    if noise is not None:
        y = y + noise.sample(y.size)
    return y, x_next
