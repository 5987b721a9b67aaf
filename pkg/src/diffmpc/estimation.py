"""Online parameter fitting and moving-horizon state estimation.

Both are least-squares fits through the differentiable plant solved with
projected Adam. The state estimator optimizes only the window-initial state
and enforces the dynamics by rollout (single shooting).
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from diffmpc.autodiff import value_and_grad, vsum
from diffmpc.errors import EmptyWindow, WrongPlantKind
from diffmpc.optim import AdamState, project_box, projected_adam
from diffmpc.plant import Plant, measure, step


@dataclass(frozen=True)
class Record:
    u: np.ndarray
    y: np.ndarray
    x_anchor: np.ndarray | None = None
    step: int = -1


class EstimationWindow:
    """Time-ordered buffer of ``(u_k, y_k, x_k)`` records.

    ``sliding`` keeps the newest ``size`` records. ``expanding`` keeps every
    record; with a ``size`` it grows to that many and then drops the oldest.
    """

    def __init__(self, mode: Literal["sliding", "expanding"] = "sliding",
                 size: int | None = 5,
                 output_weight=None, prior=None, lambda_theta: float = 0.0):
        if mode not in ("sliding", "expanding"):
            raise ValueError(f"unknown window mode {mode!r}")
        if size is None and mode == "sliding":
            raise ValueError("a sliding window needs a size")
        if size is not None and size < 1:
            raise ValueError("window size must be at least 1")
        self.mode = mode
        self.size = size
        self.output_weight = None if output_weight is None else np.asarray(output_weight, float)
        self.prior = None if prior is None else np.asarray(prior, dtype=float)
        self.lambda_theta = float(lambda_theta)
        self._records: deque = deque(maxlen=size)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    @property
    def records(self) -> list[Record]:
        return list(self._records)

    def append(self, record: Record) -> None:
        if self._records and record.step >= 0 and record.step <= self._records[-1].step:
            raise ValueError("records must be appended in time order")
        self._records.append(record)


def estimation_loss(theta, window: EstimationWindow, plant: Plant):
    """Weighted output mismatch over the window plus the prior term.

    Dynamic plants are re-simulated from the first record's state anchor.
    """
    records = window.records
    if not records:
        raise EmptyWindow("estimation window holds no records")
    theta = list(theta)
    w = window.output_weight
    terms = []
    x = None
    if plant.kind == "dynamic":
        x = records[0].x_anchor
        if x is None:
            raise ValueError("dynamic estimation needs a state anchor on the first record")
        x = np.asarray(x, dtype=float).tolist()
    for r in records:
        u = r.u.tolist()
        y_hat = measure(plant, x, u, theta)
        for i, (a, b) in enumerate(zip(y_hat, r.y.tolist())):
            d = a - b
            terms.append(d * d if w is None else w[i] * d * d)
        if x is not None:
            x = step(plant, x, u, theta)
    loss = vsum(terms)
    if window.lambda_theta:
        prior = window.prior if window.prior is not None else plant.theta_box.prior
        loss = loss + window.lambda_theta * vsum((a - b) * (a - b)
                                                 for a, b in zip(theta, prior.tolist()))
    return loss


@dataclass
class EstimateResult:
    theta: np.ndarray
    loss_trace: list = field(default_factory=list)
    final_loss: float = float("nan")  # loss at the returned theta
    state: AdamState | None = None


def estimate_theta(window: EstimationWindow, theta_init, plant: Plant, iters: int = 50,
                   lr: float = 1e-3, state: AdamState | None = None) -> EstimateResult:
    """Projected-Adam fit of theta over the window, kept inside the plant's box.

    Pass the previous result's ``state`` to warm-start the optimizer moments
    as well as the point.
    """
    if len(window) == 0:
        raise EmptyWindow("estimation window holds no records")
    box = plant.theta_box
    theta_init = np.asarray(theta_init, dtype=float)
    if not box.contains(theta_init):
        raise ValueError(f"initial theta {theta_init.tolist()} outside the admissible box")

    def fg(th):
        return value_and_grad(lambda vs: estimation_loss(vs, window, plant), th)

    result = projected_adam(fg, theta_init, lr, iters,
                            lambda th: project_box(th, box.lower, box.upper), state)
    final = float(estimation_loss(result.x.tolist(), window, plant))
    return EstimateResult(result.x, result.trace, final, result.state)


@dataclass
class MheConfig:
    window: int = 20                       # L: inputs in the window
    output_weight: np.ndarray | None = None   # R diagonal, identity if None
    arrival_weight: np.ndarray | None = None  # P diagonal, identity if None
    lr: float = 5e-2
    iters: int = 200

    def __post_init__(self):
        if self.window < 0:
            raise ValueError("MHE window must be nonnegative")
        for name in ("output_weight", "arrival_weight"):
            v = getattr(self, name)
            if v is not None and np.any(np.asarray(v) <= 0):
                raise ValueError(f"{name} entries must be positive")


def mhe_loss(z0, us, ys, theta, plant: Plant, x_bar, config: MheConfig):
    """Output fit along the trajectory from ``z0`` plus the arrival cost."""
    r = config.output_weight
    p = config.arrival_weight
    theta = list(theta)
    terms = []
    z = list(z0)
    n = len(ys)
    for k in range(n):
        u = us[min(k, len(us) - 1)] if len(us) else [0.0] * plant.n_u
        for i, (a, b) in enumerate(zip(measure(plant, z, u, theta), ys[k])):
            d = a - b
            terms.append(d * d if r is None else r[i] * d * d)
        if k < n - 1:
            z = step(plant, z, us[k], theta)
    for i, (a, b) in enumerate(zip(z0, x_bar)):
        d = a - b
        terms.append(d * d if p is None else p[i] * d * d)
    return vsum(terms)


@dataclass
class MheResult:
    x_hat: np.ndarray           # terminal estimate z_t
    trajectory: np.ndarray      # z_{t-L} .. z_t
    loss_trace: list
    final_loss: float


def mhe_solve(us, ys, theta_hat, config: MheConfig, plant: Plant, x_bar,
              z_init=None) -> MheResult:
    """Estimate the current state from ``L`` inputs and ``L + 1`` outputs.

    Only the window-initial state is optimized; the rest of the trajectory
    follows from the dynamics. ``x_bar`` is the arrival prior.
    """
    if plant.kind != "dynamic":
        raise WrongPlantKind("moving-horizon estimation needs a dynamic plant")
    ys = [np.asarray(y, dtype=float).tolist() for y in ys]
    us = [np.asarray(u, dtype=float).tolist() for u in us]
    if not ys:
        raise EmptyWindow("MHE window holds no measurements")
    if len(us) != len(ys) - 1:
        raise ValueError(f"MHE needs one input fewer than outputs, got {len(us)} and {len(ys)}")
    theta = np.asarray(theta_hat, dtype=float).tolist()
    x_bar = np.asarray(x_bar, dtype=float).tolist()
    z0 = np.asarray(x_bar if z_init is None else z_init, dtype=float)

    def fg(z):
        return value_and_grad(lambda vs: mhe_loss(vs, us, ys, theta, plant, x_bar, config), z)

    result = projected_adam(fg, z0, config.lr, config.iters)
    traj = [result.x.tolist()]
    for u in us:
        traj.append(step(plant, traj[-1], u, theta))
    final = float(mhe_loss(result.x.tolist(), us, ys, theta, plant, x_bar, config))
    traj = np.array(traj, dtype=float)
    return MheResult(traj[-1].copy(), traj, result.trace, final)


def update_schedule(t: int, m: int) -> bool:
    """True on the steps where the parameter estimate is refreshed."""
    if m < 1:
        raise ValueError("update period must be at least 1")
    return t % m == 0
