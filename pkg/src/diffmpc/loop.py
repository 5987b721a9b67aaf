"""Closed-loop experiment driver and run logging.

Per step: estimate the state (dynamic plants with MHE), solve the MPC
problem with the current parameter estimate, apply the first input to the
hidden-parameter plant, record the measurement, and refresh the parameter
estimate on scheduled steps. Static plants are measured after the input is
applied, so at ``t = 0`` control precedes the first identification.
"""
from __future__ import annotations

import csv
import json
import logging
import platform
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from diffmpc.beamline import BeamlineLattice, BeamlinePlant
from diffmpc.errors import ConfigError, InfeasibleConstraint
from diffmpc.estimation import (EstimationWindow, MheConfig, Record, estimate_theta, mhe_solve,
                                update_schedule)
from diffmpc.mpc import HorizonPlan, MpcConfig, solve_mpc, warm_start_shift
from diffmpc.optim import ExpDecay, StepDecay, lr_decay
from diffmpc.oscillator import OscillatorPlant
from diffmpc.plant import NoiseSpec, Plant, ThetaBox, plant_truth

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass
class PlantSpec:
    name: Literal["accelerator", "oscillator"] = "accelerator"
    stiffness: float = 1.0               # oscillator only
    dt: float = 0.1                      # oscillator only
    lattice: BeamlineLattice | None = None   # accelerator only, None = built-in lattice
    theta_lower: tuple | None = None
    theta_upper: tuple | None = None
    theta_prior: tuple | None = None
    theta_prior_weight: float | None = None

    def build(self) -> Plant:
        if self.name == "accelerator":
            plant = BeamlinePlant(self.lattice)
        elif self.name == "oscillator":
            plant = OscillatorPlant(self.stiffness, self.dt)
        else:
            raise ConfigError(f"plant.name: unknown plant {self.name!r}")
        box = plant.theta_box
        if any(v is not None for v in (self.theta_lower, self.theta_upper, self.theta_prior,
                                       self.theta_prior_weight)):
            lower = box.lower if self.theta_lower is None else self.theta_lower
            upper = box.upper if self.theta_upper is None else self.theta_upper
            if self.theta_prior is None:
                prior = 0.5 * (np.asarray(lower, float) + np.asarray(upper, float))
            else:
                prior = self.theta_prior
            weight = box.weight if self.theta_prior_weight is None else self.theta_prior_weight
            plant.theta_box = ThetaBox(lower, upper, prior, weight)
        return plant


@dataclass
class EstimationSettings:
    enabled: bool = True
    mode: Literal["sliding", "expanding"] = "expanding"
    size: int | None = None
    period: int = 1                          # M
    lambda_theta: float = 0.0
    output_weight: tuple | None = None       # R_theta diagonal
    lr: float = 1e-3
    iters: int = 50
    warm_optimizer: bool = True              # carry Adam moments across updates
    lr_schedule: StepDecay | ExpDecay | None = None   # indexed by update count
    anchor: Literal["plant", "mhe"] = "plant"
    concurrent: bool = False


@dataclass
class ExperimentConfig:
    plant: PlantSpec
    theta_true: tuple
    theta_init: tuple
    u_init: tuple
    mpc: MpcConfig
    estimation: EstimationSettings = field(default_factory=EstimationSettings)
    mhe: MheConfig | None = None
    x_init: tuple | None = None              # true initial state, dynamic plants
    x_hat_init: tuple | None = None          # initial state guess / first arrival prior
    noise_sigma: float = 0.0
    steps: int = 11
    seed: int = 0
    out_dir: str = "out"

    def validate(self, plant: Plant | None = None) -> Plant:
        """Check cross-field invariants and return the built plant."""
        plant = plant or self.plant.build()
        box = plant.theta_box
        for name in ("theta_true", "theta_init"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (plant.n_theta,):
                raise ConfigError(f"{name}: expected {plant.n_theta} entries, got {v.size}")
            if not box.contains(v):
                raise ConfigError(f"{name}: {v.tolist()} outside the admissible parameter box")
        if len(self.u_init) != plant.n_u:
            raise ConfigError(f"u_init: expected {plant.n_u} entries, got {len(self.u_init)}")
        if self.steps < 1:
            raise ConfigError("steps: must be at least 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma: must be nonnegative")
        if self.estimation.period < 1:
            raise ConfigError("estimation.period: must be at least 1")
        if plant.kind == "dynamic":
            if self.x_init is None or len(self.x_init) != plant.n_x:
                raise ConfigError(f"x_init: dynamic plant needs {plant.n_x} entries")
            if self.x_hat_init is not None and len(self.x_hat_init) != plant.n_x:
                raise ConfigError(f"x_hat_init: expected {plant.n_x} entries")
        else:
            if self.mhe is not None:
                raise ConfigError("mhe: state estimation needs a dynamic plant")
            if self.estimation.anchor == "mhe":
                raise ConfigError("estimation.anchor: 'mhe' needs a dynamic plant")
        if self.estimation.anchor == "mhe" and self.mhe is None:
            raise ConfigError("estimation.anchor: 'mhe' requires the mhe section")
        idx = self.mpc.tracked_outputs
        if idx is not None and any(not 0 <= i < plant.n_y for i in idx):
            raise ConfigError(f"mpc.tracked_outputs: indices must lie in [0, {plant.n_y})")
        for name in ("lower", "upper"):
            b = getattr(self.mpc, name)
            if b is not None and len(b) != plant.n_u:
                raise ConfigError(f"mpc.{name}: expected {plant.n_u} entries")
        if self.mpc.lower is not None and self.mpc.upper is not None:
            u0 = np.asarray(self.u_init, float)
            if np.any(u0 < np.asarray(self.mpc.lower)) or np.any(u0 > np.asarray(self.mpc.upper)):
                raise ConfigError("u_init: outside the input bounds")
        return plant


@dataclass
class StepRecord:
    step: int
    u: np.ndarray
    y: np.ndarray
    theta_used: np.ndarray        # estimate the MPC solved with
    theta_seq: int                # publication number of theta_used
    theta_hat: np.ndarray         # latest published estimate after this step
    mpc_cost_trace: list
    est_loss_trace: list = field(default_factory=list)
    est_final_loss: float | None = None
    x_hat: np.ndarray | None = None
    x_true: np.ndarray | None = None
    warning: str | None = None


@dataclass
class Publication:
    seq: int
    step: int          # estimation phase that produced it, -1 for the initial guess
    theta: np.ndarray


@dataclass
class RunLog:
    config: ExperimentConfig
    records: list[StepRecord] = field(default_factory=list)
    publications: list[Publication] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def inputs(self) -> np.ndarray:
        return np.array([r.u for r in self.records])

    def outputs(self) -> np.ndarray:
        return np.array([r.y for r in self.records])

    def thetas(self) -> np.ndarray:
        return np.array([r.theta_hat for r in self.records])


class _ThetaBoard:
    """Holds the published estimate; MPC reads snapshots, the estimator publishes."""

    def __init__(self, theta0):
        self._lock = threading.Lock()
        self._current = Publication(0, -1, np.array(theta0, dtype=float))
        self.history = [self._current]

    def snapshot(self) -> Publication:
        with self._lock:
            return self._current

    def publish(self, step: int, theta) -> Publication:
        with self._lock:
            pub = Publication(self._current.seq + 1, step, np.array(theta, dtype=float))
            self._current = pub
            self.history.append(pub)
            return pub


def _mhe_window(t, hist_u, hist_y, L):
    start = max(0, t - L)
    return start, hist_u[start:t], hist_y[start:t + 1]


def run_closed_loop(config: ExperimentConfig, progress=None) -> RunLog:
    """Run ``config.steps`` control steps and return the complete log.

    ``progress(t, record)`` is called after every step when given.
    """
    plant = config.validate()
    rng = np.random.default_rng(config.seed)
    noise = NoiseSpec(config.noise_sigma, rng) if config.noise_sigma else None
    est = config.estimation
    board = _ThetaBoard(config.theta_init)
    window = EstimationWindow(est.mode, est.size, est.output_weight,
                              plant.theta_box.prior, est.lambda_theta)
    runlog = RunLog(config)

    dynamic = plant.kind == "dynamic"
    x_true = np.array(config.x_init, dtype=float) if dynamic else None
    x_hat_init = np.array(config.x_hat_init if config.x_hat_init is not None
                          else (config.x_init if dynamic else ()), dtype=float)
    hist_u: list[np.ndarray] = []
    hist_y: list[np.ndarray] = []
    hist_xhat: list[np.ndarray] = []
    prev_traj: np.ndarray | None = None
    prev_start = 0

    u_prev = np.array(config.u_init, dtype=float)
    plan: HorizonPlan | None = None
    adam_state = None
    n_updates = 0
    pool = ThreadPoolExecutor(max_workers=1) if est.concurrent else None
    pending: tuple[Future, int] | None = None

    def collect(job):
        nonlocal adam_state
        future, t_sub = job
        res = future.result()
        adam_state = res.state
        board.publish(t_sub, res.theta)
        runlog.records[t_sub].est_loss_trace = res.loss_trace
        runlog.records[t_sub].est_final_loss = res.final_loss

    def estimate(records_snapshot, theta_start, state, n_done):
        win = EstimationWindow(est.mode, est.size, est.output_weight,
                               plant.theta_box.prior, est.lambda_theta)
        for r in records_snapshot:
            win.append(r)
        lr = lr_decay(est.lr_schedule, n_done, est.lr)
        return estimate_theta(win, theta_start, plant, est.iters, lr,
                              state if est.warm_optimizer else None)

    try:
        for t in range(config.steps):
            if pending is not None and pending[0].done():
                collect(pending)
                pending = None
            pub = board.snapshot()
            theta_used = pub.theta

            x_hat = None
            y_t = None
            if dynamic:
                y_t, x_next = plant_truth(plant, config.theta_true, noise,
                                        np.zeros(plant.n_u), x_true)
                hist_y.append(y_t)
                if config.mhe is not None:
                    L = config.mhe.window
                    start, us, ys = _mhe_window(t, hist_u, hist_y, L)
                    if start == 0 or prev_traj is None:
                        x_bar = x_hat_init
                    else:
                        x_bar = prev_traj[start - prev_start]
                    sol = mhe_solve(us, ys, theta_used, config.mhe, plant, x_bar)
                    prev_traj, prev_start = sol.trajectory, start
                    x_hat = sol.x_hat
                else:
                    x_hat = x_true.copy()
                hist_xhat.append(x_hat)

            warning = None
            warm = warm_start_shift(plan) if plan is not None else None
            try:
                sol_mpc = solve_mpc(x_hat, theta_used, warm, plant, config.mpc, u_prev, t=t)
                u_t = sol_mpc.u_applied
                plan = sol_mpc.plan
                cost_trace = sol_mpc.cost_trace
            except InfeasibleConstraint as exc:
                warning = f"step {t}: MPC infeasible ({exc}); holding previous input"
                log.warning(warning)
                u_t = u_prev.copy()
                plan = None
                cost_trace = []

            if dynamic:
                _, x_next = plant_truth(plant, config.theta_true, None, u_t, x_true)
                anchor = x_true.copy() if est.anchor == "plant" else x_hat.copy()
                record = Record(u_t.copy(), y_t, anchor, t)
            else:
                y_t, _ = plant_truth(plant, config.theta_true, noise, u_t)
                record = Record(u_t.copy(), y_t, None, t)
            hist_u.append(u_t.copy())
            window.append(record)

            rec = StepRecord(t, u_t.copy(), y_t.copy(), theta_used.copy(), pub.seq,
                             theta_used.copy(), cost_trace, x_hat=None if x_hat is None
                             else np.array(x_hat), x_true=None if x_true is None
                             else x_true.copy(), warning=warning)
            runlog.records.append(rec)

            if est.enabled and update_schedule(t, est.period):
                if pool is None:
                    res = estimate(window.records, board.snapshot().theta, adam_state, n_updates)
                    adam_state = res.state
                    board.publish(t, res.theta)
                    rec.est_loss_trace = res.loss_trace
                    rec.est_final_loss = res.final_loss
                else:
                    if pending is not None:
                        collect(pending)
                    pending = (pool.submit(estimate, window.records, board.snapshot().theta,
                                           adam_state, n_updates), t)
                n_updates += 1
            rec.theta_hat = board.snapshot().theta.copy()

            u_prev = u_t
            if dynamic:
                x_true = x_next
            if progress is not None:
                progress(t, rec)

        if pending is not None:
            collect(pending)
            runlog.records[-1].theta_hat = board.snapshot().theta.copy()
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
    runlog.publications = list(board.history)
    return runlog


def audit_inputs(runlog: RunLog) -> list[str]:
    """Exact check of box and rate limits on every applied input."""
    cfg = runlog.config.mpc
    problems = []
    u_prev = np.array(runlog.config.u_init, dtype=float)
    du = np.broadcast_to(np.asarray(cfg.du_max, dtype=float), u_prev.shape)
    for r in runlog.records:
        if np.any(np.abs(r.u - u_prev) > du):
            problems.append(f"step {r.step}: rate limit exceeded")
        if cfg.lower is not None and np.any(r.u < np.asarray(cfg.lower)):
            problems.append(f"step {r.step}: below lower bound")
        if cfg.upper is not None and np.any(r.u > np.asarray(cfg.upper)):
            problems.append(f"step {r.step}: above upper bound")
        u_prev = r.u
    return problems


def audit_loop_order(runlog: RunLog) -> list[str]:
    """Theta used at step t must have been published by step t-1's estimation."""
    published_at = {p.seq: p.step for p in runlog.publications}
    problems = []
    for r in runlog.records:
        if r.step == 0 and r.theta_seq != 0:
            problems.append("step 0 did not use the initial estimate")
        if published_at.get(r.theta_seq, np.inf) > r.step - 1:
            problems.append(f"step {r.step}: used estimate #{r.theta_seq} published too late")
    return problems


def audit_warm_start(runlog: RunLog) -> list[str]:
    """Compare each logged update after the first against a cold start from the prior.

    The cold start sees the same window, iteration count and learning rate but
    begins at the box prior with fresh optimizer moments. Sequential runs only.
    """
    cfg = runlog.config
    est = cfg.estimation
    plant = cfg.plant.build()
    window = EstimationWindow(est.mode, est.size, est.output_weight,
                              plant.theta_box.prior, est.lambda_theta)
    problems = []
    n_done = 0
    for r in runlog.records:
        anchor = None
        if r.x_true is not None:
            anchor = r.x_true if est.anchor == "plant" else r.x_hat
        window.append(Record(r.u, r.y, anchor, r.step))
        if not r.est_loss_trace:
            continue
        if n_done > 0:
            lr = lr_decay(est.lr_schedule, n_done, est.lr)
            cold = estimate_theta(window, plant.theta_box.prior, plant, est.iters, lr)
            if r.est_final_loss > cold.final_loss:
                problems.append(f"step {r.step}: warm loss {r.est_final_loss!r} above "
                                f"cold-start loss {cold.final_loss!r}")
        n_done += 1
    return problems


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def _write_csv(path: Path, header, rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def write_log(runlog: RunLog, out_dir) -> dict[str, Path]:
    """Write the run as CSV time series plus a JSON manifest.

    ``run.csv``: step, u[i], y[i], theta_hat[i], mpc_cost_first,
    mpc_cost_last, est_loss_first, est_loss_last (empty when no update).
    ``mpc_trace.csv`` / ``est_trace.csv``: step, iter, value.
    ``states.csv`` (dynamic plants): step, x_true[i], x_hat[i].
    """
    from diffmpc import __version__
    from diffmpc.config import config_to_dict

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    recs = runlog.records
    n_u = len(runlog.config.u_init)
    n_y = len(recs[0].y) if recs else 0
    n_th = len(runlog.config.theta_init)
    header = (["step"] + [f"u[{i}]" for i in range(n_u)] + [f"y[{i}]" for i in range(n_y)]
              + [f"theta_hat[{i}]" for i in range(n_th)]
              + ["mpc_cost_first", "mpc_cost_last", "est_loss_first", "est_loss_last"])
    rows = []
    for r in recs:
        mc = r.mpc_cost_trace
        el = r.est_loss_trace
        rows.append([r.step] + [_fmt(v) for v in r.u] + [_fmt(v) for v in r.y]
                    + [_fmt(v) for v in r.theta_hat]
                    + [_fmt(mc[0]) if mc else "", _fmt(mc[-1]) if mc else "",
                       _fmt(el[0]) if el else "", _fmt(r.est_final_loss) if el else ""])
    paths = {"run": out / "run.csv", "mpc_trace": out / "mpc_trace.csv",
             "est_trace": out / "est_trace.csv", "manifest": out / "manifest.json"}
    _write_csv(paths["run"], header, rows)
    _write_csv(paths["mpc_trace"], ["step", "iter", "cost"],
               [[r.step, k, _fmt(c)] for r in recs for k, c in enumerate(r.mpc_cost_trace)])
    _write_csv(paths["est_trace"], ["step", "iter", "loss"],
               [[r.step, k, _fmt(c)] for r in recs for k, c in enumerate(r.est_loss_trace)])
    if recs and recs[0].x_true is not None:
        n_x = len(recs[0].x_true)
        paths["states"] = out / "states.csv"
        _write_csv(paths["states"],
                   ["step"] + [f"x_true[{i}]" for i in range(n_x)]
                   + [f"x_hat[{i}]" for i in range(n_x)],
                   [[r.step] + [_fmt(v) for v in r.x_true] + [_fmt(v) for v in r.x_hat]
                    for r in recs])
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed": runlog.config.seed,
        "steps_completed": len(recs),
        "files": {k: p.name for k, p in paths.items() if k != "manifest"},
        "warnings": [r.warning for r in recs if r.warning],
        "config": config_to_dict(runlog.config),
    }
    try:
        paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {paths['manifest']}: {exc.strerror}") from exc
    return paths
