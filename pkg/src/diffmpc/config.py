"""YAML experiment files and the built-in default scenarios.

Every section maps onto one dataclass; unknown keys are rejected and every
error names the offending key path (``mpc.reference[1].values``).
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import yaml

from diffmpc.beamline import (DEFAULT_INITIAL_SETPOINTS, DEFAULT_THETA_TRUE, BeamlineLattice,
                              default_lattice, setpoint_bounds)
from diffmpc.errors import ConfigError
from diffmpc.estimation import MheConfig
from diffmpc.loop import SCHEMA_VERSION, EstimationSettings, ExperimentConfig, PlantSpec
from diffmpc.mpc import MpcConfig, Reference
from diffmpc.optim import ExpDecay, StepDecay

_MISSING = object()


class _Section:
    """Typed reads from one mapping, tracking the key path and unread keys."""

    def __init__(self, data, path: str):
        if not isinstance(data, dict):
            raise ConfigError(f"{path or '<root>'}: expected a mapping, got {type(data).__name__}")
        self.data = data
        self.path = path
        self.seen: set[str] = set()

    def key(self, name: str) -> str:
        return f"{self.path}.{name}" if self.path else name

    def raw(self, name, default=_MISSING):
        self.seen.add(name)
        if name not in self.data:
            if default is _MISSING:
                raise ConfigError(f"{self.key(name)}: required key missing")
            return default
        return self.data[name]

    def number(self, name, default=_MISSING, *, positive=False, nonneg=False, integer=False):
        v = self.raw(name, default)
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{self.key(name)}: expected a number, got {v!r}")
        if integer:
            if not float(v).is_integer():
                raise ConfigError(f"{self.key(name)}: expected an integer, got {v!r}")
            v = int(v)
        else:
            v = float(v)
            if not math.isfinite(v):
                raise ConfigError(f"{self.key(name)}: must be finite")
        if positive and not v > 0:
            raise ConfigError(f"{self.key(name)}: must be positive, got {v!r}")
        if nonneg and v < 0:
            raise ConfigError(f"{self.key(name)}: must be nonnegative, got {v!r}")
        return v

    def vector(self, name, default=_MISSING, length=None, *, positive=False):
        v = self.raw(name, default)
        if v is None:
            return None
        return _vector(v, self.key(name), length, positive=positive)

    def boolean(self, name, default=_MISSING):
        v = self.raw(name, default)
        if not isinstance(v, bool):
            raise ConfigError(f"{self.key(name)}: expected true or false, got {v!r}")
        return v

    def choice(self, name, options, default=_MISSING):
        v = self.raw(name, default)
        if v not in options:
            raise ConfigError(f"{self.key(name)}: expected one of {list(options)}, got {v!r}")
        return v

    def sub(self, name, default=_MISSING):
        v = self.raw(name, default)
        if v is None:
            return None
        return _Section(v, self.key(name))

    def done(self):
        extra = sorted(set(self.data) - self.seen)
        if extra:
            raise ConfigError(f"{self.key(extra[0])}: unknown key")


def _vector(v, path, length=None, *, positive=False) -> tuple:
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = [v]
    if not isinstance(v, (list, tuple)):
        raise ConfigError(f"{path}: expected a list of numbers, got {v!r}")
    out = []
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
            raise ConfigError(f"{path}[{i}]: expected a finite number, got {x!r}")
        if positive and not x > 0:
            raise ConfigError(f"{path}[{i}]: must be positive")
        out.append(float(x))
    if length is not None and len(out) != length:
        raise ConfigError(f"{path}: expected {length} entries, got {len(out)}")
    return tuple(out)


def _schedule_from(sec: _Section | None):
    if sec is None:
        return None
    kind = sec.choice("kind", ("exponential", "step"))
    factor = sec.number("factor")
    if not 0 < factor <= 1:
        raise ConfigError(f"{sec.key('factor')}: must lie in (0, 1]")
    if kind == "step":
        sched = StepDecay(factor, sec.number("after", integer=True, nonneg=True))
    else:
        sched = ExpDecay(factor)
    sec.done()
    return sched


def _schedule_to(s):
    if s is None:
        return None
    if isinstance(s, ExpDecay):
        return {"kind": "exponential", "factor": s.factor}
    return {"kind": "step", "factor": s.factor, "after": s.after_cycle}


def _plant_from(sec: _Section) -> PlantSpec:
    name = sec.choice("name", ("accelerator", "oscillator"))
    spec = PlantSpec(name=name)
    if name == "oscillator":
        spec.stiffness = sec.number("stiffness", 1.0, positive=True)
        spec.dt = sec.number("dt", 0.1, positive=True)
    else:
        lat = sec.raw("lattice", None)
        if lat is not None:
            try:
                spec.lattice = BeamlineLattice.from_dict(_Section(lat, sec.key("lattice")).data)
            except ConfigError as exc:
                raise ConfigError(f"{sec.key('lattice')}.{exc}") from None
    spec.theta_lower = sec.vector("theta_lower", None)
    spec.theta_upper = sec.vector("theta_upper", None)
    spec.theta_prior = sec.vector("theta_prior", None)
    spec.theta_prior_weight = sec.number("theta_prior_weight", None, nonneg=True)
    sec.done()
    try:
        spec.build()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{sec.path}: {exc}") from None
    return spec


def _mpc_from(sec: _Section) -> MpcConfig:
    ref_raw = sec.raw("reference")
    if not isinstance(ref_raw, list) or not ref_raw:
        raise ConfigError(f"{sec.key('reference')}: expected a nonempty list of segments")
    segments = []
    for i, seg in enumerate(ref_raw):
        s = _Section(seg, f"{sec.key('reference')}[{i}]")
        segments.append((s.number("start", integer=True, nonneg=True), s.vector("values")))
        s.done()
    try:
        reference = Reference(tuple(segments))
    except ValueError as exc:
        raise ConfigError(f"{sec.key('reference')}: {exc}") from None
    tracked = sec.raw("tracked_outputs", None)
    if tracked is not None:
        if not isinstance(tracked, list) or not all(
                isinstance(i, int) and not isinstance(i, bool) for i in tracked):
            raise ConfigError(f"{sec.key('tracked_outputs')}: expected a list of integers")
        tracked = tuple(tracked)
    du = sec.raw("du_max", 0.1)
    du = (sec.number("du_max", positive=True) if isinstance(du, (int, float))
          else sec.vector("du_max", positive=True))
    cfg = MpcConfig(
        horizon=sec.number("horizon", integer=True, positive=True),
        reference=reference,
        tracked_outputs=tracked,
        tracking_weight=sec.number("tracking_weight", 1.0, nonneg=True),
        input_weight=sec.number("input_weight", 0.0, nonneg=True),
        terminal_weight=sec.number("terminal_weight", 0.0, nonneg=True),
        lambda_smooth=sec.number("lambda_smooth", 0.0, nonneg=True),
        lambda_soft=sec.number("lambda_soft", 0.0, nonneg=True),
        y_max=sec.number("y_max", None, positive=True),
        lr=sec.number("lr", positive=True),
        iters=sec.number("iters", integer=True, nonneg=True),
        lower=sec.vector("lower", None),
        upper=sec.vector("upper", None),
        du_max=du,
        lr_schedule=_schedule_from(sec.sub("lr_schedule", None)),
    )
    if cfg.lower is not None and cfg.upper is not None:
        if len(cfg.lower) != len(cfg.upper):
            raise ConfigError(f"{sec.key('upper')}: length differs from lower")
        bad = [i for i, (a, b) in enumerate(zip(cfg.lower, cfg.upper)) if a > b]
        if bad:
            raise ConfigError(f"{sec.key('lower')}[{bad[0]}]: exceeds the upper bound")
    sec.done()
    return cfg


def _estimation_from(sec: _Section | None) -> EstimationSettings:
    if sec is None:
        return EstimationSettings(enabled=False)
    mode = sec.choice("mode", ("sliding", "expanding"), "expanding")
    size = sec.number("size", None, integer=True, positive=True)
    if mode == "sliding" and size is None:
        raise ConfigError(f"{sec.key('size')}: a sliding window needs a size")
    est = EstimationSettings(
        enabled=sec.boolean("enabled", True),
        mode=mode,
        size=size,
        period=sec.number("period", 1, integer=True, positive=True),
        lambda_theta=sec.number("lambda_theta", 0.0, nonneg=True),
        output_weight=sec.vector("output_weight", None, positive=True),
        lr=sec.number("lr", positive=True),
        iters=sec.number("iters", integer=True, nonneg=True),
        warm_optimizer=sec.boolean("warm_optimizer", True),
        lr_schedule=_schedule_from(sec.sub("lr_schedule", None)),
        anchor=sec.choice("anchor", ("plant", "mhe"), "plant"),
        concurrent=sec.boolean("concurrent", False),
    )
    sec.done()
    return est


def _mhe_from(sec: _Section | None) -> MheConfig | None:
    if sec is None:
        return None
    ow = sec.vector("output_weight", None, positive=True)
    aw = sec.vector("arrival_weight", None, positive=True)
    cfg = MheConfig(
        window=sec.number("window", integer=True, positive=True),
        output_weight=ow,
        arrival_weight=aw,
        lr=sec.number("lr", positive=True),
        iters=sec.number("iters", integer=True, nonneg=True),
    )
    sec.done()
    return cfg


def config_from_dict(data) -> ExperimentConfig:
    """Build and validate an :class:`ExperimentConfig` from parsed YAML."""
    root = _Section(data, "")
    version = root.number("schema_version", SCHEMA_VERSION, integer=True)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported version {version}")
    plant = _plant_from(root.sub("plant"))
    cfg = ExperimentConfig(
        plant=plant,
        theta_true=root.vector("theta_true"),
        theta_init=root.vector("theta_init"),
        u_init=root.vector("u_init"),
        mpc=_mpc_from(root.sub("mpc")),
        estimation=_estimation_from(root.sub("estimation", None)),
        mhe=_mhe_from(root.sub("mhe", None)),
        x_init=root.vector("x_init", None),
        x_hat_init=root.vector("x_hat_init", None),
        noise_sigma=root.number("noise_sigma", 0.0, nonneg=True),
        steps=root.number("steps", integer=True, positive=True),
        seed=root.number("seed", 0, integer=True, nonneg=True),
        out_dir=str(root.raw("out_dir", "out")),
    )
    root.done()
    cfg.validate()
    return cfg


def _list(v):
    if v is None:
        return None
    return [float(x) for x in np.atleast_1d(v)]


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Plain-data form of ``cfg``; :func:`config_from_dict` inverts it."""
    p = cfg.plant
    plant = {"name": p.name}
    if p.name == "oscillator":
        plant.update(stiffness=p.stiffness, dt=p.dt)
    elif p.lattice is not None:
        plant["lattice"] = p.lattice.to_dict()
    for key in ("theta_lower", "theta_upper", "theta_prior"):
        if getattr(p, key) is not None:
            plant[key] = _list(getattr(p, key))
    if p.theta_prior_weight is not None:
        plant["theta_prior_weight"] = p.theta_prior_weight
    m = cfg.mpc
    mpc = {
        "horizon": m.horizon,
        "reference": [{"start": s, "values": list(v)} for s, v in m.reference.segments],
        "tracked_outputs": None if m.tracked_outputs is None else list(m.tracked_outputs),
        "tracking_weight": m.tracking_weight,
        "input_weight": m.input_weight,
        "terminal_weight": m.terminal_weight,
        "lambda_smooth": m.lambda_smooth,
        "lambda_soft": m.lambda_soft,
        "y_max": m.y_max,
        "lr": m.lr,
        "iters": m.iters,
        "lower": _list(m.lower),
        "upper": _list(m.upper),
        "du_max": (float(m.du_max) if np.ndim(m.du_max) == 0 else _list(m.du_max)),
        "lr_schedule": _schedule_to(m.lr_schedule),
    }
    e = cfg.estimation
    out = {
        "schema_version": SCHEMA_VERSION,
        "plant": plant,
        "theta_true": _list(cfg.theta_true),
        "theta_init": _list(cfg.theta_init),
        "u_init": _list(cfg.u_init),
        "x_init": _list(cfg.x_init),
        "x_hat_init": _list(cfg.x_hat_init),
        "noise_sigma": cfg.noise_sigma,
        "steps": cfg.steps,
        "seed": cfg.seed,
        "out_dir": cfg.out_dir,
        "mpc": mpc,
        "estimation": {
            "enabled": e.enabled,
            "mode": e.mode,
            "size": e.size,
            "period": e.period,
            "lambda_theta": e.lambda_theta,
            "output_weight": _list(e.output_weight),
            "lr": e.lr,
            "iters": e.iters,
            "warm_optimizer": e.warm_optimizer,
            "lr_schedule": _schedule_to(e.lr_schedule),
            "anchor": e.anchor,
            "concurrent": e.concurrent,
        },
        "mhe": None if cfg.mhe is None else {
            "window": cfg.mhe.window,
            "output_weight": _list(cfg.mhe.output_weight),
            "arrival_weight": _list(cfg.mhe.arrival_weight),
            "lr": cfg.mhe.lr,
            "iters": cfg.mhe.iters,
        },
    }
    return out


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    return config_from_dict(data)


def dump_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))
    return path


def default_accelerator_config() -> ExperimentConfig:
    """Eleven tuning steps from an infeasible start, estimate at twice the truth."""
    nominal = default_lattice().nominal_setpoints()
    lower, upper = setpoint_bounds(nominal, 0.5)
    return ExperimentConfig(
        plant=PlantSpec("accelerator"),
        theta_true=DEFAULT_THETA_TRUE,
        theta_init=tuple(2.0 * v for v in DEFAULT_THETA_TRUE),
        u_init=DEFAULT_INITIAL_SETPOINTS,
        mpc=MpcConfig(
            horizon=5,
            reference=Reference.constant([0.01, 0.01]),
            tracked_outputs=(6, 7),
            tracking_weight=1.0,
            lambda_smooth=1e-4,
            lambda_soft=1.0,
            y_max=0.014,
            lr=1e-2,
            iters=50,
            lower=tuple(lower.tolist()),
            upper=tuple(upper.tolist()),
            du_max=0.1,
        ),
        estimation=EstimationSettings(
            mode="expanding", size=None, period=1, lambda_theta=0.0,
            lr=1e-3, iters=50, warm_optimizer=True, lr_schedule=ExpDecay(0.7)),
        steps=11,
        seed=0,
        out_dir="out/accelerator",
    )


def default_oscillator_config() -> ExperimentConfig:
    """Position tracking with hidden damping, MHE every step, estimation every 5."""
    return ExperimentConfig(
        plant=PlantSpec("oscillator", stiffness=1.0, dt=0.1),
        theta_true=(0.5,),
        theta_init=(1.0,),
        u_init=(0.0,),
        x_init=(0.0, 0.0),
        x_hat_init=(0.2, -0.2),
        mpc=MpcConfig(
            horizon=20,
            reference=Reference(((0, (1.0,)), (150, (0.5,)))),
            tracked_outputs=None,
            tracking_weight=1.0,
            input_weight=1e-3,
            terminal_weight=1.0,
            lambda_smooth=0.0,
            lambda_soft=0.0,
            y_max=None,
            lr=5e-2,
            iters=30,
            lower=(-3.0,),
            upper=(3.0,),
            du_max=0.1,
        ),
        estimation=EstimationSettings(
            mode="sliding", size=25, period=5, lambda_theta=0.0,
            lr=5e-2, iters=50, warm_optimizer=True, lr_schedule=ExpDecay(0.8)),
        mhe=MheConfig(window=20, lr=5e-2, iters=100),
        noise_sigma=0.0,
        steps=200,
        seed=0,
        out_dir="out/oscillator",
    )
