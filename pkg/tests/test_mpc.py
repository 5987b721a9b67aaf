import numpy as np
import pytest

from diffmpc.autodiff import grad_check
from diffmpc.beamline import DEFAULT_THETA_TRUE, BeamlinePlant
from diffmpc.config import default_accelerator_config, default_oscillator_config
from diffmpc.errors import InfeasibleConstraint
from diffmpc.mpc import (HorizonPlan, MpcConfig, Reference, mpc_cost, smoothness, soft_penalty,
                         solve_mpc, warm_start_shift)
from diffmpc.oscillator import OscillatorPlant
from diffmpc.plant import Plant, ThetaBox, measure

ACC = default_accelerator_config()
OSC = default_oscillator_config()
PLANT = BeamlinePlant()
THETA_HAT = [2 * t for t in DEFAULT_THETA_TRUE]
U0 = np.array(ACC.u_init)


class EightOutputs(Plant):
    """Static stub: outputs 0..5 follow theta, outputs 6..7 follow u."""

    kind = "static"
    n_u, n_y, n_theta = 2, 8, 1

    def __init__(self):
        self.theta_box = ThetaBox([-10.0], [10.0], [0.0])

    def h(self, x, u, theta):
        return [theta[0] * (i + 1) for i in range(6)] + [u[0] * u[0], u[1]]


def test_reference():
    r = Reference(((0, (1.0,)), (3, (0.5,))))
    np.testing.assert_array_equal(r.window(1, 4).ravel(), [1.0, 1.0, 0.5, 0.5])
    with pytest.raises(ValueError):
        Reference(((1, (1.0,)),))
    with pytest.raises(ValueError):
        Reference(((0, (1.0,)), (0, (2.0,))))


def test_config_validation():
    with pytest.raises(ValueError):
        MpcConfig(horizon=0)
    with pytest.raises(ValueError):
        MpcConfig(lambda_soft=-1.0)
    with pytest.raises(ValueError):
        MpcConfig(lambda_smooth=-1e-4)


def test_zero_cost_at_target():
    y = measure(PLANT, None, U0, DEFAULT_THETA_TRUE)
    cfg = MpcConfig(reference=Reference.constant([y[6], y[7]]), y_max=1.0)
    plan = [U0.tolist()] * cfg.horizon
    assert mpc_cost(plan, None, DEFAULT_THETA_TRUE, PLANT, cfg, U0.tolist()) == 0.0


def test_smoothness_single_jump():
    u_prev = [0.3, -0.2]
    delta = [0.05, -0.02]
    first = [a + d for a, d in zip(u_prev, delta)]
    val = smoothness([first, first, first], u_prev)
    assert val == pytest.approx(sum(d * d for d in delta), rel=1e-14)


def test_soft_penalty_single_exceedance():
    m = 0.003
    outs = [[0.010, 0.012], [0.014 + m, 0.0]]
    assert soft_penalty(outs, 0.014) == pytest.approx(m * m, rel=1e-12)
    assert soft_penalty([[0.01, 0.014]], 0.014) == 0.0


def test_terminal_diag_ignores_other_outputs():
    cfg = MpcConfig(horizon=3, reference=Reference.constant([0.2, 0.1]), lambda_soft=0.0,
                    lambda_smooth=0.0, y_max=None)
    stub = EightOutputs()
    plan = [[0.4, 0.3], [0.5, 0.1], [0.2, 0.2]]
    base = mpc_cost(plan, None, [0.0], stub, cfg, [0.0, 0.0])
    for th in (-3.0, 0.7, 9.0):
        assert mpc_cost(plan, None, [th], stub, cfg, [0.0, 0.0]) == base


def test_constant_plan_normalization():
    cfg = MpcConfig(lambda_soft=0.0, lambda_smooth=1e-4)
    y = np.array(measure(PLANT, None, U0, THETA_HAT))
    expect = float(np.sum((y[6:] - 0.01) ** 2))
    for n in (1, 5, 9):
        cfg.horizon = n
        got = mpc_cost([U0.tolist()] * n, None, THETA_HAT, PLANT, cfg, U0.tolist())
        assert got == pytest.approx(expect, rel=1e-14)


def test_shift_examples():
    a, b, c = [1.0], [2.0], [3.0]
    p = HorizonPlan(np.array([a, b, c]), np.array([0.0]))
    s = warm_start_shift(p)
    np.testing.assert_array_equal(s.inputs, [b, c, c])
    assert s.origin == "shifted"
    np.testing.assert_array_equal(s.u_prev, a)
    const = HorizonPlan(np.full((4, 2), 0.7), np.zeros(2))
    np.testing.assert_array_equal(warm_start_shift(const).inputs, const.inputs)


def test_shift_n_times_is_constant():
    rng = np.random.default_rng(0)
    p = HorizonPlan(rng.normal(size=(6, 3)), np.zeros(3))
    last = p.inputs[-1].copy()
    for _ in range(6):
        p = warm_start_shift(p)
    np.testing.assert_array_equal(p.inputs, np.tile(last, (6, 1)))


def test_cold_plan():
    p = HorizonPlan.cold([0.1, 0.2], 3)
    np.testing.assert_array_equal(p.inputs, [[0.1, 0.2]] * 3)
    assert p.origin == "cold"


def test_zero_iterations_returns_warm_start():
    cfg = MpcConfig(**{**ACC.mpc.__dict__, "iters": 0})
    warm = HorizonPlan(np.tile(U0, (5, 1)), U0.copy())
    sol = solve_mpc(None, THETA_HAT, warm, PLANT, cfg, U0)
    np.testing.assert_array_equal(sol.plan.inputs, warm.inputs)
    np.testing.assert_array_equal(sol.u_applied, U0)


def test_default_scenario_cost_trace():
    sol = solve_mpc(None, THETA_HAT, None, PLANT, ACC.mpc, U0)
    trace = np.array(sol.cost_trace)
    assert len(trace) == ACC.mpc.iters
    assert np.all(np.isfinite(trace))
    assert trace[-1] <= trace[0]
    assert np.all(np.abs(sol.u_applied - U0) <= 0.1)


def _audit_plan(plan, cfg, u_prev):
    lo, hi = np.asarray(cfg.lower), np.asarray(cfg.upper)
    prev = u_prev
    for row in plan:
        assert np.all(row >= lo) and np.all(row <= hi)
        assert np.all(np.abs(row - prev) <= cfg.du_max)
        prev = row


def test_feasibility_invariant_random_theta():
    rng = np.random.default_rng(5)
    box = PLANT.theta_box
    cfg = MpcConfig(**{**ACC.mpc.__dict__, "iters": 10})
    for _ in range(5):
        th = rng.uniform(box.lower, box.upper)
        sol = solve_mpc(None, th, None, PLANT, cfg, U0)
        _audit_plan(sol.plan.inputs, cfg, U0)


def test_feasibility_invariant_oscillator():
    plant = OscillatorPlant()
    sol = solve_mpc([0.3, -0.1], [0.5], None, plant, OSC.mpc, [2.95])
    _audit_plan(sol.plan.inputs, OSC.mpc, np.array([2.95]))


def test_infeasible_box_and_rate():
    cfg = MpcConfig(horizon=2, lower=(1.0,), upper=(2.0,), du_max=0.1, tracked_outputs=None,
                    y_max=None, reference=Reference.constant([0.0]))
    with pytest.raises(InfeasibleConstraint):
        solve_mpc([0.0, 0.0], [0.5], None, OscillatorPlant(), cfg, [0.0])


def test_theta_outside_box_rejected():
    with pytest.raises(ValueError):
        solve_mpc(None, [0.0, 0.0, 0.0, 0.0], None, PLANT, ACC.mpc, U0)


def test_dynamic_cost_gradient():
    plant = OscillatorPlant()
    cfg = OSC.mpc
    rng = np.random.default_rng(8)
    point = np.concatenate([rng.uniform(-1, 1, 8), [0.4, -0.3], [0.6]])

    def f(v):
        plan = [[v[k]] for k in range(8)]
        return mpc_cost(plan, v[8:10], v[10:], plant,
                        MpcConfig(**{**cfg.__dict__, "horizon": 8}), [0.0], t=140)

    assert grad_check(f, point).max_rel_err < 1e-5


def test_static_cost_gradient():
    rng = np.random.default_rng(9)
    lo, hi = np.asarray(ACC.mpc.lower), np.asarray(ACC.mpc.upper)
    point = np.concatenate([rng.uniform(lo, hi) for _ in range(3)])
    cfg = MpcConfig(**{**ACC.mpc.__dict__, "horizon": 3, "y_max": 0.005})

    def f(v):
        return mpc_cost([v[7 * k:7 * k + 7] for k in range(3)], None, THETA_HAT, PLANT, cfg,
                        U0.tolist())

    assert grad_check(f, point).max_rel_err < 1e-5
