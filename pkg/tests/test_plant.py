import numpy as np
import pytest

from diffmpc.autodiff import grad_check, value_and_grad, vsum
from diffmpc.beamline import DEFAULT_THETA_TRUE, BeamlinePlant, default_lattice
from diffmpc.errors import DimensionMismatch, StaticPlantHasNoStep, WrongPlantKind
from diffmpc.oscillator import OscillatorPlant
from diffmpc.plant import NoiseSpec, Plant, ThetaBox, measure, plant_truth, rollout, step


class LinearPlant(Plant):
    kind = "dynamic"
    n_x, n_u, n_y, n_theta = 2, 1, 1, 1

    def __init__(self):
        self.theta_box = ThetaBox([0.0], [2.0], [1.0])

    def f(self, x, u, theta):
        return [0.9 * x[0] + theta[0] * x[1], -0.2 * x[0] + 0.8 * x[1] + u[0]]

    def h(self, x, u, theta):
        return [x[0] + 0.5 * x[1]]


NOMINAL = default_lattice().nominal_setpoints()


def test_oscillator_equilibrium():
    assert step(OscillatorPlant(), [0.0, 0.0], [0.0], [1.3]) == [0.0, 0.0]


def test_superposition_on_linear_plant():
    p = LinearPlant()
    x1, x2 = [0.3, -1.0], [2.0, 0.7]
    u, th = [0.4], [0.6]
    lhs = step(p, [a + b for a, b in zip(x1, x2)], u, th)
    rhs = np.add(step(p, x1, u, th), step(p, x2, u, th)) - np.array(step(p, [0, 0], u, th))
    np.testing.assert_allclose(lhs, rhs, rtol=1e-14)


def test_step_gradient_wrt_theta():
    p = OscillatorPlant()
    rep = grad_check(lambda v: step(p, [0.4, -0.2], [0.3], v)[1], [0.7])
    assert rep.max_rel_err < 1e-5


def test_static_plant_has_no_step():
    with pytest.raises(StaticPlantHasNoStep):
        step(BeamlinePlant(), [], NOMINAL, DEFAULT_THETA_TRUE)


def test_dimension_checks():
    p = OscillatorPlant()
    with pytest.raises(DimensionMismatch):
        step(p, [0.0], [0.0], [1.0])
    with pytest.raises(DimensionMismatch):
        measure(BeamlinePlant(), None, NOMINAL[:6], DEFAULT_THETA_TRUE)
    with pytest.raises(DimensionMismatch):
        measure(p, None, [0.0], [1.0])


def test_beamline_measure_positive():
    y = measure(BeamlinePlant(), None, NOMINAL, DEFAULT_THETA_TRUE)
    assert len(y) == 8 and all(v > 0 for v in y)


def test_oscillator_measure_is_projection():
    assert measure(OscillatorPlant(), [0.3, -7.0], [0.0], [1.0]) == [0.3]


def test_beamline_theta_homogeneity():
    p = BeamlinePlant()
    y1 = measure(p, None, NOMINAL, DEFAULT_THETA_TRUE)
    y2 = measure(p, None, NOMINAL, [2 * t for t in DEFAULT_THETA_TRUE])
    np.testing.assert_allclose(y2, 2 * np.array(y1), rtol=1e-14)


def test_one_step_rollout():
    p = OscillatorPlant()
    res = rollout(p, [0.5, 0.1], [[0.2]], [0.4])
    assert res.states[1] == step(p, [0.5, 0.1], [0.2], [0.4])
    assert res.outputs[0] == measure(p, [0.5, 0.1], [0.2], [0.4])
    term = rollout(p, [0.5, 0.1], [[0.2]], [0.4], terminal=True)
    assert len(term.outputs) == 2


def test_static_rollout_identical_inputs():
    res = rollout(BeamlinePlant(), None, [NOMINAL] * 4, DEFAULT_THETA_TRUE)
    assert res.states == []
    assert all(o == res.outputs[0] for o in res.outputs)


def test_rollout_gradient_20_steps():
    p = OscillatorPlant()

    def f(us):
        res = rollout(p, [0.1, 0.0], [[u] for u in us], [0.5])
        return vsum(y[0] for y in res.outputs)

    rep = grad_check(f, np.random.default_rng(0).uniform(-1, 1, 20))
    assert rep.max_rel_err < 1e-5


def test_rollout_consts_equal_vars():
    p = OscillatorPlant()
    us = [[0.1 * k] for k in range(15)]
    plain = rollout(p, [0.3, -0.1], us, [0.8]).outputs
    val, _ = value_and_grad(lambda v: rollout(p, v[:2], us, v[2:]).outputs[-1][0],
                            [0.3, -0.1, 0.8])
    assert val == plain[-1][0]


def test_plant_truth_noiseless_equals_measure():
    p = BeamlinePlant()
    y, xn = plant_truth(p, DEFAULT_THETA_TRUE, None, NOMINAL)
    assert xn is None
    np.testing.assert_array_equal(y, measure(p, None, NOMINAL, DEFAULT_THETA_TRUE))
    y0, _ = plant_truth(p, DEFAULT_THETA_TRUE, NoiseSpec(0.0), NOMINAL)
    np.testing.assert_array_equal(y0, y)


def test_plant_truth_dynamic():
    p = OscillatorPlant()
    y, xn = plant_truth(p, [0.5], None, [0.2], [1.0, 0.0])
    assert y[0] == 1.0
    np.testing.assert_array_equal(xn, step(p, [1.0, 0.0], [0.2], [0.5]))
    with pytest.raises(WrongPlantKind):
        plant_truth(BeamlinePlant(), DEFAULT_THETA_TRUE, None, NOMINAL, x=[1.0])


def test_noise_mean_absolute_deviation():
    p = BeamlinePlant()
    clean, _ = plant_truth(p, DEFAULT_THETA_TRUE, None, NOMINAL)
    noise = NoiseSpec(1e-4, np.random.default_rng(0))
    dev = np.array([plant_truth(p, DEFAULT_THETA_TRUE, noise, NOMINAL)[0] - clean
                    for _ in range(1250)]).ravel()
    assert dev.size == 10_000
    assert abs(np.mean(np.abs(dev)) / (1e-4 * np.sqrt(2 / np.pi)) - 1) < 0.05


def test_determinism():
    p = BeamlinePlant()
    a = measure(p, None, NOMINAL, DEFAULT_THETA_TRUE)
    b = measure(p, None, NOMINAL, DEFAULT_THETA_TRUE)
    assert a == b


def test_theta_box_validation():
    with pytest.raises(ValueError):
        ThetaBox([0.0], [1.0], [2.0])
    with pytest.raises(DimensionMismatch):
        ThetaBox([0.0, 0.0], [1.0], [0.5])
    assert ThetaBox([0.0], [1.0], [0.5]).contains([1.0])
    assert not ThetaBox([0.0], [1.0], [0.5]).contains([1.0 + 1e-12])
