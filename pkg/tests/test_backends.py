import os
import subprocess
import sys

import numpy as np
import pytest

from diffmpc.autodiff import BACKENDS, Tape, backward, sin, use_backend, value_and_grad
from diffmpc.beamline import DEFAULT_THETA_TRUE, BeamlinePlant
from diffmpc.config import default_accelerator_config
from diffmpc.mpc import solve_mpc

needs_ext = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled tape not built")


def test_python_backend_always_present():
    assert "python" in BACKENDS
    assert Tape("python").backend == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        Tape("fortran")
    with pytest.raises(ValueError):
        with use_backend("fortran"):
            pass


@needs_ext
def test_use_backend_restores():
    before = Tape().backend
    with use_backend("python"):
        assert Tape().backend == "python"
    assert Tape().backend == before


@needs_ext
def test_tape_nodes_identical():
    tapes = {}
    for name in ("python", "cython"):
        t = Tape(name)
        xs = t.vars([0.3, -1.2])
        y = sin(xs[0] * xs[1]) / (2.0 + xs[1] ** 2)
        tapes[name] = ([t.node(i) for i in range(len(t))], backward(y).adjoints)
    assert tapes["python"][0] == tapes["cython"][0]
    np.testing.assert_array_equal(tapes["python"][1], tapes["cython"][1])


@needs_ext
def test_mpc_solution_bit_identical():
    cfg = default_accelerator_config()
    theta = [2 * t for t in DEFAULT_THETA_TRUE]
    plans = {}
    for name in ("python", "cython"):
        with use_backend(name):
            plans[name] = solve_mpc(None, theta, None, BeamlinePlant(), cfg.mpc, cfg.u_init)
    np.testing.assert_array_equal(plans["python"].plan.inputs, plans["cython"].plan.inputs)
    assert plans["python"].cost_trace == plans["cython"].cost_trace


@needs_ext
def test_gradient_parity_random():
    rng = np.random.default_rng(0)

    def f(v):
        return sum((sin(a) * b for a, b in zip(v, reversed(v))), start=0.0)

    for _ in range(20):
        p = rng.normal(size=6)
        with use_backend("python"):
            a = value_and_grad(f, p)
        with use_backend("cython"):
            b = value_and_grad(f, p)
        assert a[0] == b[0]
        np.testing.assert_array_equal(a[1], b[1])


def test_env_forces_pure_python():
    code = "from diffmpc.autodiff import DEFAULT_BACKEND; print(DEFAULT_BACKEND)"
    env = dict(os.environ, DIFFMPC_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "python"
