"""Damped linear oscillator with unknown damping, integrated with RK4.

State ``(position, velocity)``, input a force per unit mass, only the
position is measured. The damping coefficient is the single unknown
parameter.
"""
from __future__ import annotations

from diffmpc.plant import Plant, ThetaBox


def _rhs(x1, x2, u, k, damping):
    return x2, -k * x1 - damping * x2 + u


def toy_step(x, u, theta, stiffness: float = 1.0, dt: float = 0.1) -> list:
    """One RK4 step of ``x1' = x2, x2' = -k x1 - theta x2 + u``."""
    x1, x2 = x
    (uu,) = u
    (d,) = theta
    a1, a2 = _rhs(x1, x2, uu, stiffness, d)
    h = 0.5 * dt
    b1, b2 = _rhs(x1 + h * a1, x2 + h * a2, uu, stiffness, d)
    c1, c2 = _rhs(x1 + h * b1, x2 + h * b2, uu, stiffness, d)
    e1, e2 = _rhs(x1 + dt * c1, x2 + dt * c2, uu, stiffness, d)
    w = dt / 6.0
    return [x1 + w * (a1 + 2.0 * b1 + 2.0 * c1 + e1),
            x2 + w * (a2 + 2.0 * b2 + 2.0 * c2 + e2)]


def toy_measure(x) -> list:
    return [x[0]]


class OscillatorPlant(Plant):
    kind = "dynamic"
    n_x = 2
    n_u = 1
    n_y = 1
    n_theta = 1

    def __init__(self, stiffness: float = 1.0, dt: float = 0.1,
                 theta_box: ThetaBox | None = None):
        if not stiffness > 0 or not dt > 0:
            raise ValueError("stiffness and dt must be positive")
        self.stiffness = stiffness
        self.dt = dt
        self.theta_box = theta_box or ThetaBox(lower=[0.01], upper=[5.0], prior=[2.505],
                                               weight=1e-6)

    def f(self, x, u, theta):
        return toy_step(x, u, theta, self.stiffness, self.dt)

    def h(self, x, u, theta):
        return toy_measure(x)
