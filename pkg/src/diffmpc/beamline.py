"""Linear transverse optics for a drift/quadrupole beamline.

The beam is described by its 4x4 second-moment matrix over
``(x, px, y, py)``; each element maps ``S -> R S R^T``. Elements here never
couple the planes and the incoming beam is uncorrelated, so the moments are
propagated as two independent 2x2 blocks. Lengths are in meters, strengths
``k`` in 1/m^2 (``k > 0`` focuses horizontally).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from diffmpc.autodiff import cos, cosh, sin, sinh, sqrt
from diffmpc.autodiff.tape import Var
from diffmpc.errors import ConfigError, DimensionMismatch, NonpositiveTheta
from diffmpc.plant import Plant, ThetaBox

# below this |k| the quadrupole matrix uses its series expansion
K_SERIES_THRESHOLD = 1e-12
N_CONTROLS = 7
N_DIAGNOSTICS = 4


@dataclass(frozen=True)
class Drift:
    length: float
    name: str = ""

    kind = "drift"


@dataclass(frozen=True)
class Quadrupole:
    length: float
    k: float
    control_index: int | None = None
    name: str = ""

    kind = "quadrupole"


Element = Drift | Quadrupole


@dataclass(frozen=True)
class BeamlineLattice:
    elements: tuple
    segment_ends: tuple  # element index after which each diagnostic sits

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        object.__setattr__(self, "segment_ends", tuple(int(i) for i in self.segment_ends))
        for i, e in enumerate(self.elements):
            if not e.length > 0:
                raise ConfigError(f"elements[{i}].length must be positive")
        ends = self.segment_ends
        if len(ends) != N_DIAGNOSTICS:
            raise ConfigError(f"segment_ends must hold {N_DIAGNOSTICS} indices")
        if any(b <= a for a, b in zip(ends, ends[1:])) or ends[0] < 0:
            raise ConfigError("segment_ends must be strictly increasing")
        if ends[-1] != len(self.elements) - 1:
            raise ConfigError("last segment end must be the last element")
        idx = sorted(e.control_index for e in self.quadrupoles if e.control_index is not None)
        if idx != list(range(N_CONTROLS)):
            raise ConfigError(f"controllable quadrupoles must carry indices 0..{N_CONTROLS - 1} "
                              f"exactly once, got {idx}")

    @property
    def quadrupoles(self) -> list[Quadrupole]:
        return [e for e in self.elements if e.kind == "quadrupole"]

    @property
    def total_length(self) -> float:
        return float(sum(e.length for e in self.elements))

    def nominal_setpoints(self) -> np.ndarray:
        out = np.zeros(N_CONTROLS)
        for q in self.quadrupoles:
            if q.control_index is not None:
                out[q.control_index] = q.k
        return out

    def to_dict(self) -> dict:
        elems = []
        for e in self.elements:
            d = {"kind": e.kind, "length": e.length}
            if e.kind == "quadrupole":
                d["k"] = e.k
                if e.control_index is not None:
                    d["control_index"] = e.control_index
            if e.name:
                d["name"] = e.name
            elems.append(d)
        return {"elements": elems, "segment_ends": list(self.segment_ends)}

    @classmethod
    def from_dict(cls, d: dict) -> BeamlineLattice:
        elems = []
        for i, e in enumerate(d.get("elements", [])):
            kind = e.get("kind")
            try:
                if kind == "drift":
                    elems.append(Drift(float(e["length"]), e.get("name", "")))
                elif kind == "quadrupole":
                    ci = e.get("control_index")
                    elems.append(Quadrupole(float(e["length"]), float(e["k"]),
                                            None if ci is None else int(ci), e.get("name", "")))
                else:
                    raise ConfigError(f"elements[{i}].kind: unknown element kind {kind!r}")
            except KeyError as exc:
                raise ConfigError(f"elements[{i}].{exc.args[0]}: missing") from None
        return cls(tuple(elems), tuple(d.get("segment_ends", ())))


def _drift_block(length):
    return [[1.0, length], [0.0, 1.0]]


def _quad_blocks(k, length):
    """Per-plane 2x2 matrices ``(Mx, My)`` of a thick quadrupole."""
    kv = k.value if isinstance(k, Var) else k
    if abs(kv) < K_SERIES_THRESHOLD:
        def series(kk):
            L2 = length * length
            c = 1.0 - kk * L2 / 2.0 + kk * kk * L2 * L2 / 24.0
            s = length - kk * L2 * length / 6.0 + kk * kk * L2 * L2 * length / 120.0
            cp = -kk * length + kk * kk * L2 * length / 6.0
            return [[c, s], [cp, c]]
        return series(k), series(-k)
    if kv > 0:
        root = sqrt(k)
        focus_plane, defocus_plane = 0, 1
    else:
        root = sqrt(-k)
        focus_plane, defocus_plane = 1, 0
    phi = root * length
    c, s = cos(phi), sin(phi)
    ch, sh = cosh(phi), sinh(phi)
    foc = [[c, s / root], [-(root * s), c]]
    defoc = [[ch, sh / root], [root * sh, ch]]
    blocks = [None, None]
    blocks[focus_plane] = foc
    blocks[defocus_plane] = defoc
    return blocks[0], blocks[1]


def plane_matrices(element, k_override=None):
    """``(Mx, My)`` 2x2 transfer matrices of one element."""
    if element.kind == "drift":
        return _drift_block(element.length), _drift_block(element.length)
    k = element.k if k_override is None else k_override
    return _quad_blocks(k, element.length)


def element_matrix(element, k_override=None) -> list[list]:
    """Full 4x4 transfer matrix (block diagonal) as nested lists."""
    mx, my = plane_matrices(element, k_override)
    return [
        [mx[0][0], mx[0][1], 0.0, 0.0],
        [mx[1][0], mx[1][1], 0.0, 0.0],
        [0.0, 0.0, my[0][0], my[0][1]],
        [0.0, 0.0, my[1][0], my[1][1]],
    ]


def _matmul2(a, b):
    return [[a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
            [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]]]


def _sandwich(m, s):
    """Moments ``(s11, s12, s22)`` of ``M S M^T`` for symmetric ``S``."""
    a, b, c = s
    (r11, r12), (r21, r22) = m
    t1 = r11 * a + r12 * b
    t2 = r11 * b + r12 * c
    t3 = r21 * a + r22 * b
    t4 = r21 * b + r22 * c
    return (t1 * r11 + t2 * r12, t1 * r21 + t2 * r22, t3 * r21 + t4 * r22)


def _drift_sandwich(length, s):
    a, b, c = s
    lc = length * c
    b_new = b + lc
    return (a + length * (b + b_new), b_new, c)


@dataclass
class SigmaState:
    """Second moments at one location as two 2x2 plane blocks."""

    x: tuple  # (<x x>, <x px>, <px px>)
    y: tuple  # (<y y>, <y py>, <py py>)

    def matrix(self) -> list[list]:
        (a, b, c), (d, e, f) = self.x, self.y
        return [[a, b, 0.0, 0.0], [b, c, 0.0, 0.0], [0.0, 0.0, d, e], [0.0, 0.0, e, f]]

    def numeric(self) -> np.ndarray:
        return np.array([[v.value if isinstance(v, Var) else float(v) for v in row]
                         for row in self.matrix()])


def _controls_of(lattice: BeamlineLattice, u) -> dict:
    if len(u) != N_CONTROLS:
        raise DimensionMismatch(f"expected {N_CONTROLS} quadrupole setpoints, got {len(u)}")
    return {i: u[e.control_index] for i, e in enumerate(lattice.elements)
            if e.kind == "quadrupole" and e.control_index is not None}


def _check_theta(theta):
    if len(theta) != 4:
        raise DimensionMismatch(f"theta has length {len(theta)}, expected 4")
    for i, t in enumerate(theta):
        tv = t.value if isinstance(t, Var) else t
        if not tv > 0:
            raise NonpositiveTheta(f"theta[{i}] = {tv} must be positive")


def propagate_sigma(lattice: BeamlineLattice, u, theta) -> list[SigmaState]:
    """Moments at each segment end for setpoints ``u`` and incoming beam
    ``theta = (sigma_x, sigma_px, sigma_y, sigma_py)``."""
    _check_theta(theta)
    controls = _controls_of(lattice, u)
    sx, spx, sy, spy = theta
    mx = (sx * sx, 0.0, spx * spx)
    my = (sy * sy, 0.0, spy * spy)
    ends = set(lattice.segment_ends)
    snapshots = []
    for i, e in enumerate(lattice.elements):
        if e.kind == "drift":
            mx = _drift_sandwich(e.length, mx)
            my = _drift_sandwich(e.length, my)
        else:
            bx, by = _quad_blocks(controls.get(i, e.k), e.length)
            mx = _sandwich(bx, mx)
            my = _sandwich(by, my)
        if i in ends:
            snapshots.append(SigmaState(mx, my))
    return snapshots


def transfer_matrices(lattice: BeamlineLattice, u) -> tuple[np.ndarray, np.ndarray]:
    """Numeric per-plane 2x2 matrices from entrance to exit."""
    controls = _controls_of(lattice, [float(v) for v in u])
    tx = [[1.0, 0.0], [0.0, 1.0]]
    ty = [[1.0, 0.0], [0.0, 1.0]]
    for i, e in enumerate(lattice.elements):
        bx, by = plane_matrices(e, controls.get(i))
        tx = _matmul2(bx, tx)
        ty = _matmul2(by, ty)
    return np.array(tx, dtype=float), np.array(ty, dtype=float)


def beam_sizes(states: list[SigmaState]) -> list:
    """RMS sizes ordered ``(sx_a, sy_a, sx_b, sy_b, ..., sx_d, sy_d)``."""
    out = []
    for s in states:
        out.append(sqrt(s.x[0]))
        out.append(sqrt(s.y[0]))
    return out


# Deterministic lattice shaped after a ~30 m transport line with 9 quadrupoles
# and 4 bends (bends as drifts of equal path length). Strengths in 1/m^2.
_DEFAULT_LAYOUT = [
    ("D0", 1.0, None), ("Q1", 0.3, 0), ("D1", 1.2, None), ("Q2", 0.3, 1),
    ("D2", 1.2, None), ("Q3", 0.3, 2), ("D3", 1.0, None), ("B1", 1.5, None),   # a
    ("D4", 1.0, None), ("Q4", 0.3, 3), ("D5", 1.4, None), ("Q5", 0.3, 4),
    ("D6", 1.0, None), ("B2", 1.5, None),                                      # b
    ("D7", 1.2, None), ("Q6", 0.3, 5), ("D8", 1.4, None), ("Q7", 0.3, 6),
    ("D9", 1.0, None), ("B3", 1.5, None),                                      # c
    ("D10", 1.8, None), ("Q8", 0.3, None), ("D11", 1.2, None), ("Q9", 0.3, None),
    ("D12", 1.5, None), ("B4", 1.5, None), ("D13", 4.0, None),                 # d
]
_DEFAULT_SEGMENT_NAMES = ("B1", "B2", "B3", "D13")
DEFAULT_STRENGTHS = {
    "Q1": 2.05, "Q2": -2.97, "Q3": 1.97, "Q4": -1.51, "Q5": 1.46,
    "Q6": -1.16, "Q7": 0.78, "Q8": -0.90, "Q9": 0.76,
}
DEFAULT_THETA_TRUE = (4.0e-3, 1.2e-3, 3.0e-3, 0.8e-3)
DEFAULT_THETA_PRIOR = (5.0e-3, 1.0e-3, 5.0e-3, 1.0e-3)   # design beam, not the truth
# mis-set start: sigma_y at c and sigma_x at d exceed 14 mm
DEFAULT_INITIAL_SETPOINTS = (2.08, -2.99, 1.89, -1.42, 1.55, -0.93, 0.83)


def default_lattice() -> BeamlineLattice:
    elements = []
    for name, length, ci in _DEFAULT_LAYOUT:
        if name.startswith("Q"):
            elements.append(Quadrupole(length, DEFAULT_STRENGTHS[name], ci, name))
        else:
            elements.append(Drift(length, name))
    names = [e.name for e in elements]
    ends = tuple(names.index(n) for n in _DEFAULT_SEGMENT_NAMES)
    return BeamlineLattice(tuple(elements), ends)


def setpoint_bounds(nominal, magnitude: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Sign-preserving box ``nominal -/+ magnitude * |nominal|``."""
    nominal = np.asarray(nominal, dtype=float)
    half = magnitude * np.abs(nominal)
    return nominal - half, nominal + half


class BeamlinePlant(Plant):
    """Static map from 7 quadrupole setpoints to 8 RMS beam sizes [m]."""

    kind = "static"
    n_x = 0
    n_u = N_CONTROLS
    n_y = 2 * N_DIAGNOSTICS
    n_theta = 4

    def __init__(self, lattice: BeamlineLattice | None = None, theta_box: ThetaBox | None = None):
        self.lattice = lattice or default_lattice()
        self.theta_box = theta_box or ThetaBox(
            lower=[1e-4, 1e-5, 1e-4, 1e-5],
            upper=[2e-2, 1e-2, 2e-2, 1e-2],
            prior=DEFAULT_THETA_PRIOR,
            weight=0.0,
        )

    def h(self, x, u, theta):
        return beam_sizes(propagate_sigma(self.lattice, u, theta))
