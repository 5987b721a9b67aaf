"""Compare reverse-mode gradients against central finite differences."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tape import value_and_grad


@dataclass
class GradCheckReport:
    point: np.ndarray
    ad: np.ndarray
    fd: np.ndarray
    rel_err: np.ndarray  # 0 where both gradients are below `floor`
    floor: float

    @property
    def max_rel_err(self) -> float:
        return float(self.rel_err.max()) if self.rel_err.size else 0.0

    def passed(self, tol: float) -> bool:
        return self.max_rel_err < tol

    def rows(self):
        """Per-coordinate ``(ad, fd, rel_err)`` tuples."""
        return list(zip(self.ad.tolist(), self.fd.tolist(), self.rel_err.tolist()))


def central_difference(fn, point, step: float = 1e-6, scale=1.0) -> np.ndarray:
    """Central differences of ``fn(list_of_floats)``.

    The step for coordinate i is ``step * max(scale_i, |x_i|)``; pass a small
    ``scale`` for coordinates whose natural size is far below one.
    """
    x = np.asarray(point, dtype=float).ravel()
    scale = np.broadcast_to(np.asarray(scale, dtype=float), x.shape)
    out = np.empty_like(x)
    for i in range(x.size):
        h = step * max(scale[i], abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        out[i] = (float(fn(xp.tolist())) - float(fn(xm.tolist()))) / (xp[i] - xm[i])
    return out.reshape(np.shape(point))


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = np.maximum(np.abs(a), np.abs(b))
    err = np.zeros_like(scale)
    big = scale > floor
    err[big] = np.abs(a - b)[big] / scale[big]
    return err


def grad_check(fn, point, step: float = 1e-6, floor: float = 1e-8,
               scale=1.0) -> GradCheckReport:
    """AD gradient of ``fn`` at ``point`` next to its finite-difference twin.

    ``fn`` takes a flat list of scalars (floats or Vars) and returns a scalar.
    The finite differences run on plain floats, never on the tape.
    """
    x = np.asarray(point, dtype=float).ravel()
    _, ad = value_and_grad(fn, x)
    fd = central_difference(fn, x, step, scale)
    return GradCheckReport(x, ad, fd, relative_error(ad, fd, floor), floor)
