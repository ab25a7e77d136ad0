"""Radial derivatives, sphere Laplacians and warped-product scalar curvature.

For ``g = g_sphere + h^2 g_circle`` the scalar curvature is
``2 - 2 (Laplacian h) / h``, with the Laplacian of the round sphere.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import SingularPointError
from .sphere import SphereGrid, SpherePoint


@dataclass(frozen=True)
class RadialDerivatives:
    value: float
    first: float
    second: float
    laplacian: float


def radial_derivatives(a: float, b: float, r: float) -> RadialDerivatives:
    """``f``, ``f'``, ``f''`` and ``f'' + cot(r) f'`` of the profile at colatitude ``r``.

    At ``r`` in {0, pi} with ``a > 0`` the removable singularity of the
    Laplacian is resolved as ``2 f''``.  With ``a = 0`` those points raise
    ``SingularPointError``.
    """
    r = float(r)
    if not 0.0 <= r <= math.pi:
        raise SingularPointError(f"r = {r} outside [0, pi]")
    at_pole = r in (0.0, math.pi)
    if a == 0 and at_pole:
        raise SingularPointError("the limit profile is singular at r = 0 and r = pi")
    s = 0.0 if at_pole else math.sin(r)
    s2 = s * s
    sin2r = 0.0 if at_pole else math.sin(2 * r)
    cos2r = math.cos(2 * r)
    D = s2 + a
    value = (math.log1p(a) if a else 0.0) - math.log(D) + b
    first = -sin2r / D
    second = -2.0 * cos2r / D + sin2r * sin2r / (D * D)
    if at_pole:
        lap = 2.0 * second
    else:
        lap = second + math.cos(r) / s * first
    return RadialDerivatives(value, first, second, lap)


def warp_laplacian(field, x) -> np.ndarray | float:
    """Sphere Laplacian of a warp field; ``x`` is a SpherePoint or an (n, 3) array."""
    if isinstance(x, SpherePoint):
        return float(field.laplacian(x.vector[None, :])[0])
    return field.laplacian(np.atleast_2d(x))


def scalar_curvature(field, x) -> np.ndarray | float:
    """``2 - 2 Laplacian(h) / h`` at ``x`` (SpherePoint or (n, 3) array)."""
    X = x.vector[None, :] if isinstance(x, SpherePoint) else np.atleast_2d(x)
    h = field.value(X)
    if np.any(~np.isfinite(h)) or np.any(h <= 0):
        raise SingularPointError("scalar curvature needs a finite positive warp")
    out = 2.0 - 2.0 * field.laplacian(X) / h
    return float(out[0]) if isinstance(x, SpherePoint) else out


def laplacian_excess(a, b, r):
    """``Laplacian f_{a,b} - f_{a,b}`` for arrays (a > 0), using the smooth ``cos r`` form."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    r = np.asarray(r, dtype=float)
    u = np.cos(r)
    s2 = np.sin(r) ** 2
    D = s2 + a
    lap = ((2.0 - 6.0 * u * u) * D + 4.0 * u * u * s2) / (D * D)
    f = np.log1p(a) - np.log(D) + b
    return lap - f


def check_laplacian_inequality(a: float, b: float, r_samples, tol: float = 1e-9) -> dict:
    """Largest sampled ``Laplacian f - f``; passes when it is at most ``tol``."""
    if not a > 0:
        raise ValueError("the inequality is checked for a > 0")
    excess = laplacian_excess(a, b, np.asarray(r_samples, dtype=float))
    worst = float(np.max(excess))
    return {"max_excess": worst, "argmax_r": float(np.asarray(r_samples).ravel()[int(np.argmax(excess))]),
            "passed": worst <= tol}


@dataclass
class ScalarField:
    grid: SphereGrid
    h: np.ndarray
    laplacian: np.ndarray
    values: np.ndarray

    @property
    def min(self) -> float:
        return float(np.min(self.values))

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "theta", "h", "laplacian_h", "scalar_curvature"])
            for row in zip(self.grid.r, self.grid.theta, self.h, self.laplacian, self.values):
                w.writerow([repr(float(v)) for v in row])


def scalar_field(field, grid: SphereGrid) -> ScalarField:
    X = grid.points
    h = field.value(X)
    lap = field.laplacian(X)
    return ScalarField(grid, h, lap, 2.0 - 2.0 * lap / h)
