"""Integrals, volumes and Sobolev-type norms of warp fields on the sphere.

Metric differences are measured against the unit product metric
``g_0 = g_sphere + g_circle``.  Only the circle block of ``g_j - g_inf``
is nonzero, so the ``L^q`` distance reduces to a sphere integral of
``|h_j^2 - h_inf^2|^q`` times the circle length ``2 pi``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate as spi

from ._summation import weighted_sum
from .errors import ConfigurationError, SeminormDivergence, SingularPointError
from .sphere import PoleConfiguration, SphereGrid, angle_between, build_grid
from .warp import WarpField

# ---------------------------------------------------------------------------
# plain and singularity-split integration
# ---------------------------------------------------------------------------


def _log_antiderivative(r: float) -> float:
    """Antiderivative of ``-2 sin r ln sin r`` with its one-sided limits at 0 and pi."""
    if r <= 0.0:
        return -2.0 * (1.0 - math.log(2.0))
    if r >= math.pi:
        return 2.0 - 2.0 * math.log(2.0)
    c = math.cos(r)
    return -2.0 * (c + math.log(math.tan(r / 2)) - c * math.log(math.sin(r)))


def log_profile_integral(r0: float = 0.0, r1: float = math.pi) -> float:
    """Integral of ``-2 ln sin r`` over the annulus ``r0 <= r <= r1`` about a pole.

    Over the whole sphere this is ``8 pi - 4 pi ln 4``.
    """
    return 2.0 * math.pi * (_log_antiderivative(r1) - _log_antiderivative(r0))


def integrate(fieldvals, grid: SphereGrid, log_terms=None) -> float:
    """Quadrature of a field (array of node values or callable) over the sphere.

    ``log_terms`` is an optional list of ``(coefficient, pole)`` pairs such
    that the field contains ``coefficient * (-2 ln sin r_pole)``.  Those parts
    are integrated in closed form and only the remainder is summed.
    """
    X = grid.points
    vals = fieldvals(X) if callable(fieldvals) else np.asarray(fieldvals, dtype=float)
    if vals.shape != grid.weights.shape:
        raise ValueError("field values do not match the grid")
    if not np.all(np.isfinite(vals)):
        raise SingularPointError("field is infinite or undefined at a grid node")
    if not log_terms:
        return weighted_sum(grid.weights, vals)
    rem = vals.copy()
    exact = []
    for coef, pole in log_terms:
        p = np.asarray(pole, dtype=float)
        c = np.cross(X, p)
        rem -= coef * -np.log(np.einsum("ij,ij->i", c, c))
        exact.append(coef * log_profile_integral())
    return weighted_sum(grid.weights, rem) + math.fsum(exact)


def volume(field, grid: SphereGrid) -> float:
    """Volume of the warped product: ``2 pi`` times the sphere integral of ``h``."""
    log_terms = field.log_terms() if hasattr(field, "log_terms") else None
    return 2.0 * math.pi * integrate(field.value(grid.points), grid, log_terms)


def monte_carlo_volume(field, n: int = 10**7, seed: int = 0, chunk: int = 10**6):
    """Independent Monte-Carlo volume estimate ``(estimate, standard error)``."""
    rng = np.random.default_rng(seed)
    s1 = s2 = 0.0
    done = 0
    while done < n:
        m = min(chunk, n - done)
        v = rng.standard_normal((m, 3))
        v /= np.linalg.norm(v, axis=1)[:, None]
        h = field.value(v)
        s1 += math.fsum(h.tolist())
        s2 += math.fsum((h * h).tolist())
        done += m
    mean = s1 / n
    var = max(s2 / n - mean * mean, 0.0)
    scale = 8.0 * math.pi**2
    return scale * mean, scale * math.sqrt(var / n)


# ---------------------------------------------------------------------------
# metric differences
# ---------------------------------------------------------------------------


def lq_metric_distance(fj, finf, q: float, grid: SphereGrid, *, values=None) -> float:
    """``L^q(g_0)`` norm of ``g_j - g_inf`` (only the circle block differs)."""
    if not q >= 1:
        raise ConfigurationError("exponent q must be >= 1")
    hj = fj.value(grid.points) if values is None else values[0]
    hi = finf.value(grid.points) if values is None else values[1]
    diff = np.abs(hj * hj - hi * hi) ** q
    return (2.0 * math.pi * integrate(diff, grid)) ** (1.0 / q)


# ---------------------------------------------------------------------------
# gradient norms with singular-model subtraction
# ---------------------------------------------------------------------------


def _bump(s):
    """Cutoff ``(1 - s^2)^6`` on [0, 1], zero beyond; even in ``s`` so it is smooth at the centre."""
    s = np.asarray(s, dtype=float)
    return np.where(s < 1.0, np.clip(1.0 - s * s, 0.0, 1.0) ** 6, 0.0)


def _cut_radii(points, cap=0.25):
    n = len(points)
    radii = np.full(n, cap)
    if n > 1:
        D = angle_between(points[:, None, :], points[None, :, :])
        np.fill_diagonal(D, np.inf)
        radii = np.minimum(radii, 0.45 * D.min(axis=1))
    return radii


def _model_integral(c, p, rho, eps=0.0):
    """``2 pi c^p`` times the integral of ``cos^p sin^(1-p) bump(./rho)`` over ``[eps, rho]``."""
    if eps <= 0.0 and p >= 2:
        return math.inf

    def g(x):
        sinc = math.sin(x) / x if x > 0 else 1.0
        return math.cos(x) ** p * sinc ** (1 - p) * float(_bump(x / rho))

    if eps <= 0.0:
        val, _ = spi.quad(g, 0.0, rho, weight="alg", wvar=(1 - p, 0.0), limit=200, epsabs=0, epsrel=1e-12)
    else:
        val, _ = spi.quad(lambda x: g(x) * x ** (1 - p), eps, rho, limit=200, epsabs=0, epsrel=1e-12,
                          )
    return 2.0 * math.pi * c**p * val


@dataclass
class SingularModel:
    points: np.ndarray
    coefs: np.ndarray
    radii: np.ndarray

    @classmethod
    def of(cls, field):
        if not hasattr(field, "singular_points"):
            return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0))
        pts, coefs = field.singular_points()
        return cls(pts, coefs, _cut_radii(pts) if len(pts) else np.zeros(0))

    @classmethod
    def difference(cls, f1, f2):
        """Model for ``grad f1 - grad f2``: coefficients of shared singular points cancel."""
        a, b = cls.of(f1), cls.of(f2)
        pts = [q for q in b.points]
        coefs = [-c for c in b.coefs]
        for q, c in zip(a.points, a.coefs):
            for k, other in enumerate(pts):
                if np.linalg.norm(other - q) < 1e-12:
                    coefs[k] += c
                    break
            else:
                pts.append(q)
                coefs.append(c)
        keep = [k for k, c in enumerate(coefs) if abs(c) > 1e-15]
        pts = np.array([pts[k] for k in keep]).reshape(-1, 3)
        coefs = np.abs(np.array([coefs[k] for k in keep]))
        return cls(pts, coefs, _cut_radii(pts) if len(pts) else np.zeros(0))

    def __len__(self):
        return len(self.coefs)

    def nodal(self, X, p):
        """Sum over singular points of ``(c cot rho)^p bump(rho / radius)`` at the nodes."""
        out = np.zeros(len(X))
        for q, c, rad in zip(self.points, self.coefs, self.radii):
            rho = angle_between(X, q[None, :])
            near = rho < rad
            if np.any(near):
                rn = rho[near]
                out[near] += (c * np.cos(rn) / np.sin(rn)) ** p * _bump(rn / rad)
        return out

    def exact(self, p, eps=0.0):
        return math.fsum(_model_integral(c, p, rad, eps) for c, rad in zip(self.coefs, self.radii))


def _power_integral(vecs, p, grid, model: SingularModel, normalized=False):
    mag = np.linalg.norm(vecs, axis=1) ** p
    if not np.all(np.isfinite(mag)):
        raise SingularPointError("gradient undefined at a grid node")
    total = integrate(mag - model.nodal(grid.points, p), grid) + model.exact(p) if len(model) else integrate(mag, grid)
    if normalized:
        total /= 4.0 * math.pi
    return total


def w1p_seminorm(field, p: float, grid: SphereGrid, *, normalized: bool = False, cap: float = 1e12,
                 check_depths=(3, 6, 12, 24)):
    """``(integral |grad h|^p)^(1/p)`` over the sphere.

    Singular points of a limit warp are handled by subtracting the model
    ``(c cot rho)^p`` near each of them and adding its integral back from a
    one-dimensional quadrature.  For ``p >= 2`` that integral diverges; the
    plain quadrature is then repeated with doubling refinement depths and
    ``SeminormDivergence`` is raised when it keeps growing by more than 1%.
    ``normalized`` uses the probability measure ``dVol / 4 pi``.
    """
    if not p >= 1:
        raise ConfigurationError("exponent p must be >= 1")
    model = SingularModel.of(field)
    if len(model) and p >= 2:
        table = []
        for depth in check_depths:
            g = grid.with_depth(depth)
            val = _power_integral(field.gradient(g.points), p, g, SingularModel(np.zeros((0, 3)), np.zeros(0), np.zeros(0)))
            table.append((depth, val))
        growth = [b / a - 1.0 for (_, a), (_, b) in zip(table, table[1:])]
        if (len(growth) >= 3 and all(g > 0.01 for g in growth[-3:])) or table[-1][1] > cap:
            raise SeminormDivergence(f"W^(1,{p}) seminorm diverges under refinement", table)
        total = table[-1][1] / (4 * math.pi if normalized else 1.0)
        return total ** (1.0 / p)
    total = _power_integral(field.gradient(grid.points), p, grid, model, normalized)
    if total > cap:
        raise SeminormDivergence(f"W^(1,{p}) seminorm exceeds cap {cap}", [(grid.depth_limit, total)])
    return max(total, 0.0) ** (1.0 / p)


def gradient_distance(fj, finf, p: float, grid: SphereGrid, *, gradients=None) -> float:
    """``L^p`` norm of ``grad h_j - grad h_inf`` over the sphere."""
    if not p >= 1:
        raise ConfigurationError("exponent p must be >= 1")
    gj = fj.gradient(grid.points) if gradients is None else gradients[0]
    gi = finf.gradient(grid.points) if gradients is None else gradients[1]
    model = SingularModel.difference(fj, finf)
    if len(model) and p >= 2:
        raise SeminormDivergence("gradient distance to a singular limit is infinite for p >= 2")
    total = _power_integral(gj - gi, p, grid, model)
    return max(total, 0.0) ** (1.0 / p)


def divergence_scan(field, p: float = 2.0, eps_list=None, grid: SphereGrid | None = None) -> dict:
    """Gradient integrals over the sphere minus ``eps``-balls around the singular points.

    Returns the table for ``p`` and for ``p = 1`` together with the fitted
    slope of the ``p`` column against ``ln(1/eps)`` (with an ``eps^2``
    correction term); ``rate_per_unit`` divides
    that slope by ``sum_q (c_q / 2)^2`` (1 per singular point of a unit-weight
    profile).
    """
    if eps_list is None:
        eps_list = [2.0**-k for k in range(4, 16)]
    eps = np.asarray(eps_list, dtype=float)
    if np.any(np.diff(eps) >= 0):
        raise ConfigurationError("eps_list must be decreasing")
    model = SingularModel.of(field)
    if not len(model):
        raise ConfigurationError("field has no singular points")
    if np.any(eps >= model.radii.min() / 2):
        raise ConfigurationError("eps values must be below half the smallest cut radius")
    grid = grid or build_grid(32, points=_singular_refinement(model), depth_limit=12)
    grads = field.gradient(grid.points)
    out = {"eps": eps.tolist()}
    for pp in (p, 1.0):
        mag = np.linalg.norm(grads, axis=1) ** pp
        smooth = integrate(mag - model.nodal(grid.points, pp), grid)
        out[f"p={pp:g}"] = [smooth + model.exact(pp, e) for e in eps]
    col = np.array(out[f"p={p:g}"])
    # the excised-cap integral is c ln(1/eps) + d + O(eps^2)
    design = np.column_stack([np.log(1.0 / eps), np.ones_like(eps), eps**2])
    (slope, intercept, _), *_ = np.linalg.lstsq(design, col, rcond=None)
    out["slope"] = float(slope)
    out["intercept"] = float(intercept)
    out["rate_per_unit"] = float(slope / np.sum((model.coefs / 2.0) ** 2))
    out["increments"] = np.diff(col).tolist()
    return out


def _singular_refinement(model):
    from .sphere import RefinementPoint

    return [RefinementPoint(tuple(q), 0.0) for q in model.points]


# ---------------------------------------------------------------------------
# convergence tables
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)

    def add(self, level, kind, exponent, value, tail_bound):
        if value < 0:
            raise ValueError("norm values are nonnegative")
        self.rows.append({"level": level, "kind": kind, "exponent": exponent, "value": value,
                          "tail_bound": tail_bound})

    def series(self, kind, exponent):
        rows = [r for r in self.rows if r["kind"] == kind and r["exponent"] == exponent]
        return [r["level"] for r in rows], [r["value"] for r in rows]

    def decreasing(self, kind, exponent) -> bool:
        _, v = self.series(kind, exponent)
        return all(b < a for a, b in zip(v, v[1:]))

    def flags(self):
        keys = sorted({(r["kind"], r["exponent"]) for r in self.rows})
        return {f"{k}{e:g}": self.decreasing(k, e) for k, e in keys}

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "kind", "exponent", "value", "tail_bound"])
            for r in self.rows:
                w.writerow([r["level"], r["kind"], repr(float(r["exponent"])), repr(float(r["value"])),
                            repr(float(r["tail_bound"]))])

    def to_dict(self):
        return {"rows": self.rows, "decreasing": self.flags()}


def convergence_table(config: PoleConfiguration, levels, q_list=(1.0,), p_list=(1.0,), *, resolution: int = 32,
                      depth_limit: int = 12, tau_tail: float = 1e-10, grid: SphereGrid | None = None) -> ConvergenceTable:
    """Distances from level-j warps to the explicit limit warp for each level."""
    levels = list(levels)
    if not levels or any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigurationError("levels must be nonempty and increasing")
    if not config.has_limit():
        raise ConfigurationError(f"case '{config.case}' has no explicit limit; only subsequential convergence holds")
    finf = WarpField(config, math.inf, tau_tail=tau_tail)
    if grid is None:
        grid = build_grid(resolution, config, depth_limit, levels + [math.inf])
    X = grid.points
    hinf, tail = finf.value_with_bound(X)
    ginf = finf.gradient(X)
    table = ConvergenceTable()
    for j in levels:
        fj = WarpField(config, j)
        hj = fj.value(X)
        gj = fj.gradient(X)
        for q in q_list:
            table.add(j, "Lq", float(q), lq_metric_distance(fj, finf, q, grid, values=(hj, hinf)), tail)
        for p in p_list:
            table.add(j, "W1p", float(p), gradient_distance(fj, finf, p, grid, gradients=(gj, ginf)), tail)
    return table
