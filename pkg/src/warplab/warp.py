"""Warping functions: the logarithmic profile, finite sums and limit sums.

The basic profile around a pole ``p`` at colatitude distance ``r`` is

    f_{a,b}(r) = ln((1 + a) / (sin^2 r + a)) + b,

and ``a = 0`` gives the limit profile ``-2 ln sin r + b``, which is
infinite at the pole and at its antipode.  Field evaluators below work on
``(n, 3)`` arrays of unit vectors and use ``u = cos r = x . p`` together
with ``sin^2 r = |x cross p|^2`` so that nothing is divided by ``sin r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._summation import CompensatedSum, weighted_sum
from .errors import ConfigurationError, TruncationError
from .report import VerificationReport
from .sphere import PoleConfiguration, SphereGrid, SpherePoint, angle_between, integral_bound


@dataclass(frozen=True)
class BaseWarp:
    a: float
    b: float = 2.0

    def __post_init__(self):
        if not self.a >= 0:
            raise ConfigurationError(f"smoothing parameter a = {self.a} must be >= 0")


def eval_base(w: BaseWarp, r):
    """Value of ``f_{a,b}(r)``; ``+inf`` at r in {0, pi} when ``a = 0``."""
    r = np.asarray(r, dtype=float)
    s = np.sin(r)
    s = np.where((r == 0.0) | (r == math.pi), 0.0, s)
    with np.errstate(divide="ignore"):
        if w.a == 0:
            out = -np.log(s * s) + w.b
        else:
            out = math.log1p(w.a) - np.log(s * s + w.a) + w.b
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# single radial terms on unit vectors
# ---------------------------------------------------------------------------


def _cos_sin2(X, p):
    x, y, z = X[:, 0], X[:, 1], X[:, 2]
    p0, p1, p2 = float(p[0]), float(p[1]), float(p[2])
    u = x * p0 + y * p1 + z * p2
    c0 = y * p2 - z * p1
    c1 = z * p0 - x * p2
    c2 = x * p1 - y * p0
    return u, c0 * c0 + c1 * c1 + c2 * c2


def term_value(X, p, a, b):
    _, s2 = _cos_sin2(X, p)
    with np.errstate(divide="ignore"):
        if a == 0:
            return -np.log(s2) + b
        return math.log1p(a) - np.log(s2 + a) + b


def term_gradient(X, p, a):
    """Tangent gradient ``-2 u (u x - p) / (sin^2 r + a)``; it points towards the pole."""
    u, s2 = _cos_sin2(X, p)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = -2.0 * u / (s2 + a)
    return coef[:, None] * (u[:, None] * X - p[None, :])


def term_laplacian(X, p, a):
    """Sphere Laplacian of the radial term, written in ``u = cos r`` (smooth at the pole)."""
    u, s2 = _cos_sin2(X, p)
    if a == 0:
        out = np.full(len(u), 2.0)
        out[s2 == 0] = np.nan
        return out
    D = s2 + a
    u2 = u * u
    return ((2.0 - 6.0 * u2) * D + 4.0 * u2 * s2) / (D * D)


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


class ConstantWarp:
    """Constant warping function, used for product-metric checks."""

    level = 0

    def __init__(self, c: float = 1.0):
        if not c > 0:
            raise ConfigurationError("constant warp must be positive")
        self.c = float(c)
        self.tau_tail = 0.0

    def value(self, X):
        return np.full(len(np.atleast_2d(X)), self.c)

    def gradient(self, X):
        return np.zeros((len(np.atleast_2d(X)), 3))

    def laplacian(self, X):
        return np.zeros(len(np.atleast_2d(X)))

    def singular_points(self):
        return np.zeros((0, 3)), np.zeros(0)

    def value_with_bound(self, X):
        return self.value(X), 0.0

    def __repr__(self):
        return f"ConstantWarp({self.c})"


class WarpField:
    """Finite sum ``h_j = sum_{i<=j} A_i f_{a_j, b_i}(r_ij)`` or the limit sum (``level=inf``).

    Limit sums are truncated per point once the rigorous tail bound drops
    below ``tau_tail``; ``TruncationError`` is raised if ``max_terms`` terms
    do not suffice.
    """

    def __init__(self, config: PoleConfiguration, level=math.inf, tau_tail: float = 1e-10,
                 max_terms: int = 1 << 17, singular_terms: int | None = None):
        self.config = config
        self.level = level
        self.tau_tail = float(tau_tail)
        self.max_terms = int(max_terms)
        if math.isinf(level):
            if not config.has_limit():
                raise ConfigurationError(f"case '{config.case}' has no explicit limit warp")
            self._terms = None
            from .sphere import _default_limit_refinement

            self._n_singular = singular_terms or _default_limit_refinement(config)
        else:
            if int(level) != level or level < 1:
                raise ConfigurationError("finite levels are integers >= 1")
            self.level = int(level)
            A, a, b, P = config.level_terms(self.level)
            keep = A > 0
            self._terms = (A[keep], a[keep], b[keep], P[keep])

    @property
    def is_limit(self) -> bool:
        return self._terms is None

    def __repr__(self):
        return f"WarpField(case={self.config.case!r}, level={self.level})"

    # --- term access ---------------------------------------------------------
    def terms(self):
        """Terms of a finite level as ``(A, a, b, poles)`` arrays."""
        if self.is_limit:
            raise ConfigurationError("the limit warp has infinitely many terms")
        return self._terms

    def singular_points(self):
        """Points where the limit warp blows up, with gradient coefficients.

        Near such a point ``q`` the gradient behaves like ``c_q cot(rho)``
        (``rho`` the distance to q), where ``c_q`` is twice the total weight
        of the terms having q as pole or antipode.
        """
        if not self.is_limit:
            return np.zeros((0, 3)), np.zeros(0)
        A, _, _, P = self.config.limit_terms(1, self._n_singular + 1)
        pts, coef = [], []
        for Ai, p in zip(A, P):
            if Ai <= 0:
                continue
            for q in (p, -p):
                for k, existing in enumerate(pts):
                    if np.linalg.norm(existing - q) < 1e-12:
                        coef[k] += 2 * Ai
                        break
                else:
                    pts.append(q)
                    coef.append(2 * Ai)
        return np.array(pts).reshape(-1, 3), np.array(coef)

    def log_terms(self):
        """``(A_i, pole)`` pairs whose ``-2 A_i ln sin r_i`` parts carry the singularities."""
        if not self.is_limit:
            return []
        A, _, _, P = self.config.limit_terms(1, self._n_singular + 1)
        return [(float(Ai), p) for Ai, p in zip(A, P) if Ai > 0]

    # --- evaluation ----------------------------------------------------------
    def value(self, X):
        return self._evaluate(np.atleast_2d(X), "value")[0]

    def value_with_bound(self, X):
        return self._evaluate(np.atleast_2d(X), "value")

    def gradient(self, X):
        return self._evaluate(np.atleast_2d(X), "gradient")[0]

    def laplacian(self, X):
        return self._evaluate(np.atleast_2d(X), "laplacian")[0]

    def at(self, x: SpherePoint) -> float:
        return float(self.value(x.vector[None, :])[0])

    def _evaluate(self, X, kind):
        shape = (len(X), 3) if kind == "gradient" else (len(X),)
        X = np.asfortranarray(X, dtype=float)  # contiguous coordinate columns
        if not self.is_limit:
            acc = CompensatedSum(shape)
            for Ai, ai, bi, p in zip(*self._terms):
                acc.add(Ai * _term(kind, X, p, ai, bi))
            return acc.value, 0.0
        return self._evaluate_limit(X, kind, shape)

    def _evaluate_limit(self, X, kind, shape):
        cfg = self.config
        acc = CompensatedSum(shape)
        active = np.arange(len(X))
        bound_out = np.zeros(len(X))
        n_done, block = 0, 32
        # first block sized so the tail weight is already below tolerance away from poles
        while block < 4096 and cfg.weights.tail(block) * (cfg.Kbar + 50.0) >= self.tau_tail:
            block *= 2
        cap = cfg.limit_term_count()
        cap = self.max_terms if cap is None else min(cap, self.max_terms)
        while True:
            n_next = min(n_done + block, cap)
            A, _, b, P = cfg.limit_terms(n_done + 1, n_next + 1)
            Xa = X[active]
            part = CompensatedSum((len(active),) + shape[1:])
            for Ai, bi, p in zip(A, b, P):
                if Ai > 0:
                    part.add(Ai * _term(kind, Xa, p, 0.0, bi))
            full = np.zeros(shape)
            full[active] = part.value
            acc.add(full)
            n_done = n_next
            bound = self._tail_bound(Xa, n_done, kind)
            cur = acc.value[active]
            hit_pole = ~np.isfinite(cur) if kind == "value" else np.zeros(len(active), bool)
            done = (bound < self.tau_tail) | hit_pole
            bound_out[active] = np.where(hit_pole, 0.0, bound)
            active = active[~done]
            if len(active) == 0:
                break
            if n_done >= cap:
                if cfg.weights.tail(n_done) == 0.0:
                    break
                worst = float(np.max(bound[~done]))
                raise TruncationError(
                    f"tail bound {worst:.3g} still above {self.tau_tail:.3g} after {n_done} terms", worst
                )
            block *= 2
        return acc.value, float(np.max(bound_out)) if len(bound_out) else 0.0

    def _tail_bound(self, X, n, kind):
        cfg = self.config
        tail = cfg.weights.tail(n)
        if tail == 0.0:
            return np.zeros(len(X))
        if hasattr(cfg.poles, "tail_separation"):
            smin = np.minimum(cfg.poles.tail_separation(n, X), math.pi / 2)
        else:
            caps = cfg.poles.tail_caps(n)
            if caps is None:
                return np.full(len(X), np.inf)
            smin = np.full(len(X), math.pi / 2)
            for c, rad in caps:
                d = angle_between(X, np.asarray(c)[None, :])
                # distance to the cap or to its antipodal cap, folded into [0, pi/2]
                s = np.maximum(np.minimum(d, math.pi - d) - rad, 0.0)
                smin = np.minimum(smin, s)
        with np.errstate(divide="ignore"):
            if kind == "value":
                return tail * (-2.0 * np.log(np.sin(smin)) + cfg.Kbar)
            if kind == "gradient":
                return tail * 2.0 / np.tan(smin)
            return np.full(len(X), 2.0 * tail)


def _term(kind, X, p, a, b):
    if kind == "value":
        return term_value(X, p, a, b)
    if kind == "gradient":
        return term_gradient(X, p, a)
    return term_laplacian(X, p, a)


# ---------------------------------------------------------------------------
# admissibility of single terms
# ---------------------------------------------------------------------------


class RadialTerm:
    """One profile ``f_{a,b}`` centred at ``pole``, exposed as a general term."""

    def __init__(self, a: float, b: float, pole: SpherePoint):
        self.a, self.b, self.pole = float(a), float(b), pole
        self._p = pole.vector

    def value(self, X):
        return term_value(X, self._p, self.a, self.b)

    def gradient(self, X):
        return term_gradient(X, self._p, self.a)

    def laplacian(self, X):
        return term_laplacian(X, self._p, self.a)

    def __repr__(self):
        return f"RadialTerm(a={self.a}, b={self.b}, pole={self.pole})"


class ConstantTerm:
    def __init__(self, c: float):
        self.c = float(c)

    def value(self, X):
        return np.full(len(X), self.c)

    def gradient(self, X):
        return np.zeros((len(X), 3))

    def laplacian(self, X):
        return np.zeros(len(X))


def check_def21(term, grid: SphereGrid, T: float, *, value_tol: float = 1e-12,
                laplacian_tol: float = 1e-9, integral_rtol: float = 1e-9) -> VerificationReport:
    """Check one term against the admissibility conditions of the general class.

    Conditions: integral over the sphere at most ``T``; value at least 2;
    Laplacian at most the value.  Failures are report entries, not errors.
    """
    X = grid.points
    v = term.value(X)
    lap = term.laplacian(X)
    integral = weighted_sum(grid.weights, v)
    rep = VerificationReport()
    rep.add("term_integral_bound", integral, T, integral_rtol, integral <= T * (1 + integral_rtol))
    vmin = float(np.min(v))
    rep.add("term_value_at_least_2", vmin, 2.0, value_tol, vmin >= 2.0 - value_tol)
    excess = float(np.max(lap - v))
    rep.add("term_laplacian_below_value", excess, 0.0, laplacian_tol, excess <= laplacian_tol)
    return rep


def monotonicity_scan(b: float, r_samples, a_sequence) -> dict:
    """Check ``f_{a',b}(r) >= f_{a,b}(r)`` whenever ``a' <= a`` on the samples.

    ``a_sequence`` must be strictly decreasing and positive.  Returns the
    value table, the largest violation (<= 0 means monotone) and a flag.
    """
    a_seq = [float(a) for a in a_sequence]
    if any(a <= 0 for a in a_seq) or any(y >= x for x, y in zip(a_seq, a_seq[1:])):
        raise ConfigurationError("a_sequence must be strictly decreasing and positive")
    r = np.atleast_1d(np.asarray(r_samples, dtype=float))
    table = np.array([eval_base(BaseWarp(a, b), r) for a in a_seq]).reshape(len(a_seq), len(r))
    if len(a_seq) > 1:
        violation = float(np.max(table[:-1] - table[1:]))
    else:
        violation = 0.0
    return {"a": a_seq, "r": r.tolist(), "values": table, "max_violation": violation, "passed": violation <= 1e-12}


def term_integral_bound(config: PoleConfiguration) -> float:
    return integral_bound(config.Kbar)
