"""Round two-sphere geometry: points, distances, pole configurations and grids.

Points are stored in polar coordinates ``(r, theta)`` where ``r`` is the
colatitude in ``[0, pi]`` and ``theta`` the longitude in ``[0, 2 pi)``.
Vectorised code works on ``(n, 3)`` arrays of unit vectors instead.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError

TWO_PI = 2.0 * math.pi

#: Nodes closer than this to an active pole are forbidden.
EPS_EXCL = 1e-9

#: Gauss-Legendre order used inside every grid cell (both directions).
CELL_ORDER = 8

DEFAULT_DEPTH = 12

# grading constants of the cell refinement
_GRADING = 1.5
_SCALE_FRACTION = 3.0


# ---------------------------------------------------------------------------
# points and distances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpherePoint:
    r: float
    theta: float = 0.0

    def __post_init__(self):
        r = float(self.r)
        if not (-1e-12 <= r <= math.pi + 1e-12) or math.isnan(r):
            raise ConfigurationError(f"colatitude {r!r} outside [0, pi]")
        r = min(max(r, 0.0), math.pi)
        theta = math.fmod(float(self.theta), TWO_PI)
        if theta < 0.0:
            theta += TWO_PI
        if theta >= TWO_PI:
            theta = 0.0
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "theta", theta)

    @property
    def vector(self) -> np.ndarray:
        s = math.sin(self.r)
        return np.array([s * math.cos(self.theta), s * math.sin(self.theta), math.cos(self.r)])

    @classmethod
    def from_vector(cls, v) -> "SpherePoint":
        v = np.asarray(v, dtype=float)
        v = v / np.linalg.norm(v)
        r = math.atan2(math.hypot(v[0], v[1]), v[2])
        return cls(r, math.atan2(v[1], v[0]))

    def antipode(self) -> "SpherePoint":
        return SpherePoint(math.pi - self.r, self.theta + math.pi)


def polar_to_vectors(r, theta) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    s = np.sin(r)
    return np.stack([s * np.cos(theta), s * np.sin(theta), np.cos(r)], axis=-1)


def vectors_to_polar(x):
    x = np.asarray(x, dtype=float)
    r = np.arctan2(np.hypot(x[..., 0], x[..., 1]), x[..., 2])
    theta = np.mod(np.arctan2(x[..., 1], x[..., 0]), TWO_PI)
    return r, theta


def angle_between(x, y) -> np.ndarray:
    """Great-circle distance between unit vectors (broadcasting).

    Uses ``atan2(|x cross y|, x . y)``, which stays accurate for nearly
    equal and nearly antipodal vectors.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    cross = np.linalg.norm(np.cross(x, y), axis=-1)
    dot = np.sum(x * y, axis=-1)
    return np.arctan2(cross, dot)


def geodesic_distance(x: SpherePoint, y: SpherePoint) -> float:
    """Great-circle distance in ``[0, pi]``."""
    return float(angle_between(x.vector, y.vector))


def _rotation_to(point: SpherePoint) -> np.ndarray:
    """Rotation taking the north pole to ``point`` and the meridian theta=0 along."""
    cr, sr = math.cos(point.r), math.sin(point.r)
    ct, st = math.cos(point.theta), math.sin(point.theta)
    ry = np.array([[cr, 0.0, sr], [0.0, 1.0, 0.0], [-sr, 0.0, cr]])
    rz = np.array([[ct, -st, 0.0], [st, ct, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry


def offset_point(center: SpherePoint, distance: float, bearing: float = 0.0) -> SpherePoint:
    """Point at geodesic ``distance`` from ``center``.

    ``bearing`` is measured in the rotated frame in which ``center`` sits at
    the north pole; bearing 0 follows the image of the meridian theta = 0.
    """
    local = polar_to_vectors(distance, bearing)
    return SpherePoint.from_vector(_rotation_to(center) @ local)


# ---------------------------------------------------------------------------
# sequences of weights, smoothing parameters and offsets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeometricWeights:
    """``A_i = K (1 - ratio) ratio**(i-1)``, optionally truncated after ``truncate`` terms.

    Truncated sequences are renormalised so that they still sum to ``K``.
    """

    K: float = 1.0
    ratio: float = 0.5
    truncate: int | None = None

    def __post_init__(self):
        if not (0.0 < self.ratio < 1.0):
            raise ConfigurationError("geometric weight ratio must lie in (0, 1)")
        if not self.K > 0:
            raise ConfigurationError("weight total K must be positive")
        if self.truncate is not None and self.truncate < 1:
            raise ConfigurationError("weight truncation must keep at least one term")

    def _norm(self):
        if self.truncate is None:
            return 1.0
        return -math.expm1(self.truncate * math.log(self.ratio))

    def weight(self, i: int) -> float:
        if i < 1 or (self.truncate is not None and i > self.truncate):
            return 0.0
        return self.K * (1.0 - self.ratio) * self.ratio ** (i - 1) / self._norm()

    def weights(self, n: int) -> np.ndarray:
        i = np.arange(1, n + 1)
        w = self.K * (1.0 - self.ratio) * self.ratio ** (i - 1.0) / self._norm()
        if self.truncate is not None:
            w[i > self.truncate] = 0.0
        return w

    def tail(self, n: int) -> float:
        """Exact value of ``sum_{i > n} A_i``."""
        if self.truncate is not None:
            if n >= self.truncate:
                return 0.0
            return self.K * (self.ratio ** n - self.ratio ** self.truncate) / self._norm()
        return self.K * self.ratio ** n

    @property
    def total(self) -> float:
        return self.K

    @property
    def n_terms(self):
        return self.truncate

    def to_dict(self):
        d = {"kind": "geometric", "ratio": self.ratio}
        if self.truncate is not None:
            d["truncate"] = self.truncate
        return d


@dataclass(frozen=True)
class ExplicitWeights:
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.values:
            raise ConfigurationError("explicit weight list is empty")

    def weight(self, i: int) -> float:
        return self.values[i - 1] if 1 <= i <= len(self.values) else 0.0

    def weights(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        m = min(n, len(self.values))
        out[:m] = self.values[:m]
        return out

    def tail(self, n: int) -> float:
        return math.fsum(self.values[n:])

    @property
    def total(self) -> float:
        return math.fsum(self.values)

    @property
    def n_terms(self):
        return len(self.values)

    def to_dict(self):
        return {"kind": "explicit", "values": list(self.values)}


@dataclass(frozen=True)
class PowerSmoothing:
    """``a_j = scale / j**power``."""

    scale: float = 1.0
    power: float = 2.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigurationError("smoothing scale must be positive")
        if not self.power > 0:
            raise ConfigurationError("smoothing power must be positive so that a_j -> 0")

    def __call__(self, j: int) -> float:
        return self.scale / float(j) ** self.power

    @property
    def max_level(self):
        return None

    def to_dict(self):
        return {"kind": "power", "scale": self.scale, "power": self.power}


@dataclass(frozen=True)
class ExplicitSmoothing:
    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if not vals:
            raise ConfigurationError("explicit smoothing list is empty")
        if any(v <= 0 for v in vals):
            raise ConfigurationError("smoothing parameters a_j must be positive")
        if any(b > a for a, b in zip(vals, vals[1:])):
            raise ConfigurationError("smoothing parameters must be nonincreasing")

    def __call__(self, j: int) -> float:
        if not 1 <= j <= len(self.values):
            raise ConfigurationError(f"level {j} beyond the explicit smoothing list")
        return self.values[j - 1]

    @property
    def max_level(self):
        return len(self.values)

    def to_dict(self):
        return {"kind": "explicit", "values": list(self.values)}


@dataclass(frozen=True)
class ConstantOffsets:
    value: float = 2.0

    def __call__(self, i: int) -> float:
        return self.value

    def values_upto(self, n: int) -> np.ndarray:
        return np.full(n, float(self.value))

    @property
    def max(self) -> float:
        return float(self.value)

    @property
    def min(self) -> float:
        return float(self.value)

    def to_dict(self):
        return {"kind": "constant", "value": self.value}


@dataclass(frozen=True)
class ExplicitOffsets:
    values: tuple
    default: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def __call__(self, i: int) -> float:
        return self.values[i - 1] if 1 <= i <= len(self.values) else float(self.default)

    def values_upto(self, n: int) -> np.ndarray:
        return np.array([self(i) for i in range(1, n + 1)], dtype=float)

    @property
    def max(self) -> float:
        return max(self.values + (float(self.default),))

    @property
    def min(self) -> float:
        return min(self.values + (float(self.default),))

    def to_dict(self):
        return {"kind": "explicit", "values": list(self.values), "default": self.default}


# ---------------------------------------------------------------------------
# pole rules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergingPoles:
    """Poles at distance ``scale / i**power`` from ``limit`` along a fixed meridian."""

    limit: SpherePoint = SpherePoint(0.0, 0.0)
    scale: float = 1.0
    power: float = 1.0

    case = "converging"
    depends_on_level = False

    def __post_init__(self):
        if not (0 < self.scale <= math.pi):
            raise ConfigurationError("converging rule: scale must lie in (0, pi]")
        if not self.power > 0:
            raise ConfigurationError("converging rule does not converge to the limit point (power <= 0)")

    def distance(self, i: int) -> float:
        return self.scale / float(i) ** self.power

    def pole(self, i: int, j: int | None = None) -> SpherePoint:
        return offset_point(self.limit, self.distance(i))

    def tail_caps(self, n: int):
        """Caps ``(center, radius)`` containing every pole with index > n."""
        return [(self.limit.vector, self.distance(n + 1))]

    def tail_separation(self, n: int, X) -> np.ndarray:
        """Lower bound on the distance from ``X`` to every pole with index > n or its antipode.

        Pole ``i`` sits at distance ``t_i`` from the limit point, so a point at
        distance ``delta`` is at least ``min_i |delta - t_i|`` away from it.
        """
        delta = angle_between(X, self.limit.vector[None, :])
        return np.minimum(self._ring_gap(n, delta), self._ring_gap(n, math.pi - delta))

    def _ring_gap(self, n, delta):
        top = self.distance(n + 1)
        gap = np.abs(delta - top)
        inside = delta < top
        if np.any(inside):
            with np.errstate(divide="ignore"):
                k = (self.scale / delta[inside]) ** (1.0 / self.power)
            best = np.full(k.shape, np.inf)
            for i in (np.floor(k), np.ceil(k)):
                i = np.clip(np.nan_to_num(i, posinf=1e300), n + 1, None)
                best = np.minimum(best, np.abs(delta[inside] - self.scale / i**self.power))
            gap[inside] = np.minimum(gap[inside], best)
        return gap

    def to_dict(self):
        return {"limit_point": [self.limit.r, self.limit.theta], "scale": self.scale, "power": self.power}


def _height_fractions(include_zero: bool):
    """Reduced fractions p/q in (0, 1) (optionally with 0) ordered by (p + q, p)."""
    if include_zero:
        yield (0, 1)
    height = 3
    while True:
        for p in range(1, height):
            q = height - p
            if p < q and math.gcd(p, q) == 1:
                yield (p, q)
        height += 1


@lru_cache(maxsize=None)
def _dense_prefix(n: int):
    """First ``n`` points of the rational dense enumeration as (r, theta) pairs.

    Colatitude fractions run over reduced p/q in (0, 1) and longitude
    fractions over reduced p'/q' in [0, 1), each ordered by height p + q.
    The two index sequences are interleaved along Cantor diagonals.
    """
    r_seq, t_seq = [], []
    r_gen, t_gen = _height_fractions(False), _height_fractions(True)
    out = []
    for diag in itertools.count():
        while len(r_seq) <= diag:
            r_seq.append(next(r_gen))
            t_seq.append(next(t_gen))
        for k in range(diag + 1):
            (p, q), (pp, qq) = r_seq[k], t_seq[diag - k]
            out.append((math.pi * p / q, TWO_PI * pp / qq))
            if len(out) >= n:
                return tuple(out)


def poles_dense_prefix(n: int) -> list[SpherePoint]:
    return [SpherePoint(r, t) for r, t in _dense_prefix(n)]


@dataclass(frozen=True)
class DensePoles:
    """Countable dense set of points with rational colatitude and longitude fractions."""

    case = "dense"
    depends_on_level = False

    def pole(self, i: int, j: int | None = None) -> SpherePoint:
        r, t = _dense_prefix(i)[i - 1]
        return SpherePoint(r, t)

    def tail_caps(self, n: int):
        return None

    def to_dict(self):
        return {}


@dataclass(frozen=True)
class EquatorPoles:
    """Level-dependent poles ``(pi/2, 2 pi i / j)``."""

    case = "equator"
    depends_on_level = True

    def pole(self, i: int, j: int | None = None) -> SpherePoint:
        if j is None:
            raise ConfigurationError("equator poles depend on the level j")
        return poles_case3(i, j)

    def tail_caps(self, n: int):
        return None

    def to_dict(self):
        return {}


@dataclass(frozen=True)
class CustomPoles:
    """Explicit finite list of poles; ``x_ij = points[i-1]`` for every level."""

    points: tuple

    case = "custom"
    depends_on_level = False

    def __post_init__(self):
        pts = tuple(p if isinstance(p, SpherePoint) else SpherePoint(*p) for p in self.points)
        if not pts:
            raise ConfigurationError("custom configuration needs at least one point")
        object.__setattr__(self, "points", pts)

    def pole(self, i: int, j: int | None = None) -> SpherePoint:
        if not 1 <= i <= len(self.points):
            raise ConfigurationError(f"custom configuration has no pole number {i}")
        return self.points[i - 1]

    def tail_caps(self, n: int):
        return [(p.vector, 0.0) for p in self.points[n:]]

    def to_dict(self):
        return {"points": [[p.r, p.theta] for p in self.points]}


def poles_case1(limit_point: SpherePoint = SpherePoint(0.0, 0.0), scale: float = 1.0, power: float = 1.0, **kw):
    """Configuration whose poles converge to ``limit_point`` (level independent)."""
    return PoleConfiguration(ConvergingPoles(limit_point, scale, power), **kw)


def poles_case2(enumeration_seed: int | None = None, n_poles: int | None = 64, **kw):
    """Configuration over the rational dense enumeration.

    The enumeration is deterministic; ``enumeration_seed`` is accepted for
    interface compatibility and must be ``None`` or 0.  ``n_poles`` truncates
    the weight sequence (weights beyond it vanish).
    """
    if enumeration_seed not in (None, 0):
        raise ConfigurationError("the dense enumeration is fixed; only seed 0 is defined")
    if "weights" not in kw:
        kw["weights"] = GeometricWeights(kw.pop("K", 1.0), 0.5, n_poles)
    return PoleConfiguration(DensePoles(), **kw)


def poles_case3(i: int, j: int) -> SpherePoint:
    """Equator pole number ``i`` at level ``j``."""
    if i < 1 or j < 1:
        raise ConfigurationError("equator poles need i, j >= 1")
    return SpherePoint(math.pi / 2, TWO_PI * ((i % j) / j))


def equator_configuration(**kw):
    return PoleConfiguration(EquatorPoles(), **kw)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def integral_bound(kbar: float) -> float:
    """Bound T on the sphere integral of every term, ``8 pi - 4 pi ln 4 + 4 pi Kbar``."""
    return 8 * math.pi - 4 * math.pi * math.log(4.0) + 4 * math.pi * kbar


@dataclass(frozen=True)
class PoleConfiguration:
    poles: object
    weights: object = field(default_factory=GeometricWeights)
    smoothing: object = field(default_factory=PowerSmoothing)
    offsets: object = field(default_factory=ConstantOffsets)
    Kbar: float | None = None

    def __post_init__(self):
        if self.weight(1) <= 0:
            raise ConfigurationError("A_1 must be positive")
        if self.Kbar is None:
            object.__setattr__(self, "Kbar", max(2.0, self.offsets.max))
        n = self.weights.n_terms
        if n is not None and isinstance(self.poles, CustomPoles) and n > len(self.poles.points):
            raise ConfigurationError("custom configuration has more weights than points")
        probe = self.weights.weights(n if n is not None else 256)
        if np.any(probe < 0):
            raise ConfigurationError("weights A_i must be nonnegative")

    # --- accessors ---------------------------------------------------------
    @property
    def case(self) -> str:
        return self.poles.case

    @property
    def K(self) -> float:
        return self.weights.total

    @property
    def T(self) -> float:
        return integral_bound(self.Kbar)

    def weight(self, i: int) -> float:
        return self.weights.weight(i)

    def pole(self, i: int, j: int | None = None) -> SpherePoint:
        return self.poles.pole(i, j)

    def smoothing_at(self, j: int) -> float:
        return self.smoothing(j)

    def offset(self, i: int) -> float:
        return self.offsets(i)

    def has_limit(self) -> bool:
        return not self.poles.depends_on_level

    def level_terms(self, j: int):
        """Arrays ``(A, a, b, poles)`` of the j-term sum at level j (custom lists stop at their last point)."""
        if j < 1:
            raise ConfigurationError("levels start at 1")
        n = self.limit_term_count() if isinstance(self.poles, CustomPoles) else None
        n = j if n is None else min(j, n)
        A = self.weights.weights(n)
        b = self.offsets.values_upto(n)
        P = np.array([self.pole(i, j).vector for i in range(1, n + 1)]).reshape(-1, 3)
        a = np.full(n, self.smoothing(j))
        return A, a, b, P

    def limit_terms(self, start: int, stop: int):
        """Terms ``start..stop-1`` (1-based) of the limit sum, with a = 0."""
        if not self.has_limit():
            raise ConfigurationError(f"case '{self.case}' has no explicit limit warp")
        idx = range(start, stop)
        A = np.array([self.weight(i) for i in idx])
        b = np.array([self.offset(i) for i in idx])
        P = np.array([self.pole(i).vector for i in idx]).reshape(-1, 3)
        return A, np.zeros(len(A)), b, P

    def limit_term_count(self):
        """Number of nonzero-weight limit terms, or None if infinite."""
        n = self.weights.n_terms
        if isinstance(self.poles, CustomPoles):
            n = len(self.poles.points) if n is None else min(n, len(self.poles.points))
        return n

    def validate(self, levels: Iterable[int] = ()) -> list[str]:
        """Human-readable list of admissibility problems (empty when admissible)."""
        problems = []
        if self.weight(1) <= 0:
            problems.append("A_1 must be positive")
        n = self.weights.n_terms or 256
        if np.any(self.weights.weights(n) < 0):
            problems.append("weights must be nonnegative")
        if not self.Kbar >= 2:
            problems.append(f"Kbar = {self.Kbar} must be at least 2")
        levels = list(levels)
        top = max(levels) if levels else 16
        smax = self.smoothing.max_level
        if smax is not None and top > smax:
            problems.append(f"level {top} exceeds the explicit smoothing list")
            top = smax
        prev = None
        for j in range(1, top + 1):
            aj = self.smoothing(j)
            if aj <= 0:
                problems.append(f"a_{j} = {aj} must be positive")
            if prev is not None and aj > prev:
                problems.append(f"a_{j} > a_{j - 1}: smoothing must be nonincreasing")
            prev = aj
        nb = max(top, len(getattr(self.offsets, "values", ())))
        for i in range(1, nb + 1):
            bi = self.offset(i)
            if not (2.0 <= bi <= self.Kbar):
                problems.append(f"b_{i} = {bi} outside [2, Kbar={self.Kbar}]")
        return problems

    # --- serialisation -----------------------------------------------------
    def to_dict(self) -> dict:
        d = {
            "case": self.case,
            "weight_rule": self.weights.to_dict(),
            "smoothing_rule": self.smoothing.to_dict(),
            "offset_rule": self.offsets.to_dict(),
            "K": self.K,
            "Kbar": self.Kbar,
        }
        d.update(self.poles.to_dict())
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "PoleConfiguration":
        return configuration_from_dict(d)

    @classmethod
    def from_json(cls, text: str) -> "PoleConfiguration":
        return configuration_from_dict(json.loads(text))


_CASES = ("converging", "dense", "equator", "custom")


def configuration_from_dict(d: dict) -> PoleConfiguration:
    """Build a configuration from its JSON document form."""
    if not isinstance(d, dict):
        raise ConfigurationError("configuration must be a JSON object")
    case = d.get("case")
    if case not in _CASES:
        raise ConfigurationError(f"'case' must be one of {_CASES}, got {case!r}")
    K = float(d.get("K", 1.0))

    wr = dict(d.get("weight_rule", {"kind": "geometric"}))
    kind = wr.pop("kind", "geometric")
    if kind == "geometric":
        trunc = wr.get("truncate", 64 if case == "dense" else None)
        weights = GeometricWeights(K, float(wr.get("ratio", 0.5)), trunc)
    elif kind == "explicit":
        weights = ExplicitWeights(wr["values"])
        if "K" in d and abs(weights.total - K) > 1e-9 * max(1.0, K):
            raise ConfigurationError(f"K = {K} does not match the sum of explicit weights {weights.total}")
    else:
        raise ConfigurationError(f"unknown weight_rule kind {kind!r}")

    sr = dict(d.get("smoothing_rule", {"kind": "power"}))
    kind = sr.pop("kind", "power")
    if kind == "power":
        smoothing = PowerSmoothing(float(sr.get("scale", 1.0)), float(sr.get("power", 2.0)))
    elif kind == "explicit":
        smoothing = ExplicitSmoothing(sr["values"])
    else:
        raise ConfigurationError(f"unknown smoothing_rule kind {kind!r}")

    orule = dict(d.get("offset_rule", {"kind": "constant"}))
    kind = orule.pop("kind", "constant")
    if kind == "constant":
        offsets = ConstantOffsets(float(orule.get("value", 2.0)))
    elif kind == "explicit":
        offsets = ExplicitOffsets(orule["values"], float(orule.get("default", 2.0)))
    else:
        raise ConfigurationError(f"unknown offset_rule kind {kind!r}")

    if case == "converging":
        lp = d.get("limit_point", [0.0, 0.0])
        poles = ConvergingPoles(SpherePoint(*lp), float(d.get("scale", 1.0)), float(d.get("power", 1.0)))
    elif case == "dense":
        poles = DensePoles()
    elif case == "equator":
        poles = EquatorPoles()
    else:
        if "points" not in d:
            raise ConfigurationError("custom case requires an explicit 'points' list")
        poles = CustomPoles(tuple(tuple(p) for p in d["points"]))
    kbar = d.get("Kbar")
    return PoleConfiguration(poles, weights, smoothing, offsets, None if kbar is None else float(kbar))


# ---------------------------------------------------------------------------
# quadrature grids
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _gauss(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


@dataclass(frozen=True)
class RefinementPoint:
    vector: tuple
    scale: float  # 0 marks a singular point (refined down to the depth limit)


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Tensor Gauss-Legendre cells in ``(r, theta)`` with graded local refinement.

    Every leaf cell carries a ``CELL_ORDER x CELL_ORDER`` product rule, so the
    weights (in steradians) sum to ``4 pi`` up to rounding for any refinement.
    """

    points: np.ndarray
    weights: np.ndarray
    r: np.ndarray
    theta: np.ndarray
    resolution: int
    depth_limit: int
    refinement: tuple = ()
    eps_excl: float = EPS_EXCL
    n_cells: int = 0

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def refinement_vectors(self) -> np.ndarray:
        return np.array([p.vector for p in self.refinement]).reshape(-1, 3)

    def min_pole_distance(self, poles=None) -> float:
        poles = self.refinement_vectors if poles is None else np.asarray(poles, float).reshape(-1, 3)
        if len(poles) == 0:
            return math.pi
        d, _ = cKDTree(poles).query(self.points)
        # chord to arc length
        return float(np.min(2 * np.arcsin(np.clip(d / 2, 0, 1))))

    def with_depth(self, depth_limit: int) -> "SphereGrid":
        return _build(self.resolution, self.refinement, depth_limit, self.eps_excl)


def refinement_for(config: PoleConfiguration | None, levels=(), limit_terms: int | None = None):
    """Refinement points for the poles (and antipodes) active at ``levels``.

    ``levels`` may contain ``math.inf`` for the limit warp; its singular
    points are the first ``limit_terms`` poles with nonzero weight.
    """
    if config is None:
        return ()
    if isinstance(levels, (int, float)):
        levels = [levels]
    pts = []
    for j in levels:
        if math.isinf(j):
            n = limit_terms or _default_limit_refinement(config)
            for i in range(1, n + 1):
                if config.weight(i) > 0:
                    v = config.pole(i).vector
                    pts += [(v, 0.0), (-v, 0.0)]
        else:
            j = int(j)
            s = math.sqrt(config.smoothing(j))
            for i in range(1, j + 1):
                if config.weight(i) > 0:
                    v = config.pole(i, j).vector
                    pts += [(v, s), (-v, s)]
    return _merge_points(pts)


def _default_limit_refinement(config) -> int:
    n = config.limit_term_count()
    cap = 256
    # terms lighter than 1e-10 K contribute below quadrature accuracy
    for i in range(1, cap + 1):
        if n is not None and i > n:
            return n
        if config.weights.tail(i) <= 1e-10 * config.K:
            return i
    return cap


def _merge_points(pts):
    merged: list[list] = []
    for v, s in pts:
        v = np.asarray(v, float)
        for m in merged:
            if np.linalg.norm(m[0] - v) < 1e-12:
                m[1] = min(m[1], s)
                break
        else:
            merged.append([v, s])
    return tuple(RefinementPoint(tuple(float(c) for c in v), float(s)) for v, s in merged)


def build_grid(resolution: int = 32, config: PoleConfiguration | None = None, depth_limit: int = DEFAULT_DEPTH,
               levels=(), *, points: Sequence[RefinementPoint] | None = None, limit_terms: int | None = None,
               eps_excl: float = EPS_EXCL) -> SphereGrid:
    """Quadrature grid on the sphere refined around the poles used at ``levels``.

    ``resolution`` is the number of Gauss nodes in ``cos r`` of the base grid
    (rounded up to a multiple of the cell order); longitude gets twice as
    many.  Extra refinement points can be passed directly via ``points``.
    """
    if resolution < 8:
        raise ConfigurationError("grid resolution must be at least 8")
    if depth_limit < 0 or depth_limit > 40:
        raise ConfigurationError("depth_limit must lie in [0, 40]")
    refinement = tuple(points or ()) + tuple(refinement_for(config, levels, limit_terms))
    return _build(int(resolution), refinement, int(depth_limit), eps_excl)


def _build(resolution, refinement, depth_limit, eps_excl) -> SphereGrid:
    # cells are (r_lo, r_hi, theta_lo, theta_hi); equal-width panels in cos r at the base
    nt = -(-resolution // CELL_ORDER)
    nth = 2 * nt
    rb = np.arccos(np.linspace(1.0, -1.0, nt + 1))
    pb = np.linspace(0.0, TWO_PI, nth + 1)
    R0, P0 = np.meshgrid(rb[:-1], pb[:-1], indexing="ij")
    R1, P1 = np.meshgrid(rb[1:], pb[1:], indexing="ij")
    cells = np.stack([R0.ravel(), R1.ravel(), P0.ravel(), P1.ravel()], axis=1)

    leaves = []
    if refinement:
        R = np.array([p.vector for p in refinement])
        S = np.array([p.scale for p in refinement])
        Rr, Rp = vectors_to_polar(R)
        for _ in range(depth_limit):
            if len(cells) == 0:
                break
            split_r, split_p = _split_flags(cells, R, Rr, Rp, S)
            keep = ~(split_r | split_p)
            leaves.append(cells[keep])
            cells = _children(cells[~keep], split_r[~keep], split_p[~keep])
    leaves.append(cells)
    cells = np.concatenate(leaves, axis=0)

    x, w = _gauss(CELL_ORDER)
    ra, rbb, p0, p1 = cells.T
    # Gauss nodes in r with the sin r area factor folded into the weights; this
    # stays high order for smooth fields even in cells touching r = 0 or pi
    hr = (rbb - ra) / 2
    rn = (ra + rbb)[:, None] / 2 + hr[:, None] * x[None, :]
    wt = hr[:, None] * w[None, :] * np.sin(rn)
    hp = (p1 - p0) / 2
    pn = (p0 + p1)[:, None] / 2 + hp[:, None] * x[None, :]
    wp = hp[:, None] * w[None, :]
    r = np.repeat(rn, CELL_ORDER, axis=1).ravel()
    Pn = np.tile(pn, (1, CELL_ORDER)).ravel()
    W = (np.repeat(wt, CELL_ORDER, axis=1) * np.tile(wp, (1, CELL_ORDER))).ravel()
    pts = polar_to_vectors(r, Pn)
    grid = SphereGrid(pts, W, r, Pn, resolution, depth_limit, tuple(refinement), eps_excl, len(cells))
    if refinement:
        dmin = grid.min_pole_distance()
        if dmin < eps_excl:
            raise ConfigurationError(
                f"resolution {resolution} too small for depth {depth_limit}: a node lies {dmin:.3g} rad from a pole"
            )
    return grid


def _split_flags(cells, R, Rr, Rp, S):
    ra, rb, p0, p1 = cells.T
    dr = rb - ra
    dp = p1 - p0
    sinmax = np.where((ra <= math.pi / 2) & (rb >= math.pi / 2), 1.0, np.maximum(np.sin(ra), np.sin(rb)))
    width = dp * sinmax
    size = np.maximum(dr, width)
    flag = np.zeros(len(cells), dtype=bool)
    chunk = max(1, 2_000_000 // max(1, len(R)))
    for s in range(0, len(cells), chunk):
        sl = slice(s, s + chunk)
        rc = np.clip(Rr[None, :], ra[sl, None], rb[sl, None])
        rel = np.mod(Rp[None, :] - p0[sl, None], TWO_PI)
        inside = rel <= dp[sl, None]
        to_lo = TWO_PI - rel
        to_hi = rel - dp[sl, None]
        pc = np.where(inside, Rp[None, :], np.where(to_lo < to_hi, p0[sl, None], p1[sl, None]))
        D = angle_between(polar_to_vectors(rc, pc), R[None, :, :])
        need = (size[sl, None] * _GRADING > D) & (size[sl, None] > S[None, :] / _SCALE_FRACTION)
        flag[sl] = need.any(axis=1)
    split_r = flag & (dr >= 0.5 * width)
    split_p = flag & (width >= 0.5 * dr)
    return split_r, split_p


def _children(cells, split_r, split_p):
    out = []
    for (r0, r1, p0, p1), sr, sp in zip(cells, split_r, split_p):
        rs = [(r0, (r0 + r1) / 2), ((r0 + r1) / 2, r1)] if sr else [(r0, r1)]
        ps = [(p0, (p0 + p1) / 2), ((p0 + p1) / 2, p1)] if sp else [(p0, p1)]
        for a, b in rs:
            for c0, c1 in ps:
                out.append((a, b, c0, c1))
    return np.array(out, dtype=float).reshape(-1, 4)
