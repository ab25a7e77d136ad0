"""Graph approximations of the warped product ``S^2 x_h S^1``.

Nodes form a lattice in the coordinates ``(r, theta, phi)``.  Each node is
joined to the lattice points reached by primitive offsets with components in
``{-2, ..., 2}``, which keeps the anisotropy of graph distances small.  Edge
lengths integrate ``sqrt(dr^2 + sin^2 r dtheta^2 + h^2 dphi^2)`` along the
coordinate segment with a 3-point Gauss rule.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import ConfigurationError
from .sphere import TWO_PI, polar_to_vectors

_GL3_T = np.array([0.5 - 0.5 * math.sqrt(0.6), 0.5, 0.5 + 0.5 * math.sqrt(0.6)])
_GL3_W = np.array([5.0, 8.0, 5.0]) / 18.0
DEFAULT_SHAPE = (16, 32, 32)
BALL_GUARD = math.pi / 4


def stencil(span: int = 2, scales=None):
    """Primitive lattice offsets, one of each +/- pair.

    Without ``scales`` every component lies in ``{-span..span}``.  With
    ``scales`` (physical spacing per axis) the offsets are those whose
    physical length is at most ``span`` times the smallest spacing.
    """
    if scales is None:
        lim = (span, span, span)
        reach = math.inf
    else:
        scales = np.asarray(scales, dtype=float)
        reach = span * scales.min()
        lim = tuple(int(math.floor(reach / s + 1e-9)) for s in scales)
    out = []
    for dk in range(-lim[0], lim[0] + 1):
        for dl in range(-lim[1], lim[1] + 1):
            for dm in range(-lim[2], lim[2] + 1):
                v = (dk, dl, dm)
                if v <= (0, 0, 0):
                    continue
                if math.gcd(math.gcd(abs(dk), abs(dl)), abs(dm)) != 1:
                    continue
                if scales is not None and math.sqrt(float(np.sum((np.array(v) * scales) ** 2))) > reach * (1 + 1e-9):
                    continue
                out.append(v)
    return out


class ProductGrid:
    """Weighted lattice graph for ``g = g_sphere + h^2 g_circle``.

    ``bounds`` is ``None`` for the whole manifold (colatitudes offset by half
    a cell so no node sits on a coordinate pole, periodic ``theta`` and
    ``phi``) or ``((r0, r1), (t0, t1), (p0, p1))`` for a coordinate patch
    whose nodes include both ends of every range.  ``frozen = (r, theta)``
    replaces ``sin r`` and ``h`` by their first-order Taylor polynomials
    there.  At ``r = pi/2`` that metric is exactly flat, and it shares the
    first-order variation of the lattice anisotropy with the true metric.
    ``chart`` is a rotation applied to lattice points before evaluating ``h``.
    """

    def __init__(self, field, shape=DEFAULT_SHAPE, bounds=None, frozen=None, span: int = 2, chart=None,
                 isotropic_span: bool = False):
        n_r, n_t, n_p = (int(n) for n in shape)
        if min(n_r, n_t, n_p) < 3:
            raise ConfigurationError("each lattice dimension needs at least 3 nodes")
        self.field = field
        self.shape = (n_r, n_t, n_p)
        self.full = bounds is None
        if self.full:
            if n_t % 2 or n_p % 2:
                raise ConfigurationError("full grids need even theta and phi counts")
            self.dr, self.dt, self.dp = math.pi / n_r, TWO_PI / n_t, TWO_PI / n_p
            self.r = (np.arange(n_r) + 0.5) * self.dr
            self.theta = np.arange(n_t) * self.dt
            self.phi = np.arange(n_p) * self.dp
        else:
            (r0, r1), (t0, t1), (p0, p1) = bounds
            if not (0.0 < r0 < r1 < math.pi):
                raise ConfigurationError("patch colatitudes must stay strictly inside (0, pi)")
            if not (t1 > t0 and p1 > p0 and t1 - t0 < TWO_PI and p1 - p0 < TWO_PI):
                raise ConfigurationError("patch ranges must be increasing and shorter than a period")
            self.r, self.dr = np.linspace(r0, r1, n_r), (r1 - r0) / (n_r - 1)
            self.theta, self.dt = np.linspace(t0, t1, n_t), (t1 - t0) / (n_t - 1)
            self.phi, self.dp = np.linspace(p0, p1, n_p), (p1 - p0) / (n_p - 1)
        self.span = int(span)
        self.isotropic_span = bool(isotropic_span)
        self.chart = None if chart is None else np.asarray(chart, dtype=float)
        self.frozen = None
        if frozen is not None:
            rc, tc = (float(v) for v in frozen)
            hc = float(self._h(np.array([rc]), np.array([tc]))[0])
            # first derivatives of h along the chart coordinates at the centre
            x = polar_to_vectors(rc, tc)
            e_r = np.array([math.cos(rc) * math.cos(tc), math.cos(rc) * math.sin(tc), -math.sin(rc)])
            e_t = np.array([-math.sin(tc), math.cos(tc), 0.0]) * math.sin(rc)
            if self.chart is not None:
                x, e_r, e_t = self.chart @ x, self.chart @ e_r, self.chart @ e_t
            grad = np.asarray(field.gradient(x[None, :]), dtype=float)[0]
            self.frozen = (rc, tc, hc, float(grad @ e_r), float(grad @ e_t))
        self._build()

    # --- construction -----------------------------------------------------

    def _h(self, r, t):
        shp = np.shape(r)
        X = polar_to_vectors(np.ravel(r), np.ravel(t))
        if self.chart is not None:
            X = X @ self.chart.T
        vals = self.field.value(X)
        return np.asarray(vals, dtype=float).reshape(shp)

    def _coefficients(self, r, t):
        """``(sin r, h)`` at coordinate positions, honouring a frozen metric."""
        if self.frozen is not None:
            rc, tc, hc, hr, ht = self.frozen
            s = math.sin(rc) + math.cos(rc) * (r - rc)
            return s, hc + hr * (r - rc) + ht * (t - tc)
        return np.sin(r), self._h(r, t)

    def node_id(self, k, l, m):
        n_r, n_t, n_p = self.shape
        return (np.asarray(k) * n_t + np.asarray(l)) * n_p + np.asarray(m)

    def _build(self):
        n_r, n_t, n_p = self.shape
        R2, T2 = np.meshgrid(self.r, self.theta, indexing="ij")
        s0, h0 = self._coefficients(R2, T2)
        if np.any(~np.isfinite(h0)) or np.any(h0 <= 0):
            raise ConfigurationError("warp must be finite and positive at every lattice node")
        self.h2d = h0
        self.cell_volume2d = h0 * s0 * self.dr * self.dt * self.dp
        K2, L2 = np.meshgrid(np.arange(n_r), np.arange(n_t), indexing="ij")
        M = np.arange(n_p)
        rows, cols, lens = [], [], []
        seg_cache = {}
        scales = None
        if self.isotropic_span:
            kc, lc = n_r // 2, n_t // 2
            scales = (self.dr, self.dt * s0[kc, lc], self.dp * h0[kc, lc])
        for dk, dl, dm in stencil(self.span, scales):
            k2 = K2 + dk
            l2 = L2 + dl
            ok = (k2 >= 0) & (k2 < n_r)
            if self.full:
                l2 = l2 % n_t
            else:
                ok &= (l2 >= 0) & (l2 < n_t)
            if not np.any(ok):
                continue
            key = (dk, dl)
            if key not in seg_cache:
                rr = R2[..., None] + _GL3_T * dk * self.dr
                tt = T2[..., None] + _GL3_T * dl * self.dt
                seg_cache[key] = self._coefficients(rr, tt)
            s, h = seg_cache[key]
            planar = (dk * self.dr) ** 2 + (s * dl * self.dt) ** 2
            length = np.sqrt(planar + (h * dm * self.dp) ** 2) @ _GL3_W
            m2 = M + dm
            mok = np.ones(n_p, bool)
            if self.full:
                m2 = m2 % n_p
            else:
                mok = (m2 >= 0) & (m2 < n_p)
            src = self.node_id(K2[ok][:, None], L2[ok][:, None], M[mok][None, :])
            dst = self.node_id(k2[ok][:, None], l2[ok][:, None], m2[mok][None, :])
            rows.append(src.ravel())
            cols.append(dst.ravel())
            lens.append(np.repeat(length[ok], int(mok.sum())))
        if self.full:
            # chords through the coordinate poles on the first and last rings
            half = n_t // 2
            for k in (0, n_r - 1):
                l = np.arange(half)
                chord = 2.0 * min(self.r[k], math.pi - self.r[k])
                src = self.node_id(k, l[:, None], M[None, :])
                dst = self.node_id(k, (l + half)[:, None], M[None, :])
                rows.append(src.ravel())
                cols.append(dst.ravel())
                lens.append(np.full(src.size, chord))
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        lens = np.concatenate(lens)
        if np.any(~(lens > 0)):
            raise ConfigurationError("nonpositive edge length")
        n = n_r * n_t * n_p
        A = coo_matrix((lens, (rows, cols)), shape=(n, n)).tocsr()
        self.adjacency = A
        self.max_edge = float(lens.max())
        self.n_edges = len(lens)
        ncomp, _ = connected_components(A, directed=False)
        if ncomp != 1:
            raise ConfigurationError(f"lattice graph is disconnected ({ncomp} components)")

    # --- lattice helpers --------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def cell_volumes(self) -> np.ndarray:
        return np.repeat(self.cell_volume2d.ravel(), self.shape[2])

    @property
    def total_volume(self) -> float:
        return math.fsum(self.cell_volumes.tolist())

    def coordinates(self, node):
        n_r, n_t, n_p = self.shape
        k, rem = divmod(int(node), n_t * n_p)
        l, m = divmod(rem, n_p)
        return float(self.r[k]), float(self.theta[l]), float(self.phi[m])

    def nearest_node(self, point) -> int:
        """Lattice node closest in coordinates to ``(r, theta, phi)``."""
        r, t, p = (float(v) for v in point)
        k = int(np.argmin(np.abs(self.r - r)))
        if self.full:
            l = int(round(t / self.dt)) % self.shape[1]
            m = int(round(p / self.dp)) % self.shape[2]
        else:
            l = int(np.argmin(np.abs(self.theta - t)))
            m = int(np.argmin(np.abs(self.phi - p)))
        return int(self.node_id(k, l, m))

    def _node(self, p) -> int:
        if isinstance(p, (int, np.integer)):
            if not 0 <= p < self.n_nodes:
                raise IndexError("node index out of range")
            return int(p)
        return self.nearest_node(p)

    def with_frozen_metric(self, center) -> "ProductGrid":
        """Same lattice with the metric linearized at ``center = (r, theta)``."""
        bounds = None
        if not self.full:
            bounds = ((self.r[0], self.r[-1]), (self.theta[0], self.theta[-1]), (self.phi[0], self.phi[-1]))
        return ProductGrid(self.field, self.shape, bounds, frozen=center, span=self.span, chart=self.chart,
                           isotropic_span=self.isotropic_span)


@dataclass
class DistanceField:
    source: int
    distances: np.ndarray

    def max_lipschitz_violation(self, grid: ProductGrid) -> float:
        """Largest ``d(v) - d(u) - len(u, v)`` over edges (<= 0 up to rounding)."""
        A = grid.adjacency.tocoo()
        d = self.distances
        return float(max(np.max(d[A.col] - d[A.row] - A.data), np.max(d[A.row] - d[A.col] - A.data)))

    def to_csv(self, grid: ProductGrid, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "theta", "phi", "distance"])
            for node, dist in enumerate(self.distances):
                w.writerow([repr(v) for v in grid.coordinates(node)] + [repr(float(dist))])


def distance_field(grid: ProductGrid, source) -> DistanceField:
    src = grid._node(source)
    return DistanceField(src, dijkstra(grid.adjacency, directed=False, indices=src))


def shortest_distance(grid: ProductGrid, p, q) -> float:
    """Graph geodesic length between two nodes (indices or coordinate triples)."""
    a, b = grid._node(p), grid._node(q)
    if a == b:
        return 0.0
    return float(distance_field(grid, a).distances[b])


def _circle_distance(a, b):
    d = np.mod(np.abs(np.asarray(a) - np.asarray(b)), TWO_PI)
    return np.minimum(d, TWO_PI - d)


def distance_bound(field, p, q) -> float:
    """Path-length bound ``|r1 - r2| + sin(r2) d(theta) + h(r2, theta2) d(phi)``."""
    r1, t1, f1 = p
    r2, t2, f2 = q
    h2 = float(field.value(polar_to_vectors(np.array([r2]), np.array([t2])))[0])
    return abs(r1 - r2) + math.sin(r2) * float(_circle_distance(t1, t2)) + h2 * float(_circle_distance(f1, f2))


def check_distance_bound(grid: ProductGrid, field, pairs):
    """Graph distance against the path-length bound for each node pair.

    Passes when every distance is at most bound + slack, with slack three
    times the longest edge.
    """
    from .report import VerificationReport

    slack = 3.0 * grid.max_edge
    pairs = [(grid._node(a), grid._node(b)) for a, b in pairs]
    by_source = {}
    for a, b in pairs:
        by_source.setdefault(a, []).append(b)
    worst = -math.inf
    n_fail = 0
    for a, targets in by_source.items():
        d = distance_field(grid, a).distances
        pa = grid.coordinates(a)
        for b in targets:
            bound = distance_bound(field, pa, grid.coordinates(b))
            margin = float(d[b]) - bound
            worst = max(worst, margin)
            n_fail += margin > slack
    rep = VerificationReport()
    rep.add("distance_bound", worst, slack, slack, n_fail == 0,
            f"{len(pairs)} pairs; worst (distance - bound) vs slack; {n_fail} failures")
    return rep


def diameter_estimate(grid: ProductGrid, n_sources: int = 16, seed: int = 0) -> float:
    """Farthest-point sampling lower bound on the graph diameter."""
    if n_sources < 1:
        raise ConfigurationError("need at least one source")
    rng = np.random.default_rng(seed)
    src = int(rng.integers(grid.n_nodes))
    best = 0.0
    seen = set()
    for _ in range(n_sources):
        seen.add(src)
        d = dijkstra(grid.adjacency, directed=False, indices=src)
        far = int(np.argmax(d))
        best = max(best, float(d[far]))
        if far in seen:
            # converged to a farthest pair; restart from a fresh random node
            far = int(rng.integers(grid.n_nodes))
        src = far
    return best


def diameter_bound(config) -> float:
    return 4.0 * math.pi + 2.0 * math.pi * config.K * config.T


# ---------------------------------------------------------------------------
# ball volumes and the curvature probe
# ---------------------------------------------------------------------------


def _coverage(d, radius, width):
    if radius <= 0:
        return np.zeros_like(d)
    return np.clip((radius - d) / width + 0.5, 0.0, 1.0)


def ball_volume(grid: ProductGrid, center, radius: float, *, guard: float = BALL_GUARD, smooth: bool = True,
                distances=None) -> float:
    """Volume of the graph ball; ``smooth`` weights boundary cells by fractional coverage."""
    if radius > guard:
        raise ConfigurationError(f"radius {radius} exceeds the guard {guard}")
    if radius < 0:
        raise ConfigurationError("radius must be nonnegative")
    c = grid._node(center)
    d = distance_field(grid, c).distances if distances is None else distances
    vol = grid.cell_volumes
    if smooth:
        width = float(vol[c]) ** (1.0 / 3.0)
        w = _coverage(d, radius, width)
    else:
        w = (d <= radius).astype(float)
    return math.fsum((vol * w).tolist())


@dataclass
class ProbeResult:
    radii: list
    volumes: list
    reference_volumes: list
    raw_quotients: list
    matched_quotients: list
    raw_c0: float
    calibrated: float
    residual: float
    low_confidence: bool

    def to_dict(self):
        return dict(self.__dict__)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["radius", "volume", "reference_volume", "raw_quotient", "matched_quotient"])
            for row in zip(self.radii, self.volumes, self.reference_volumes, self.raw_quotients,
                           self.matched_quotients):
                w.writerow([repr(float(v)) for v in row])


CALIBRATION = 30.0


def _fit(radii, q):
    A = np.column_stack([np.ones_like(radii), radii**2])
    coef, *_ = np.linalg.lstsq(A, q, rcond=None)
    resid = q - A @ coef
    return coef, float(np.sqrt(np.mean(resid**2)))


def scalar_probe(grid: ProductGrid, center, radii, *, reference: ProductGrid | None = None,
                 residual_threshold: float = 0.1, guard: float = BALL_GUARD) -> ProbeResult:
    """Curvature from the ball-volume deficit, fitted as ``c0 + c1 r^2``.

    ``raw_c0`` uses the exact Euclidean ball volume.  ``calibrated`` is
    ``30 c0`` with the deficit taken against a flat metric discretized on the
    same lattice, which cancels most of the graph-distance bias.
    """
    radii = np.asarray(sorted(radii), dtype=float)
    if len(radii) < 4:
        raise ConfigurationError("the probe needs at least 4 radii")
    if radii[0] <= 0 or radii[-1] > guard:
        raise ConfigurationError("probe radii must lie in (0, guard]")
    c = grid._node(center)
    rc, tc, _ = grid.coordinates(c)
    if reference is None:
        reference = grid.with_frozen_metric((rc, tc))
    d = distance_field(grid, c).distances
    d_ref = distance_field(reference, c).distances
    vols = np.array([ball_volume(grid, c, r, guard=guard, distances=d) for r in radii])
    refs = np.array([ball_volume(reference, c, r, guard=guard, distances=d_ref) for r in radii])
    euclid = 4.0 * math.pi / 3.0 * radii**3
    raw_q = (euclid - vols) / (radii**2 * euclid)
    matched_q = (refs - vols) / (radii**2 * refs)
    (raw_c0, _), _ = _fit(radii, raw_q)
    (m_c0, _), resid = _fit(radii, matched_q)
    calibrated = CALIBRATION * m_c0
    return ProbeResult(radii.tolist(), vols.tolist(), refs.tolist(), raw_q.tolist(), matched_q.tolist(),
                       float(raw_c0), float(calibrated), CALIBRATION * resid,
                       bool(CALIBRATION * resid > residual_threshold * max(1.0, abs(calibrated))))


def chart_at(center) -> np.ndarray:
    """Rotation taking the chart point ``(pi/2, 0)`` to ``center = (r, theta)``."""
    c = polar_to_vectors(float(center[0]), float(center[1]))
    ref = np.array([0.0, 0.0, 1.0]) if abs(c[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e3 = ref - (ref @ c) * c
    e3 /= np.linalg.norm(e3)
    e2 = np.cross(e3, c)
    return np.column_stack([c, e2, e3])


PROBE_CENTER = (math.pi / 2, 0.0, 0.0)


def probe_grid(field, center, radius: float, shape=(64, 64, 32), span: int = 6, margin: float = 1.1):
    """Coordinate patch holding the ball of ``radius`` about ``center = (r, theta)``.

    The patch lives in a rotated chart whose point ``(pi/2, 0)`` is the
    centre, so it never touches a coordinate pole.  A curve of length ``L``
    moves ``r`` by at most ``L``, ``theta`` by at most ``L / min sin r`` and
    ``phi`` by at most ``L / min h``.  In chart coordinates the centre is
    ``PROBE_CENTER``.
    """
    if not 0 < radius <= BALL_GUARD:
        raise ConfigurationError(f"probe radius must lie in (0, {BALL_GUARD:.4f}]")
    Q = chart_at(center)
    R = radius * margin
    r0, r1 = math.pi / 2 - R, math.pi / 2 + R
    T = R / math.cos(R)
    rr, tt = np.meshgrid(np.linspace(r0, r1, 33), np.linspace(-T, T, 33), indexing="ij")
    hmin = float(np.min(field.value(polar_to_vectors(rr.ravel(), tt.ravel()) @ Q.T)))
    P = min(R / (0.95 * hmin), math.pi * 0.99)
    # odd counts keep the centre on a lattice node
    n_r, n_t, n_p = (int(n) | 1 for n in shape)
    return ProductGrid(field, (n_r, n_t, n_p), ((r0, r1), (-T, T), (-P, P)), span=span, chart=Q,
                       isotropic_span=True)
