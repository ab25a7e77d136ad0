"""Command-line front end.

Subcommands: ``validate``, ``verify``, ``field``, ``converge``, ``probe`` and
``report``.  Exit codes: 0 pass, 1 claim failure, 2 configuration error,
3 numerical-quality failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .curvature import laplacian_excess, scalar_curvature, scalar_field
from .errors import ConfigurationError, SeminormDivergence, SingularPointError, TruncationError
from .measure import convergence_table, integrate, volume
from .metric_space import (
    PROBE_CENTER,
    ProductGrid,
    check_distance_bound,
    diameter_bound,
    diameter_estimate,
    probe_grid,
    scalar_probe,
)
from .report import VerificationReport, _jsonable
from .sphere import (
    PoleConfiguration,
    RefinementPoint,
    SpherePoint,
    build_grid,
    configuration_from_dict,
    geodesic_distance,
    polar_to_vectors,
)
from .warp import ConstantWarp, RadialTerm, WarpField, check_def21

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULT_CASES = {
    "converging": {"case": "converging"},
    "dense": {"case": "dense"},
    "equator": {"case": "equator"},
    "constant": {"case": "constant", "value": 1.0},
}


@dataclass
class RunConfig:
    """Pole configuration (or a constant test profile) plus run parameters."""

    document: dict
    configuration: PoleConfiguration | None
    constant: float | None = None
    levels: list = field(default_factory=lambda: [1, 2, 4, 8, 16])
    resolution: int = 64
    depth: int = 12
    metric_resolution: int = 16
    q_list: list = field(default_factory=lambda: [1.0])
    p_list: list = field(default_factory=lambda: [1.0])
    n_pairs: int = 200
    seed: int = 0
    scal_tol: float = 1e-9
    volume_tol: float = 1e-6
    warp_tol: float = 1e-12
    identity_rtol: float = 1e-6
    self_convergence_rtol: float = 1e-6
    probe_rtol: float = 0.2
    probe_radius: float = 0.4
    probe_shape: tuple = (64, 64, 32)
    out: Path = Path("warplab-out")

    def __post_init__(self):
        if not self.levels:
            raise ConfigurationError("levels list is empty")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])) or self.levels[0] < 1:
            raise ConfigurationError("levels must be positive and strictly ascending")
        for name in ("scal_tol", "volume_tol", "warp_tol", "identity_rtol", "self_convergence_rtol", "probe_rtol"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"tolerance {name} must be positive")
        if self.resolution < 8 or self.metric_resolution < 4:
            raise ConfigurationError("resolution too small")

    @property
    def case(self) -> str:
        return "constant" if self.constant is not None else self.configuration.case

    def field(self, level):
        if self.constant is not None:
            return ConstantWarp(self.constant)
        return WarpField(self.configuration, level)

    def sphere_grid(self, levels):
        if self.constant is not None:
            return build_grid(self.resolution, None, self.depth)
        return build_grid(self.resolution, self.configuration, self.depth, levels)

    def digest(self) -> str:
        text = json.dumps(self.document, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()

    def provenance(self, **extra):
        out = {
            "config_sha256": self.digest(),
            "case": self.case,
            "resolution": self.resolution,
            "depth": self.depth,
            "metric_resolution": self.metric_resolution,
            "levels": self.levels,
            "seed": self.seed,
            "version": __version__,
        }
        out.update(extra)
        return out


_RUN_KEYS = {
    "levels", "resolution", "depth", "metric_resolution", "q_list", "p_list", "n_pairs", "seed", "scal_tol",
    "volume_tol", "warp_tol", "identity_rtol", "self_convergence_rtol", "probe_rtol", "probe_radius", "probe_shape",
}


def load_run_config(document: dict, overrides: dict | None = None) -> RunConfig:
    """Split a JSON document into the pole configuration and run parameters."""
    doc = dict(document)
    run = dict(doc.pop("run", {}))
    unknown = set(run) - _RUN_KEYS
    if unknown:
        raise ConfigurationError(f"unknown run keys: {sorted(unknown)}")
    for k, v in (overrides or {}).items():
        if v is not None:
            run[k] = v
    constant = None
    configuration = None
    if doc.get("case") == "constant":
        constant = float(doc.get("value", 1.0))
        if not constant > 0:
            raise ConfigurationError("constant warp must be positive")
    else:
        configuration = configuration_from_dict(doc)
    if "probe_shape" in run:
        run["probe_shape"] = tuple(int(n) for n in run["probe_shape"])
    return RunConfig(document=document, configuration=configuration, constant=constant, **run)


def parse_levels(text: str) -> list:
    """``"1,2,4"`` or ``"1-8"`` (ranges may be mixed with singletons)."""
    out = []
    try:
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if "-" in part:
                a, b = part.split("-", 1)
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(part))
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse levels {text!r}") from exc
    return out


def _read_document(args) -> dict:
    if args.config:
        path = Path(args.config)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(f"cannot read {path}: {exc}") from exc
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return dict(DEFAULT_CASES[args.case])


def _run_config(args) -> RunConfig:
    overrides = {
        "levels": parse_levels(args.levels) if args.levels is not None else None,
        "resolution": args.resolution,
        "seed": args.seed,
    }
    cfg = load_run_config(_read_document(args), overrides)
    cfg.out = Path(args.out)
    return cfg


def write_json(path: Path, payload: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def write_claims_csv(path: Path, report: VerificationReport):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["claim", "measured", "bound", "tolerance", "passed", "detail"])
        for r in report.records:
            d = r.to_dict()
            w.writerow([d["claim"], d["measured"], d["bound"], d["tolerance"], d["passed"], d["detail"]])


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def _level_checks(cfg: RunConfig, j, grid, rep: VerificationReport):
    conf = cfg.configuration
    f = cfg.field(j)
    X = grid.points
    h = f.value(X)
    lap = f.laplacian(X)
    scal = 2.0 - 2.0 * lap / h
    tag = f"level{j}."
    smin = float(np.min(scal))
    rep.add(tag + "scalar_curvature_nonnegative", smin, 0.0, cfg.scal_tol, smin >= -cfg.scal_tol,
            f"min over {grid.size} nodes")
    A1 = conf.weight(1) if conf else cfg.constant / 2.0
    hmin = float(np.min(h))
    rep.add(tag + "warp_lower_bound", hmin, 2.0 * A1, cfg.warp_tol, hmin >= 2.0 * A1 - cfg.warp_tol)
    vol = 2.0 * math.pi * integrate(h, grid)
    if conf:
        lo, hi = 16 * math.pi**2 * A1, 2 * math.pi * conf.K * conf.T
        rep.add(tag + "volume_bounds", vol, [lo, hi], cfg.volume_tol,
                lo - cfg.volume_tol <= vol <= hi + cfg.volume_tol)
        rep.add(tag + "integral_bound", vol / (2 * math.pi), conf.K * conf.T, cfg.volume_tol,
                vol / (2 * math.pi) <= conf.K * conf.T + cfg.volume_tol)
    total = 2.0 * math.pi * integrate(scal * h, grid)
    rel = abs(total - 2.0 * vol) / (2.0 * vol)
    rep.add(tag + "total_curvature_identity", rel, 0.0, cfg.identity_rtol, rel <= cfg.identity_rtol,
            "relative gap between integral of Scal dVol and 2 Vol")
    return f, vol


def _term_checks(cfg: RunConfig, j, rep: VerificationReport):
    conf = cfg.configuration
    A, a, b, _ = conf.level_terms(j)
    seen = set()
    worst = VerificationReport()
    for Ai, ai, bi in zip(A, a, b):
        if Ai <= 0:
            continue
        key = (float(ai), float(bi))
        if key in seen:
            continue
        seen.add(key)
        # the term is radial, so its values do not depend on the pole; use the north pole and its antipode
        s = math.sqrt(ai)
        tgrid = build_grid(32, points=[RefinementPoint((0.0, 0.0, 1.0), s), RefinementPoint((0.0, 0.0, -1.0), s)],
                           depth_limit=cfg.depth)
        sub = check_def21(RadialTerm(ai, bi, SpherePoint(0.0, 0.0)), tgrid, conf.T)
        for r in sub.records:
            worst.records.append(r)
    for claim in ("term_integral_bound", "term_value_at_least_2", "term_laplacian_below_value"):
        recs = [r for r in worst.records if r.claim == claim]
        if not recs:
            continue
        bad = [r for r in recs if not r.passed]
        pick = bad[0] if bad else max(recs, key=lambda r: float(r.measured) - float(r.bound))
        rep.add(f"level{j}.admissible_terms.{claim}", pick.measured, pick.bound, pick.tolerance, not bad,
                f"{len(recs)} distinct terms")


def cmd_verify(cfg: RunConfig) -> tuple[VerificationReport, int]:
    rep = VerificationReport(provenance=cfg.provenance(command="verify"))
    numeric_ok = True
    grid = cfg.sphere_grid(cfg.levels)
    coarse = grid.with_depth(max(cfg.depth // 2, 1))
    conf = cfg.configuration
    if conf is not None:
        rng = np.random.default_rng(cfg.seed)
        aa = 10 ** rng.uniform(-3, 0, 10_000)
        bb = rng.uniform(2, 5, 10_000)
        rr = rng.uniform(0, math.pi, 10_000)
        ex = float(np.max(laplacian_excess(aa, bb, rr)))
        rep.add("laplacian_inequality", ex, 0.0, 1e-9, ex <= 1e-9, "10^4 random (a, b, r) samples")
    for j in cfg.levels:
        f, vol = _level_checks(cfg, j, grid, rep)
        vol_c = volume(f, coarse)
        if abs(vol_c - vol) > cfg.self_convergence_rtol * abs(vol):
            numeric_ok = False
            rep.provenance.setdefault("self_convergence_failures", []).append(j)
        if conf is not None:
            _term_checks(cfg, j, rep)
        n = cfg.metric_resolution
        pg = ProductGrid(f, (n, 2 * n, 2 * n))
        rng = np.random.default_rng(cfg.seed + j)
        pairs = [tuple(int(v) for v in rng.integers(pg.n_nodes, size=2)) for _ in range(cfg.n_pairs)]
        sub = check_distance_bound(pg, f, pairs)
        for r in sub.records:
            rep.add(f"level{j}.{r.claim}", r.measured, r.bound, r.tolerance, r.passed, r.detail)
        if conf is not None:
            diam = diameter_estimate(pg, 16, cfg.seed)
            bound = diameter_bound(conf)
            rep.add(f"level{j}.diameter_bound", diam, bound, 0.0, diam <= bound)
    return rep, (EXIT_PASS if rep.passed else EXIT_FAIL) if numeric_ok else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# other commands
# ---------------------------------------------------------------------------


def cmd_field(cfg: RunConfig, level, kind: str) -> Path:
    f = cfg.field(level)
    grid = cfg.sphere_grid([level])
    X = grid.points
    if kind == "warp":
        vals = f.value(X)
    elif kind == "laplacian":
        vals = f.laplacian(X)
    elif kind == "scalar":
        vals = scalar_field(f, grid).values
    else:
        raise ConfigurationError(f"unknown field kind {kind!r}")
    path = cfg.out / f"field_{kind}_level{level}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "theta", "value"])
        for row in zip(grid.r, grid.theta, vals):
            w.writerow([repr(float(v)) for v in row])
    return path


def cmd_converge(cfg: RunConfig):
    if cfg.constant is not None or not cfg.configuration.has_limit():
        raise ConfigurationError(
            f"case '{cfg.case}' has no explicit limit warp; only subsequential convergence is available, "
            "so no convergence table is produced"
        )
    grid = build_grid(cfg.resolution // 2, cfg.configuration, min(cfg.depth, 8), cfg.levels + [math.inf])
    table = convergence_table(cfg.configuration, cfg.levels, cfg.q_list, cfg.p_list, grid=grid)
    cfg.out.mkdir(parents=True, exist_ok=True)
    table.to_csv(cfg.out / "convergence.csv")
    payload = {"provenance": cfg.provenance(command="converge"), **table.to_dict()}
    write_json(cfg.out / "convergence.json", payload)
    return table


def _default_centers(cfg: RunConfig, level):
    if cfg.constant is not None:
        return [(math.pi / 2, 0.0)]
    conf = cfg.configuration
    # antipode of the weighted mean direction of the pole cluster
    A, _, _, P = conf.level_terms(level)
    m = -(A[:, None] * P).sum(axis=0)
    c = SpherePoint.from_vector(m / np.linalg.norm(m))
    return [(c.r, c.theta)]


def cmd_probe(cfg: RunConfig, level, centers=None, radii=None):
    centers = centers or _default_centers(cfg, level)
    R = cfg.probe_radius if radii is None else max(radii)
    radii = list(radii) if radii is not None else list(np.linspace(0.3, 1.0, 8) * R)
    if len(radii) < 4:
        raise ConfigurationError("the probe needs at least 4 radii")
    f = cfg.field(level)
    rows, warnings = [], []
    for rc, tc in centers:
        c = SpherePoint(rc, tc)
        if cfg.configuration is not None:
            P = [cfg.configuration.pole(i, level) for i in range(1, level + 1)]
            near = min(geodesic_distance(c, p) for p in P)
            if near < 2 * R:
                warnings.append(f"center ({rc:.4g}, {tc:.4g}) within {2 * R:.3g} of a pole; skipped")
                continue
        grid = probe_grid(f, (rc, tc), R, cfg.probe_shape)
        res = scalar_probe(grid, PROBE_CENTER, radii)
        exact = float(scalar_curvature(f, polar_to_vectors(rc, tc)[None, :])[0])
        ok = abs(res.calibrated - exact) <= cfg.probe_rtol * abs(exact)
        rows.append({"center": [rc, tc], "analytic": exact, "passed": ok, **res.to_dict()})
    payload = {"provenance": cfg.provenance(command="probe", level=level), "probes": rows, "warnings": warnings}
    write_json(cfg.out / "probe.json", payload)
    with open(cfg.out / "probe.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["center_r", "center_theta", "analytic", "raw_c0", "calibrated", "residual", "low_confidence"])
        for r in rows:
            w.writerow([repr(r["center"][0]), repr(r["center"][1]), repr(r["analytic"]), repr(r["raw_c0"]),
                        repr(r["calibrated"]), repr(r["residual"]), r["low_confidence"]])
    return payload


def cmd_report(out: Path) -> dict:
    """Collect the JSON documents in ``out`` into one summary."""
    parts = {}
    for name in ("verify.json", "convergence.json", "probe.json"):
        p = out / name
        if p.exists():
            parts[name.removesuffix(".json")] = json.loads(p.read_text(encoding="utf-8"))
    if not parts:
        raise ConfigurationError(f"no reports found in {out}")
    status = "pass"
    if "verify" in parts and parts["verify"].get("status") != "pass":
        status = "fail"
    if "probe" in parts and not all(r["passed"] for r in parts["probe"]["probes"]):
        status = "fail"
    if "convergence" in parts and not all(parts["convergence"]["decreasing"].values()):
        status = "fail"
    summary = {"status": status, "parts": sorted(parts)}
    write_json(out / "report.json", {"summary": summary, **parts})
    return summary


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--case", choices=sorted(DEFAULT_CASES), default="converging",
                        help="default configuration used when --config is absent")
    common.add_argument("--out", default="warplab-out", help="output directory")
    common.add_argument("--resolution", type=int, help="base sphere-grid resolution")
    common.add_argument("--levels", help="levels, e.g. 1,2,4 or 1-8")
    common.add_argument("--seed", type=int, help="random seed")

    p = argparse.ArgumentParser(prog="warplab", description="Warped-product verification suite")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check a configuration")
    sub.add_parser("verify", parents=[common], help="run the verification suite")
    pf = sub.add_parser("field", parents=[common], help="export a field on the quadrature grid")
    pf.add_argument("--level", type=int, default=1)
    pf.add_argument("--kind", choices=["warp", "laplacian", "scalar"], default="warp")
    sub.add_parser("converge", parents=[common], help="distances to the limit warp")
    pp = sub.add_parser("probe", parents=[common], help="ball-volume curvature probe")
    pp.add_argument("--level", type=int, default=2)
    pp.add_argument("--center", action="append", help="probe centre 'r,theta' (repeatable)")
    pp.add_argument("--radii", help="comma-separated radii (at least 4)")
    sub.add_parser("report", parents=[common], help="merge reports found in --out")
    return p


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse numbers from {text!r}") from exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            summary = cmd_report(Path(args.out))
            print(json.dumps(summary, sort_keys=True))
            return EXIT_PASS if summary["status"] == "pass" else EXIT_FAIL
        cfg = _run_config(args)
        if args.command == "validate":
            problems = cfg.configuration.validate(cfg.levels) if cfg.configuration else []
            print(json.dumps({"case": cfg.case, "problems": problems}, sort_keys=True, indent=2))
            return EXIT_FAIL if problems else EXIT_PASS
        if args.command == "verify":
            rep, code = cmd_verify(cfg)
            write_json(cfg.out / "verify.json", rep.to_dict())
            write_claims_csv(cfg.out / "verify.csv", rep)
            for r in rep.records:
                print(f"{'PASS' if r.passed else 'FAIL'}  {r.claim}")
            print(f"status: {'pass' if rep.passed else 'fail'}")
            return code
        if args.command == "field":
            print(cmd_field(cfg, args.level, args.kind))
            return EXIT_PASS
        if args.command == "converge":
            table = cmd_converge(cfg)
            flags = table.flags()
            print(json.dumps(flags, sort_keys=True))
            return EXIT_PASS if all(flags.values()) else EXIT_FAIL
        if args.command == "probe":
            centers = [tuple(_floats(c)) for c in args.center] if args.center else None
            if centers and any(len(c) != 2 for c in centers):
                raise ConfigurationError("centres are given as 'r,theta'")
            radii = _floats(args.radii) if args.radii else None
            payload = cmd_probe(cfg, args.level, centers, radii)
            for w in payload["warnings"]:
                print(f"warning: {w}", file=sys.stderr)
            for r in payload["probes"]:
                print(f"{'PASS' if r['passed'] else 'FAIL'}  center={r['center']} "
                      f"calibrated={r['calibrated']:.4g} analytic={r['analytic']:.4g}")
            if not payload["probes"]:
                return EXIT_FAIL
            if any(r["low_confidence"] for r in payload["probes"]):
                return EXIT_NUMERIC
            return EXIT_PASS if all(r["passed"] for r in payload["probes"]) else EXIT_FAIL
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TruncationError, SeminormDivergence, SingularPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
