"""Batch front-end: configuration, pipeline and report bundle.

    mcfarrival run --shape ball --R 1 --dim 2 --all --out out/
    mcfarrival run --config run.cfg --grid 257
    mcfarrival run --shape torus --R0 1 --rho0 0.3 --validate

A config file holds flat ``key = value`` lines with the same names as the
long options (dashes or underscores); command-line options override it.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
import traceback
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import brakke, measures, radial, variational
from .domain import GridSpec, build_domain, shape_from_catalog, torus_mean_curvature_scan
from .errors import ConfigurationError, MCFError
from .solver import EpsilonLadder, dump_field, epsilon_continuation

SHAPES = ("ball", "ellipsoid", "rounded-box", "torus")
PHIS = ("one", "bump", "shifted-bump", "zero")
DIAGNOSTICS = ("brakke", "massdrop", "bound", "variational", "oracle", "uniqueness")

# pass thresholds of the enabled assertions
BOUND_SLACK = 0.02
BRAKKE_REL = 0.05
EXTINCTION_REL = 0.02
MASSDROP_FACTOR = 1.5
TAIL_LIMIT = {1: 0.20, 2: 0.05}
UNIQUENESS_GAP = 1e-2


@dataclass
class RunConfig:
    shape: str = "ball"
    R: float = 1.0
    dim: int = 2
    R0: float = 1.0
    rho0: float = 0.3
    radii: tuple | None = None
    mode: str = "auto"
    grid: int = 129
    ladder: str | None = None
    brakke: tuple | None = None
    massdrop: bool = False
    bound: bool = False
    variational: bool = False
    oracle: bool = False
    uniqueness: bool = False
    phi: str = "one"
    out: str = "mcf-out"
    seed: int = 0
    probes: int = 50
    t_count: int = 64
    dump_fields: bool = False

    def enable_all(self):
        self.massdrop = self.bound = self.variational = True
        self.oracle = self.uniqueness = True
        if self.brakke is None:
            self.brakke = "auto"

    def shape_params(self) -> dict:
        if self.shape == "ball":
            return {"R": self.R, "dim": self.dim}
        if self.shape == "torus":
            return {"R0": self.R0, "rho0": self.rho0}
        p = {"dim": self.dim}
        if self.radii is not None:
            p["radii" if self.shape == "ellipsoid" else "half_widths"] = tuple(self.radii)
        return p

    def grid_mode(self, shape) -> str:
        if self.mode != "auto":
            return self.mode
        return "axisymmetric" if shape.dim == 3 and shape.axisymmetric else "cartesian"

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("radii", "brakke"):
            if isinstance(d[k], (list, tuple)):
                d[k] = [float(v) for v in d[k]]
        return d


# ----------------------------------------------------------------------
# config parsing


def _coerce(name: str, text: str):
    kinds = {f.name: f.type for f in fields(RunConfig)}
    if name not in kinds:
        raise ConfigurationError(f"unknown config key {name!r}")
    kind = kinds[name]
    text = text.strip()
    if "bool" in kind:
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
            raise ConfigurationError(f"{name} expects a boolean, got {text!r}")
        return low in ("true", "1", "yes", "on")
    if name == "brakke":
        parts = text.replace(",", " ").split()
        if parts == ["auto"]:
            return "auto"
        if len(parts) != 2:
            raise ConfigurationError("brakke expects 't1 t2'")
        return tuple(float(p) for p in parts)
    if name == "radii":
        return tuple(float(p) for p in text.replace(",", " ").split())
    if kind.startswith("int"):
        return int(text)
    if kind.startswith("float"):
        return float(text)
    return text


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        out[key] = _coerce("massdrop", value) if key == "all" else _coerce(key, value)
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mcfarrival",
                                 description="Arrival time of mean curvature flow by elliptic regularization.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="solve and run diagnostics")
    run.add_argument("--config", help="flat key=value file (options given here win)")
    run.add_argument("--shape", help=f"one of {', '.join(SHAPES)}")
    run.add_argument("--R", type=float, help="ball radius")
    run.add_argument("--dim", type=int, help="ambient dimension (2 or 3)")
    run.add_argument("--R0", type=float, help="torus ring radius")
    run.add_argument("--rho0", type=float, help="torus tube radius")
    run.add_argument("--radii", type=float, nargs="+", help="ellipsoid semi-axes or box half-widths")
    run.add_argument("--mode", choices=("auto", "cartesian", "axisymmetric"))
    run.add_argument("--grid", type=int, metavar="N", help="cells along the longest axis")
    run.add_argument("--ladder", metavar="E0:RATIO:EMIN")
    run.add_argument("--brakke", type=float, nargs=2, metavar=("T1", "T2"))
    for name in ("massdrop", "bound", "variational", "oracle", "uniqueness"):
        run.add_argument(f"--{name}", action="store_true", default=None)
    run.add_argument("--all", action="store_true", help="enable every diagnostic")
    run.add_argument("--phi", help=f"test function: {', '.join(PHIS)}")
    run.add_argument("--out", metavar="DIR")
    run.add_argument("--seed", type=int)
    run.add_argument("--probes", type=int, help="number of minimality probes")
    run.add_argument("--t-count", dest="t_count", type=int, help="mass-drop time samples")
    run.add_argument("--dump-fields", dest="dump_fields", action="store_true", default=None)
    run.add_argument("--validate", action="store_true", help="dry-run checks only")
    return ap


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    values = read_config(ns.config) if ns.config else {}
    for f in fields(RunConfig):
        v = getattr(ns, f.name, None)
        if v is not None:
            values[f.name] = tuple(v) if isinstance(v, list) else v
    all_flag = values.pop("all", False) or ns.all
    cfg = RunConfig(**values)
    if all_flag:
        cfg.enable_all()
    return cfg


# ----------------------------------------------------------------------
# validation


def validate(config: RunConfig) -> list:
    """Dry-run findings (empty when the configuration looks sound)."""
    findings = []
    if config.shape not in SHAPES:
        return [f"unknown shape {config.shape!r}"]
    if config.phi not in PHIS:
        findings.append(f"unknown test function {config.phi!r}")
    if config.shape == "torus":
        hmin, th = torus_mean_curvature_scan(config.R0, config.rho0)
        if hmin <= 0:
            findings.append(f"not mean convex: torus H scan minimum {hmin:.6g} at theta={th:.6g}")
            return findings
    try:
        shape = shape_from_catalog(config.shape, config.shape_params())
        grid = GridSpec.around(shape, config.grid, mode=config.grid_mode(shape))
        domain = build_domain(shape, grid)
    except MCFError as exc:
        findings.append(f"{type(exc).__name__}: {exc}")
        return findings
    try:
        ladder = _ladder(config, domain)
    except ConfigurationError as exc:
        findings.append(f"bad ladder: {exc}")
        return findings
    if ladder[-1] < 2 * domain.h * (1 - 1e-12):
        findings.append(f"unresolvable epsilon: eps_min={ladder[-1]:.6g} < 2h={2 * domain.h:.6g}")
    return findings


def _ladder(config, domain):
    if config.ladder:
        return EpsilonLadder.parse(config.ladder)
    return EpsilonLadder.default_for(domain.grid)


# ----------------------------------------------------------------------
# serialization


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def dumps(obj, indent=2) -> str:
    """JSON with sorted keys and floats written with 17 significant digits."""

    def enc(v, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(v, dict):
            if not v:
                return "{}"
            items = [f"{pad}{json.dumps(k)}: {enc(v[k], level + 1)}" for k in sorted(v)]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(v, list):
            if not v:
                return "[]"
            return "[\n" + ",\n".join(pad + enc(x, level + 1) for x in v) + "\n" + end + "]"
        if isinstance(v, bool) or v is None:
            return json.dumps(v)
        if isinstance(v, float):
            return format(v, ".17g") if math.isfinite(v) else "null"
        return json.dumps(v)

    return enc(_jsonable(obj), 0) + "\n"


# ----------------------------------------------------------------------
# pipeline


class _Run:
    def __init__(self, config: RunConfig):
        self.cfg = config
        self.out = Path(config.out)
        cfg = config.to_dict()
        cfg.pop("out")  # where the bundle lives is not part of the result
        self.summary = {"config": cfg, "assertions": {}}
        self.timing = {}
        self.digest = []

    def timed(self, name, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kw)
        finally:
            self.timing[name] = time.perf_counter() - t0

    def check(self, name, ok, detail=""):
        self.summary["assertions"][name] = bool(ok)
        self.digest.append(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))

    # -- stages

    def setup(self):
        cfg = self.cfg
        if cfg.shape not in SHAPES:
            raise ConfigurationError(f"unknown shape {cfg.shape!r}; known: {', '.join(SHAPES)}")
        if cfg.phi not in PHIS:
            raise ConfigurationError(f"unknown test function {cfg.phi!r}")
        self.shape = shape_from_catalog(cfg.shape, cfg.shape_params())
        grid = GridSpec.around(self.shape, cfg.grid, mode=cfg.grid_mode(self.shape))
        self.domain = build_domain(self.shape, grid)
        self.ladder = _ladder(cfg, self.domain)
        self.phi = measures.phi_catalog(cfg.phi, self.domain)
        self.is_ball = self.shape.kind == "ball"
        self.summary["findings"] = validate(cfg)
        self.summary["domain"] = {"kind": self.shape.kind, "mode": grid.mode,
                                  "shape": list(grid.shape), "h": self.domain.h,
                                  "boundary_area": self.domain.boundary_area}
        self.digest.append(f"shape {self.shape.kind} on {'x'.join(map(str, grid.shape))} "
                           f"({grid.mode}), h = {self.domain.h:.6g}")

    def solve(self):
        cont = self.timed("solve", epsilon_continuation, self.domain, self.ladder)
        self.cont = cont
        self.u = cont.u
        self.summary["solve"] = {"ladder": list(self.ladder.values),
                                 "rungs": [r.to_dict() for r in cont.reports],
                                 "stalled": cont.stalled}
        ext = brakke.extinction_time(self.u)
        self.T = ext.value
        self.summary["extinction"] = {"T": ext.value, "index": list(ext.index),
                                      "point": list(ext.point)}
        self.digest.append(f"extinction time T = {ext.value:.6f} at {ext.point}")
        if self.is_ball:
            n = self.domain.n
            exact = self.shape.radii[0] ** 2 / (2 * n)
            rel = abs(ext.value - exact) / exact
            self.summary["extinction"]["exact"] = exact
            self.check("extinction", rel <= EXTINCTION_REL,
                       f"T = {ext.value:.6f} vs {exact:.6f} (rel {rel:.3g})")
        if self.cfg.dump_fields:
            dump_field(self.u, self.out / "fields" / "u_final", self.ladder[-1])

    def contours(self):
        d = self.out / "contours"
        for k in (1, 2, 3):
            t = k * self.T / 4
            cs = measures.extract_level_set(self.u, t)
            cs.write(d / f"level_{k}.{'csv' if self.u.grid.ndim == 2 else 'obj'}")

    def bound(self):
        area = self.domain.boundary_area
        region = measures.domain_fraction(self.domain)
        rows = []
        for f, eps in zip(self.cont.fields, self.ladder):
            val = measures.inverse_gradient_measure(f, eps, region)
            rows.append({"eps": eps, "integral": val, "ratio": val / area})
        worst = max(r["ratio"] for r in rows)
        self.summary["bound"] = {"boundary_area": area, "rungs": rows}
        self.check("bound", worst <= 1 + BOUND_SLACK,
                   f"max ratio to boundary area {worst:.6f}")
        for r in rows:
            self.digest.append(f"    eps={r['eps']:<10.6g} integral={r['integral']:.6f} "
                               f"margin={area - r['integral']:+.6f}")

    def brakke_window(self):
        spec = self.cfg.brakke
        if spec == "auto":
            return 0.0, 0.5 * self.T
        return float(spec[0]), float(spec[1])

    def brakke(self):
        t1, t2 = self.brakke_window()
        rep = self.timed("brakke", brakke.brakke_residual, self.u, self.phi, t1, t2)
        self.summary["brakke"] = rep.to_dict()
        self.check("brakke", rep.rel_residual <= BRAKKE_REL,
                   f"[{t1:.4g}, {t2:.4g}] LHS={rep.lhs:.6f} RHS={rep.rhs:.6f} rel={rep.rel_residual:.3g}")

    def massdrop(self):
        rep = self.timed("massdrop", brakke.mass_drop_scan, self.u, self.phi, self.cfg.t_count)
        out = rep.to_dict()
        curve = measures.MeasureCurve(self.phi.identifier)
        for t, mu in zip(rep.times, rep.mu):
            unc = abs(measures.measure_mu(self.u, t, self.phi, dual=True) - mu)
            curve.append(t, mu, "contour", unc)
        curve.write_csv(self.out / "measure_curve.csv")
        detail = f"max jump {rep.max_jump:.6g} at t={rep.argmax_t:.6g}, tail ratio {rep.tail_ratio:.4g}"
        if self.is_ball and self.cfg.phi == "one":
            n = self.domain.n
            R = self.shape.radii[0]
            ts = np.linspace(0.0, R * R / (2 * n), self.cfg.t_count)
            exact = radial.SPHERE_CONSTANT[n] * np.sqrt(np.clip(R * R - 2 * n * ts, 0, None)) ** n
            modulus = float(np.max(np.abs(np.diff(exact))))
            out["exact_modulus"] = modulus
            self.check("massdrop-jump", rep.max_jump <= MASSDROP_FACTOR * modulus,
                       f"{detail}; exact modulus {modulus:.6g}")
            self.check("massdrop-tail", rep.tail_ratio <= TAIL_LIMIT[n], detail)
        else:
            self.digest.append(f"[INFO] massdrop: {detail}")
        self.summary["massdrop"] = out

    def variational(self):
        u = self.u
        perts = variational.random_perturbations(u, self.cfg.probes, self.cfg.seed)
        table = self.timed("probes", variational.minimality_probe, u, perts)
        table.write_csv(self.out / "probes.csv")
        eta = measures.default_eta(u)
        zero = []
        for t in np.linspace(0.1, 0.8, 10) * self.T:
            K = variational.Window.around_level(u, t)
            p = variational.functional_J_set(u, variational.level_set_competitor(u, t, K), eta,
                                             return_parts=True)
            tol = variational.set_tolerance(u, p.total_variation, p.excluded_volume, eta)
            zero.append({"t": float(t), "J": p.value, "tol": tol, "ok": abs(p.value) <= tol})
        self.summary["variational"] = {"probes": table.to_dict(), "zero_level": zero}
        self.check("minimality-probes", table.passed,
                   f"{sum(r.passed for r in table.rows)}/{len(table)} probes")
        self.check("zero-level", all(z["ok"] for z in zero),
                   f"max |J(E_t)|/tol = {max(abs(z['J']) / z['tol'] for z in zero):.3g}")

    def oracle(self):
        if not self.is_ball:
            self.digest.append("[INFO] oracle: only available for balls")
            self.summary["oracle"] = None
            return
        eps = self.ladder[-1]
        prof = self.timed("oracle", radial.solve_radial, self.shape.radii[0], self.domain.n, eps)
        ref = radial.oracle_field(prof, self.domain)
        gap = float(np.abs(self.u.values - ref.values)[self.domain.mask].max())
        tol = 5 * self.domain.h ** 2 + 1e-6
        self.summary["oracle"] = {"eps": eps, "center_value": prof.center_value, "gap": gap,
                                  "tol": tol, "steps": prof.steps}
        self.check("oracle", gap <= tol, f"sup gap {gap:.3g} (tol {tol:.3g}) at eps={eps:.4g}")

    def uniqueness(self):
        rep = self.timed("uniqueness", variational.uniqueness_two_route, self.domain, self.ladder)
        self.summary["uniqueness"] = rep.to_dict()
        self.check("uniqueness", rep.gap <= UNIQUENESS_GAP,
                   f"{rep.route_a} vs {rep.route_b}: gap {rep.gap:.3g}")

    def execute(self):
        self.setup()
        self.solve()
        self.contours()
        cfg = self.cfg
        if cfg.bound:
            self.bound()
        if cfg.brakke is not None:
            self.brakke()
        if cfg.massdrop:
            self.massdrop()
        if cfg.variational:
            self.variational()
        if cfg.oracle:
            self.oracle()
        if cfg.uniqueness:
            self.uniqueness()

    def finish(self, status):
        self.out.mkdir(parents=True, exist_ok=True)
        self.summary["status"] = status
        (self.out / "summary.json").write_text(dumps(self.summary))
        (self.out / "timing.json").write_text(json.dumps(self.timing, indent=2, sort_keys=True) + "\n")
        (self.out / "digest.txt").write_text("\n".join(self.digest) + "\n")


def run(config: RunConfig):
    """Execute the pipeline; returns (exit status, summary dict).

    Status 0 when every enabled assertion passes, 1 when one fails and 2
    when a module raised (the error is recorded under ``error``).
    """
    job = _Run(config)
    try:
        job.out.mkdir(parents=True, exist_ok=True)
        job.execute()
        status = 0 if all(job.summary["assertions"].values()) else 1
    except MCFError as exc:
        job.summary["error"] = {"type": type(exc).__name__, "message": str(exc)}
        job.digest.append(f"[ERROR] {type(exc).__name__}: {exc}")
        status = 2
    except Exception as exc:  # unexpected failures still leave a report behind
        job.summary["error"] = {"type": type(exc).__name__, "message": str(exc),
                                "traceback": traceback.format_exc().splitlines()[-3:]}
        status = 2
    job.finish(status)
    return status, job.summary


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(ns)
    except (ConfigurationError, TypeError) as exc:
        print(dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}), end="")
        return 2
    if ns.validate:
        findings = validate(cfg)
        print(dumps({"findings": findings}), end="")
        return 0 if not findings else 1
    status, summary = run(cfg)
    print((Path(cfg.out) / "digest.txt").read_text(), end="")
    if "error" in summary:
        print(dumps({"error": summary["error"]}), end="", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
