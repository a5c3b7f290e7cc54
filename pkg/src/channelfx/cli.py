"""Command line driver: ``channelfx {coeff,harmonic,conjugate,simulate,sweep}``.

Every subcommand reads an optional JSON config (``--config``); flags
override config fields one-to-one.  Outputs go to ``--out`` together with
``manifest.json`` (inputs, versions and SHA-256 checksums).

Exit codes: 0 success, 2 validation error, 3 solver non-convergence,
4 I/O error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import math
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .coeff import compute_coefficients
from .conjugate import conjugate_area, conjugate_D, conjugate_sigma
from .errors import ChannelError, ReductionError, SolverError, ValidationError
from .functions import FunctionExpr
from .geom import ConjugatePair, spec_from_json
from .harmonic import natural_projection
from .profiles import CellGrid, Field2D, QuadratureGrid, ScalarProfile, fmt

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

DEFAULTS = {
    "D0": 1.0,
    "grid": "256x16",
    "solver_grid": "64x32",
    "tol": 1e-10,
    "max_iter": None,
    "bc": [0.0, 1.0],
    "levels": ["32x16", "64x32", "128x64"],
    "out": "out",
    "seed": 0,
    "sim": {"mode": "effective", "dt": 1e-3, "T": 0.1, "N": 10000, "bc": "reflecting", "coefficient": "D_inf"},
}


# -- configuration -------------------------------------------------------------


def _pow2(n, path):
    if not (isinstance(n, int) and 8 <= n <= 1024 and n & (n - 1) == 0):
        raise ValidationError(f"resolution {n!r} must be a power of two between 8 and 1024", path)
    return n


def parse_resolution(text, path):
    """``"64x32"`` (or ``[64, 32]``) -> ``(64, 32)``, both powers of two."""
    if isinstance(text, (list, tuple)) and len(text) == 2:
        parts = list(text)
    else:
        parts = str(text).lower().split("x")
    try:
        nu, nv = (int(p) for p in parts)
    except (TypeError, ValueError):
        raise ValidationError(f"resolution must look like NUxNV, got {text!r}", path) from None
    return _pow2(nu, path), _pow2(nv, path)


def parse_pair(text, path):
    parts = text if isinstance(text, (list, tuple)) else str(text).split(",")
    try:
        a, b = (float(p) for p in parts)
    except (TypeError, ValueError):
        raise ValidationError(f"expected two numbers, got {text!r}", path) from None
    return a, b


def _number(cfg, key, path, positive=True):
    try:
        x = float(cfg[key])
    except (TypeError, ValueError):
        raise ValidationError("must be a number", path) from None
    if not math.isfinite(x) or (positive and x <= 0):
        raise ValidationError("must be a positive finite number", path)
    return x


def _read_json(path):
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON: {exc.msg} (line {exc.lineno})", "") from None


class Run:
    """A resolved configuration plus the input files it was built from."""

    def __init__(self, config, inputs):
        self.config = config
        self.inputs = inputs

    def spec(self):
        cfg = self.config
        if "spec" not in cfg:
            raise ValidationError("missing channel definition (use 'spec' or --spec)", "/spec")
        return spec_from_json(cfg["spec"], "/spec")


def load_run(args):
    cfg = json.loads(json.dumps(DEFAULTS))
    inputs = {}
    if getattr(args, "config", None):
        doc = _read_json(args.config)
        if not isinstance(doc, dict):
            raise ValidationError("config must be a JSON object", "")
        inputs[str(args.config)] = _sha256(Path(args.config).read_bytes())
        sim = {**cfg["sim"], **doc.get("sim", {})}
        cfg.update(doc)
        cfg["sim"] = sim
    if getattr(args, "spec", None):
        cfg["spec"] = _read_json(args.spec)
        inputs[str(args.spec)] = _sha256(Path(args.spec).read_bytes())
    for key in ("D0", "tol", "max_iter", "out", "seed", "grid"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if getattr(args, "solver_grid", None):
        cfg["solver_grid"] = args.solver_grid
    if getattr(args, "bc", None):
        cfg["bc"] = list(parse_pair(args.bc, "/bc"))
    if getattr(args, "levels", None):
        cfg["levels"] = args.levels.split(",")
    for key in ("mode", "dt", "T", "N"):
        value = getattr(args, key, None)
        if value is not None:
            cfg["sim"][key] = value
    if getattr(args, "seed", None) is not None:
        cfg["sim"]["seed"] = args.seed
    cfg["sim"].setdefault("seed", cfg["seed"])
    return Run(cfg, inputs)


# -- output --------------------------------------------------------------------


def _sha256(data):
    return hashlib.sha256(data).hexdigest()


def _dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def _finite(x):
    """JSON has no NaN/inf; encode them as strings."""
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_finite(v) for v in x]
    return x


class Writer:
    def __init__(self, out):
        self.out = Path(out)
        self.files = {}

    def text(self, name, text):
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        data = text.encode()
        path.write_bytes(data)
        self.files[name] = _sha256(data)

    def json(self, name, obj):
        self.text(name, _dumps(_finite(obj)))

    def manifest(self, command, run):
        import scipy

        doc = {
            "command": command,
            "config": run.config,
            "inputs": run.inputs,
            "outputs": dict(sorted(self.files.items())),
            "versions": {
                "channelfx": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "numba": kernels.numba.__version__ if kernels.HAVE_NUMBA else None,
                "backend": kernels.backend(),
            },
        }
        (self.out / "manifest.json").write_text(_dumps(_finite(doc)))


def _csv(header, columns):
    lines = [",".join(header)]
    for row in zip(*columns):
        lines.append(",".join(fmt(x) for x in row))
    return "\n".join(lines) + "\n"


# -- subcommands ---------------------------------------------------------------


def run_coeff(run, writer):
    cfg = run.config
    spec = run.spec()
    nu, nv = parse_resolution(cfg["grid"], "/grid")
    D0 = _number(cfg, "D0", "/D0")
    coeffs = compute_coefficients(spec, QuadratureGrid(nu + 1, nv), D0)
    writer.text("coeff.csv", coeffs.to_csv())
    writer.json("summary.json", coeffs.summary())
    return coeffs


def _finite_rate(spec, cfg, resolution, path="/solver_grid"):
    nu, nv = parse_resolution(resolution, path)
    tol = _number(cfg, "tol", "/tol")
    D0 = _number(cfg, "D0", "/D0")
    bc = parse_pair(cfg["bc"], "/bc")
    max_iter = cfg.get("max_iter")
    return natural_projection(spec, CellGrid(nu, nv), bc, D0, tol, max_iter)


def run_finite(run, writer):
    cfg = run.config
    spec = run.spec()
    res = _finite_rate(spec, cfg, cfg["solver_grid"])
    u = res.J.u
    D_fin = res.D_fin.values if res.D_fin is not None else np.full(u.size, np.nan)
    rho_c = np.interp(u, res.rho.u, res.rho.values)
    writer.text("h.csv", res.h.to_csv())
    writer.text("profiles.csv", _csv(["u", "J", "rho", "D_fin"], [u, res.J.values, rho_c, D_fin]))
    report = res.report.to_json()
    report.update(
        {
            "grid": list(res.h.grid.shape),
            "bc": list(res.h.boundary),
            "lambda_max_deviation": float(np.abs(res.lam.values - 1.0).max()),
            "D_fin_defined": res.D_fin is not None,
            "reduction_error": res.reduction_error,
        }
    )
    writer.json("report.json", report)
    return res, report


def run_conjugate(run, writer, args):
    cfg = run.config
    if args.map:
        doc = {"type": "conjugate", "map": args.map}
        if args.alpha is not None:
            doc["alpha"] = args.alpha
        if args.v_range is None or args.u_range is None:
            raise ValidationError("--map needs --v-range and --u-range", "/spec")
        doc["v_range"] = list(parse_pair(args.v_range, "/spec/v_range"))
        doc["u_range"] = list(parse_pair(args.u_range, "/spec/u_range"))
        cfg["spec"] = doc
    spec = run.spec()
    if not isinstance(spec, ConjugatePair):
        raise ValidationError("conjugate needs a channel of type 'conjugate'", "/spec/type")
    nu, _ = parse_resolution(cfg["grid"], "/grid")
    D0 = _number(cfg, "D0", "/D0")
    s = conjugate_sigma(spec, n_u=nu + 1)
    A = conjugate_area(spec, n_u=nu + 1)
    D = conjugate_D(spec, D0, n_u=nu + 1)
    writer.text("conjugate.csv", _csv(["u", "sigma", "area", "D"], [s.u, s.values, A.values, D.values]))
    writer.json("summary.json", {"J": D0 * spec.delta_v, "D0": D0, "n_u": nu + 1})


def _default_p0(spec):
    a, b = spec.u_range
    k = math.pi / (b - a)
    return FunctionExpr.sinusoid(1.0, 0.5, k, math.pi / 2 - k * a)


def run_simulate(run, writer):
    from .sim import brownian_mfpt, field_mass, mfpt_effective, project_full, solve_effective_1d, solve_full_2d

    cfg = run.config
    sim = cfg["sim"]
    spec = run.spec()
    mode = sim.get("mode")
    D0 = _number(cfg, "D0", "/D0")
    if mode not in ("effective", "full", "particles", "mfpt"):
        raise ValidationError(f"unknown mode {mode!r}", "/sim/mode")
    summary = {"mode": mode}
    if mode in ("effective", "full"):
        dt = _number(sim, "dt", "/sim/dt")
        T = _number(sim, "T", "/sim/T")
        p0 = FunctionExpr.from_json(sim["p0"], "/sim/p0") if "p0" in sim else _default_p0(spec)
        nu, nv = parse_resolution(cfg["solver_grid"], "/solver_grid")
        cells = CellGrid(nu, nv).points(spec)
        if mode == "full":
            P0 = Field2D.from_function(lambda u, v: p0(u), cells)
            times, fields = solve_full_2d(spec, cells, P0, dt, T, D0, sim.get("bc", "reflecting"))
            series = project_full(times, fields, spec, cells)
            masses = [field_mass(P, spec, cells) for P in fields]
        else:
            coeff = sim.get("coefficient", "D_inf")
            if coeff == "D_fin":
                res = _finite_rate(spec, cfg, cfg["solver_grid"])
                if res.D_fin is None:
                    raise ReductionError(res.reduction_error)
                D, s = res.D_fin, res.sigma
            elif coeff == "D_inf":
                c = compute_coefficients(spec, QuadratureGrid(4 * nu + 1, 16), D0)
                D, s = ScalarProfile(c.u, c.D_inf), ScalarProfile(c.u, c.sigma)
            else:
                raise ValidationError("coefficient must be 'D_inf' or 'D_fin'", "/sim/coefficient")
            p0p = ScalarProfile(cells.u, p0(cells.u))
            values = tuple(sim.get("values", (0.0, 0.0)))
            series = solve_effective_1d(D, s, p0p, dt, T, sim.get("bc", "reflecting"), values)
            masses = series.mass()
        masses = np.asarray(masses)
        writer.text("timeseries.csv", series.to_csv())
        summary.update(
            {
                "stamps": int(series.t.size),
                "mass_initial": float(masses[0]),
                "mass_final": float(masses[-1]),
                "mass_drift": float(np.abs(masses - masses[0]).max() / abs(masses[0])),
            }
        )
    else:
        dt = _number(sim, "dt", "/sim/dt")
        N = int(_number(sim, "N", "/sim/N"))
        seed = int(sim.get("seed", cfg["seed"]))
        res = brownian_mfpt(spec, N, dt, seed, D0)
        summary.update({"mfpt": res.to_json(), "dt": dt, "seed": seed})
        if mode == "mfpt":
            a, b = spec.u_range
            c = compute_coefficients(spec, QuadratureGrid(1025, 16), D0)
            s = ScalarProfile(c.u, c.sigma)
            summary["effective_D_fj"] = mfpt_effective(ScalarProfile(c.u, c.D_fj), s, a, b)
            fin = _finite_rate(spec, cfg, cfg["solver_grid"])
            if fin.D_fin is not None:
                Df = fin.sigma.with_values(fin.D_fin.values / fin.sigma.values**2)
                summary["effective_D_fin"] = mfpt_effective(Df, fin.sigma, a, b)
    writer.json("summary.json", summary)
    return summary


def _order(coarse, fine, ratio=2.0, floor=1e-12):
    if not (math.isfinite(coarse) and math.isfinite(fine)):
        return ""
    if coarse <= floor and fine <= floor:
        return "exact"
    if fine <= 0.0 or coarse <= 0.0:
        return ""
    return fmt(math.log(coarse / fine) / math.log(ratio))


def _floor(cfg):
    """Errors below this are solver noise; their order is reported as ``exact``."""
    return max(1e-12, 100.0 * _number(cfg, "tol", "/tol"))


def _sweep_level(spec, cfg, level):
    """Errors for one refinement level (run in a worker thread)."""
    res = _finite_rate(spec, cfg, level, "/levels")
    g = res.h.grid
    uu, vv = g.mesh()
    exact = spec.exact_natural(uu, vv, res.h.boundary)
    h_err = float(np.sqrt(np.mean((res.h.values - exact) ** 2))) if exact is not None else float("nan")
    scale = max(abs(res.h.boundary[0]), abs(res.h.boundary[1]), 1.0)
    return {
        "level": str(level),
        "n_u": g.shape[0],
        "n_v": g.shape[1],
        "h_error": h_err / scale,
        "J_std": res.report.J_relative_std,
        "D_fin": None if res.D_fin is None else (res.D_fin.u.tolist(), res.D_fin.values.tolist()),
        "D_inf_gap": float("nan") if res.D_fin is None else float(np.abs(res.D_fin.values / res.D_inf.values - 1).max()),
        "iterations": res.report.iterations,
    }


def run_sweep(run, writer):
    cfg = run.config
    spec = run.spec()
    levels = list(cfg["levels"])
    if len(levels) < 3:
        raise ValidationError("a sweep needs at least 3 refinement levels", "/levels")
    shapes = [parse_resolution(lv, f"/levels/{i}") for i, lv in enumerate(levels)]
    if sorted(shapes) != shapes or len(set(shapes)) != len(shapes):
        raise ValidationError("levels must be listed from coarse to fine", "/levels")
    workers = int(os.environ.get("CHANNELFX_THREADS", "0") or 0) or min(len(levels), os.cpu_count() or 1)
    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(lambda lv: _sweep_level(spec, cfg, lv), levels))
    # D_fin drift: change against the next coarser level on the coarse cell centres
    drift = [float("nan")]
    for prev, cur in zip(results, results[1:]):
        if prev["D_fin"] is None or cur["D_fin"] is None:
            drift.append(float("nan"))
            continue
        u0, d0 = map(np.asarray, prev["D_fin"])
        fine = ScalarProfile(*map(np.asarray, cur["D_fin"]))
        drift.append(float(np.abs(fine(u0) / d0 - 1).max()))
    for i, r in enumerate(results):
        r["D_fin_drift"] = drift[i]
        level_doc = {k: v for k, v in r.items() if k != "D_fin"}
        writer.json(f"levels/level_{i}.json", level_doc)
    header = [
        "level", "n_u", "n_v", "h_error", "h_order", "J_std", "J_std_order",
        "D_fin_drift", "D_fin_drift_order", "D_inf_gap", "D_inf_gap_order",
    ]
    lines = [",".join(header)]
    floor = _floor(cfg)
    for i, r in enumerate(results):
        prev = results[i - 1] if i else None

        def order(key):
            if prev is None:
                return ""
            ratio = r["n_u"] / prev["n_u"]
            return _order(prev[key], r[key], ratio, floor)

        d_order = ""
        if i >= 2:
            d_order = _order(results[i - 1]["D_fin_drift"], r["D_fin_drift"], r["n_u"] / results[i - 1]["n_u"], floor)
        lines.append(
            ",".join(
                [
                    r["level"], str(r["n_u"]), str(r["n_v"]),
                    fmt(r["h_error"]), order("h_error"),
                    fmt(r["J_std"]), order("J_std"),
                    fmt(r["D_fin_drift"]), d_order,
                    fmt(r["D_inf_gap"]), order("D_inf_gap"),
                ]
            )
        )
    writer.text("convergence.csv", "\n".join(lines) + "\n")
    return results


# -- entry point ---------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="channelfx", description="Effective diffusion coefficients of channels.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--spec", help="JSON channel definition (overrides config 'spec')")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--D0", type=float, help="bulk diffusion constant")

    c = sub.add_parser("coeff", help="infinite-rate coefficient profiles")
    common(c)
    c.add_argument("--grid", help="quadrature resolution NUxNV (u panels x Gauss points)")

    h = sub.add_parser("harmonic", help="natural projection and finite-rate coefficient")
    common(h)
    h.add_argument("--grid", dest="solver_grid", help="cell grid NUxNV")
    h.add_argument("--tol", type=float)
    h.add_argument("--max-iter", dest="max_iter", type=int)
    h.add_argument("--bc", help="lateral values a,b")

    j = sub.add_parser("conjugate", help="closed-form conjugate-pair profiles")
    common(j)
    j.add_argument("--map", choices=("strip", "log-wedge", "power"))
    j.add_argument("--alpha", type=float)
    j.add_argument("--v-range", dest="v_range")
    j.add_argument("--u-range", dest="u_range")
    j.add_argument("--grid", help="resolution NUxNV; NU sets the number of u panels")

    s = sub.add_parser("simulate", help="time-dependent solvers and the particle oracle")
    common(s)
    s.add_argument("--mode", choices=("effective", "full", "particles", "mfpt"))
    s.add_argument("--dt", type=float)
    s.add_argument("--T", type=float)
    s.add_argument("--N", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--grid", dest="solver_grid", help="cell grid NUxNV")

    w = sub.add_parser("sweep", help="grid convergence study of the harmonic solve")
    common(w)
    w.add_argument("--levels", help="comma separated resolutions, coarse to fine")
    w.add_argument("--tol", type=float)
    w.add_argument("--bc", help="lateral values a,b")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        run = load_run(args)
        writer = Writer(run.config["out"])
        if args.command == "coeff":
            run_coeff(run, writer)
        elif args.command == "harmonic":
            run_finite(run, writer)
        elif args.command == "conjugate":
            run_conjugate(run, writer, args)
        elif args.command == "simulate":
            run_simulate(run, writer)
        else:
            run_sweep(run, writer)
        writer.manifest(args.command, run)
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as exc:
        where = exc.path or "/"
        print(f"error: {where}: {exc.message}", file=sys.stderr)
        return EXIT_VALIDATION
    except ChannelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
