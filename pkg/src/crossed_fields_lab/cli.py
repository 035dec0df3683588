"""Command-line runner: ``crossed-fields-lab <command> --config <path> [--out <dir>]``.

Exit codes: 0 pass, 1 tolerance failure, 2 configuration error,
3 precondition failure (boundary guard or degenerate level set).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .eigenscan import exclusion_report
from .funcalc import eigendecompose
from .lattice import build_h
from .semiclassics import (
    NondegeneracyError,
    QuadratureError,
    SymbolContext,
    c0,
    check_nondegeneracy,
    gamma0,
    predict_ssf_increment,
    tauberian_kernel,
)
from .ssf import GuardError, SSFQuery, check_guard, compute_ssf, resolved_window, ssf_increment, boundary_masses

log = logging.getLogger("crossed_fields_lab")

EXIT_OK, EXIT_TOLERANCE, EXIT_CONFIG, EXIT_PRECONDITION = 0, 1, 2, 3
SCHEMA_VERSION = "1"
KERNEL_PLOT_RANGE = 50.0  # |tau| / h written to kernel.csv


def fmt(x) -> str:
    """17 significant digits: round-trips every double."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def write_csv(path: Path, header: list[str], rows: list[dict]) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(r[k]) for k in header])
    return path


def write_json(path: Path, obj: dict) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return path


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


# -- subcommands ------------------------------------------------------------------


def cmd_verify_trace(cfg: ExperimentConfig, out: Path) -> int:
    cfg.require("verify-trace")
    q = cfg.query
    rows, summary = [], []
    for L in cfg.grid.L:
        grid = cfg.grid.grid(L)
        query = SSFQuery(q.lambdas, q.sigma, grid, cfg.params(), cfg.potential, "both", q.solver, guard=False)
        if q.guard:
            check_guard(query)
        res = compute_ssf(query)
        rel = res.relative_residual()
        scale = float(np.max(np.abs(res.values["difference"]))) + 1e-8 * grid.dimension
        for lam, d, f, r in zip(res.energies, res.values["difference"], res.values["formula"], res.residual):
            rows.append(
                {"L": L, "lambda": lam, "diff_route": d, "formula_route": f, "abs_residual": r, "rel_residual": r / scale}
            )
        summary.append({"L": L, "Nx": grid.Nx, "Ny": grid.Ny, "dx": grid.dx, "sup_rel_residual": rel})
        log.info("L=%g  N=%dx%d  sup relative residual %.3e", L, grid.Nx, grid.Ny, rel)
    final = summary[-1]["sup_rel_residual"]
    rels = [s["sup_rel_residual"] for s in summary]
    passed = final <= q.tolerance
    if "csv" in cfg.formats:
        write_csv(out / "trace_identity.csv", ["L", "lambda", "diff_route", "formula_route", "abs_residual", "rel_residual"], rows)
    if "json" in cfg.formats:
        write_json(
            out / "trace_identity.json",
            {
                "schema_version": SCHEMA_VERSION,
                "tolerance": q.tolerance,
                "final_sup_rel_residual": final,
                "nonincreasing_in_L": bool(all(b <= a for a, b in zip(rels, rels[1:]))),
                "passed": passed,
                "runs": summary,
            },
        )
    if "png" in cfg.formats:
        from .plotting import plot_trace_identity

        plot_trace_identity(rows, out / "trace_identity.png")
    return EXIT_OK if passed else EXIT_TOLERANCE


def _weyl_guard(cfg, grid, params) -> bool:
    q = cfg.query
    query = SSFQuery((q.lambda1, q.lambda2), q.weyl_sigma, grid, params, cfg.potential, "difference", q.solver)
    try:
        check_guard(query)
    except GuardError as e:
        log.warning("h=%g: %s", params.h, e)
        return False
    return True


def weyl_verdict(rows: list[dict], low: float, high: float) -> tuple[bool, str]:
    """Pass iff the scaled residual does not increase over the last two guarded h and the last ratio is in range."""
    ok_rows = [r for r in rows if r["guard_ok"]]
    if not ok_rows:
        return False, "no h value passed the boundary guard"
    last = ok_rows[-1]
    if not low <= last["ratio"] <= high:
        return False, f"ratio {last['ratio']:.4f} at h={last['h']} outside [{low}, {high}]"
    if len(ok_rows) >= 2 and ok_rows[-1]["scaled_residual"] > ok_rows[-2]["scaled_residual"]:
        return False, "scaled residual increased over the final two h values"
    return True, f"ratio {last['ratio']:.4f} at h={last['h']}"


def cmd_semiclassical(cfg: ExperimentConfig, out: Path) -> int:
    cfg.require("semiclassical")
    q = cfg.query
    hs = cfg.h
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ConfigError("[operator] h list must be strictly descending for semiclassical")
    ctx = SymbolContext(cfg.potential)
    for lam in (q.lambda1, q.lambda2):
        rep = check_nondegeneracy(lam, ctx)
        if not rep.ok:
            log.error("degenerate level set at lambda=%g: min |grad(x+V)| = %.3g at %s", lam, rep.min_grad, rep.argmin)
            return EXIT_PRECONDITION
    grid = cfg.grid.grid(cfg.grid.L[-1])
    rows = []
    for h in hs:
        params = cfg.params(h)
        numeric = ssf_increment(q.lambda1, q.lambda2, q.weyl_sigma, grid, params, cfg.potential, q.solver)
        predicted = predict_ssf_increment(q.lambda1, q.lambda2, h, ctx)
        scaled = abs(numeric - predicted) * (2 * math.pi * h) ** 2
        ratio = numeric / predicted if predicted != 0 else (1.0 if numeric == 0 else math.inf)
        guard_ok = _weyl_guard(cfg, grid, params) if q.guard else True
        rows.append(
            {"h": h, "numeric": numeric, "predicted": predicted, "scaled_residual": scaled, "ratio": ratio, "guard_ok": guard_ok}
        )
        log.info("h=%g  numeric %.6g  predicted %.6g  ratio %.4f  guard %s", h, numeric, predicted, ratio, guard_ok)
    if cfg.potential.kind == "zero":
        passed = all(abs(r["numeric"]) <= 1e-10 and r["predicted"] == 0 for r in rows)
        why = "zero potential"
    else:
        passed, why = weyl_verdict(rows, q.ratio_low, q.ratio_high)
    log.info("semiclassical: %s (%s)", "pass" if passed else "fail", why)
    if "csv" in cfg.formats:
        write_csv(out / "weyl_sweep.csv", ["h", "numeric", "predicted", "scaled_residual", "ratio", "guard_ok"], rows)
    if "json" in cfg.formats:
        write_json(
            out / "weyl_sweep.json",
            {
                "schema_version": SCHEMA_VERSION,
                "lambda1": q.lambda1,
                "lambda2": q.lambda2,
                "sigma": q.weyl_sigma,
                "L": grid.Lx,
                "passed": passed,
                "reason": why,
                "rows": [{k: _jsonable(v) for k, v in r.items()} for r in rows],
            },
        )
    if "png" in cfg.formats:
        from .plotting import plot_weyl_sweep

        plot_weyl_sweep(rows, out / "weyl_sweep.png")
    return EXIT_OK if passed else EXIT_TOLERANCE


def cmd_scan(cfg: ExperimentConfig, out: Path) -> int:
    cfg.require("scan")
    q = cfg.query
    grid = cfg.grid.grid(cfg.grid.L[0])
    params = cfg.params()
    lo, hi = q.window
    # compute past the window so the guard can see its top end
    upper = float(math.ceil(hi + 6 * q.sigma + 1.0))
    es = eigendecompose(build_h(grid, params, cfg.potential), upper=upper, solver=q.solver)
    if q.guard and es.count:
        masses = boundary_masses(grid, params, cfg.potential, upper, q.solver)
        a, b = resolved_window(es, masses, q.sigma)
        if not (lo >= a and hi <= b):
            log.error("scan window [%g, %g] leaves the resolved range [%.3f, %.3f]", lo, hi, a, b)
            return EXIT_PRECONDITION
    rep = exclusion_report(grid, params, cfg.potential, q.window, loc_threshold=q.loc_threshold, es=es)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "grid": {"L": grid.Lx, "Nx": grid.Nx, "Ny": grid.Ny, "dx": grid.dx},
        "operator": {"B": params.B, "eps": params.eps, "h": params.h},
        "window": [lo, hi],
        "loc_threshold": q.loc_threshold,
        "report": rep.as_dict(),
    }
    if "json" in cfg.formats:
        write_json(out / "eigenscan.json", doc)
    if "png" in cfg.formats:
        from .plotting import plot_eigenscan

        plot_eigenscan(doc["report"], q.loc_threshold, out / "eigenscan.png")
    log.info(
        "scan: %d eigenvalues, %d excluded by virial, %d surviving%s",
        len(rep.candidates),
        rep.excluded_count,
        len(rep.surviving),
        ", inconclusive" if rep.inconclusive else "",
    )
    return EXIT_OK if (not rep.surviving or rep.inconclusive) else EXIT_TOLERANCE


def _grid_of(rng) -> np.ndarray:
    a, b, st = rng
    n = int(math.floor((b - a) / st + 1e-9))
    return np.round(a + st * np.arange(n + 1), 12)


def cmd_curves(cfg: ExperimentConfig, out: Path) -> int:
    cfg.require("curves")
    q = cfg.query
    ctx = SymbolContext(cfg.potential)
    failed = False
    c0_rows, g_rows = [], []
    for lam in _grid_of(q.c0_range):
        try:
            v, status = c0(float(lam), ctx), "ok"
        except QuadratureError as e:
            v, status, failed = e.estimate, "quadrature-error", True
        c0_rows.append({"lambda": lam, "c0": v, "status": status})
    for tau in _grid_of(q.gamma0_range):
        try:
            v, status = gamma0(float(tau), ctx), "ok"
        except QuadratureError as e:
            v, status, failed = e.estimate, "quadrature-error", True
        except NondegeneracyError:
            v, status = gamma0(float(tau), ctx, check=False), "degenerate"
        g_rows.append({"tau": tau, "gamma0": v, "status": status})
    k = tauberian_kernel(q.kernel, q.C0, q.kernel_h)
    keep = np.abs(k.t) <= KERNEL_PLOT_RANGE * k.h
    k_rows = [{"t": t, "theta_breve": v} for t, v in zip(k.t[keep], k.values[keep])]
    if "csv" in cfg.formats:
        write_csv(out / "c0_curve.csv", ["lambda", "c0", "status"], c0_rows)
        write_csv(out / "gamma0_curve.csv", ["tau", "gamma0", "status"], g_rows)
        write_csv(out / "kernel.csv", ["t", "theta_breve"], k_rows)
    if "json" in cfg.formats:
        write_json(
            out / "curves.json",
            {
                "schema_version": SCHEMA_VERSION,
                "kernel": {
                    "construction": k.construction,
                    "C0": k.C0,
                    "h": k.h,
                    "certificate": k.certificate,
                    "mass": k.mass(),
                    "h_theta_breve_0": k.h * k.theta_breve(0.0),
                },
                "quadrature_failures": sum(r["status"] == "quadrature-error" for r in c0_rows + g_rows),
            },
        )
    if "png" in cfg.formats:
        from .plotting import plot_curve

        plot_curve([r["lambda"] for r in c0_rows], [r["c0"] for r in c0_rows], r"$\lambda$", r"$c_0(\lambda)$", out / "c0_curve.png")
        plot_curve([r["tau"] for r in g_rows], [r["gamma0"] for r in g_rows], r"$\tau$", r"$\gamma_0(\tau)$", out / "gamma0_curve.png")
        plot_curve([r["t"] for r in k_rows], [r["theta_breve"] for r in k_rows], "t", r"$\breve\theta_h(t)$", out / "kernel.png")
    return EXIT_TOLERANCE if failed else EXIT_OK


COMMANDS = {
    "verify-trace": cmd_verify_trace,
    "semiclassical": cmd_semiclassical,
    "scan": cmd_scan,
    "curves": cmd_curves,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="crossed-fields-lab",
        description="Spectral shift, eigenvalue exclusion and semiclassical checks for crossed-field Schroedinger operators.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=sorted(COMMANDS), help="experiment to run")
    p.add_argument("--config", required=True, help="INI experiment file")
    p.add_argument("--out", default=None, help="output directory (overrides [output] directory)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(args.config)
        out = Path(args.out if args.out is not None else cfg.directory)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (GuardError, NondegeneracyError) as e:
        print(f"precondition failed: {e}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
