"""Command-line runner: ``fbflow solve|verify|continuation|oracle``.

Exit codes: 0 pass, 1 config error, 2 non-convergence, 3 nothing to
verify, 4 checks failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import kernels, selfcheck
from .config import ConfigError, ExperimentConfig, load_config
from .energy import energy_J
from .fbanalysis import build_report, extract_fb, fb_gradient_trace, select_points, target_slope
from .grid import ContractError, ScalarField, read_field, write_field
from .solver import ContinuationError, euler_lagrange_residuals, minimize_J_continuation, minimize_Jeps

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_NOTHING, EXIT_FAILED = 0, 1, 2, 3, 4

log = logging.getLogger("fbflow")


def seed_from_env() -> int:
    raw = os.environ.get("FBFLOW_SEED", "42")
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"FBFLOW_SEED must be an integer, got {raw!r}") from None


def _json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, allow_nan=True)
        fh.write("\n")


def _merge_traces(out_dir, stages, eps_list):
    """Concatenate per-stage traces into trace.csv with stage and eps columns."""
    rows = []
    for k in range(stages):
        part = os.path.join(out_dir, f"trace_stage{k}.csv")
        if not os.path.exists(part):
            continue
        with open(part, newline="") as fh:
            r = csv.reader(fh)
            head = next(r)
            rows.extend([k, f"{eps_list[k]:.10g}"] + row for row in r)
        os.remove(part)
    with open(os.path.join(out_dir, "trace.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "eps"] + head if rows else ["stage", "eps"])
        w.writerows(rows)


def cmd_solve(cfg: ExperimentConfig) -> int:
    os.makedirs(cfg.out_dir, exist_ok=True)
    u_path = os.path.join(cfg.out_dir, "u.txt")
    info = {"mode": cfg.mode, "workers": cfg.workers, "backend": kernels.BACKEND,
            "clamp_nonneg": cfg.solver.clamp_nonneg}
    if cfg.mode == "regularized":
        scfg = replace(cfg.solver, trace_path=os.path.join(cfg.out_dir, "trace.csv"))
        res = minimize_Jeps(cfg.data, cfg.boundary, None, scfg)
        write_field(u_path, res.u)
        info.update(converged=res.converged, iterations=res.iterations, residual=res.final_grad_norm,
                    eps=cfg.data.eps, J_eps=res.energy.to_dict())
        _json(os.path.join(cfg.out_dir, "energy.json"), info)
        return EXIT_OK if res.converged else EXIT_NONCONVERGED

    eps_list = cfg.schedule.eps_list
    scfg = replace(cfg.solver, trace_path=os.path.join(cfg.out_dir, "trace_stage{stage}.csv"))
    try:
        res = minimize_J_continuation(cfg.data, cfg.boundary, cfg.schedule, scfg, extend=cfg.extend)
    except ContinuationError as exc:
        _merge_traces(cfg.out_dir, exc.stage + 1, eps_list)
        write_field(u_path, exc.result.u)
        info.update(converged=False, failed_stage=exc.stage, eps=exc.eps, iterations=exc.result.iterations,
                    residual=exc.result.final_grad_norm)
        _json(os.path.join(cfg.out_dir, "energy.json"), info)
        log.error("%s", exc)
        return EXIT_NONCONVERGED
    _merge_traces(cfg.out_dir, len(eps_list), eps_list)
    write_field(u_path, res.u)
    last = res.stages[-1]
    info.update(converged=True, eps_final=res.eps_final, eps_schedule=eps_list,
                iterations=[s.result.iterations for s in res.stages],
                residual=last.result.final_grad_norm, J=res.energy.to_dict(),
                J_eps=last.result.energy.to_dict())
    _json(os.path.join(cfg.out_dir, "energy.json"), info)
    return EXIT_OK


# ------------------------------------------------------------------ verify

def _point_checks(report, v):
    checks = []
    band_g, band_d = v["growth_band"], v["density_band"]
    for rec, scan in zip(report.per_point, report.scans):
        lam = rec.target_lambda_star
        where = "(" + ", ".join(f"{c:.6g}" for c in rec.point) + ")"
        err = abs(rec.measured_slope / lam - 1.0)
        checks.append(("slope", where, bool(err <= v["slope_tol"]), err))
        g = np.asarray(scan["growth"]["values"]) / lam
        checks.append(("growth", where, bool(np.all((g >= band_g[0]) & (g <= band_g[1]))), float(g.max())))
        n = np.asarray(scan["nondegeneracy"]["values"]) / lam
        checks.append(("nondegeneracy", where, bool(np.all(n >= v["nondegeneracy_min"])), float(n.min())))
        d = np.asarray(scan["density"]["values"])
        checks.append(("density", where, bool(np.all((d >= band_d[0]) & (d <= band_d[1]))), float(d.max())))
        err = abs(rec.blowup_alpha / lam - 1.0)
        checks.append(("blowup_alpha", where, bool(err <= v["blowup_tol"]), err))
        checks.append(("blowup_residual", where, bool(rec.fit_residual < v["blowup_residual"]), rec.fit_residual))
    return checks


def cmd_verify(cfg: ExperimentConfig, field_path: str, seed: int) -> int:
    try:
        u = read_field(field_path)
    except OSError as exc:
        raise ConfigError(f"cannot read field {field_path}: {exc.strerror}") from None
    except (ContractError, ValueError, IndexError) as exc:
        raise ConfigError(f"malformed field file {field_path}: {exc}") from None
    if not u.grid.same_as(cfg.grid):
        raise ConfigError(f"grid of {field_path} {u.grid.n} does not match the config grid {cfg.grid.n}")
    os.makedirs(cfg.out_dir, exist_ok=True)
    sharp = cfg.data.as_sharp()
    s = cfg.scan
    report = build_report(u, sharp, s["radii_cells"], s["density_cells"], s["rho_cells"], s["points"],
                          s["n_samples"])
    out = report.to_dict()
    if not report.per_point:
        out.update(checks=[], passed=False)
        _json(os.path.join(cfg.out_dir, "report.json"), out)
        print(f"nothing to verify: {report.notes[-1] if report.notes else 'no free boundary'}")
        return EXIT_NOTHING
    v = cfg.verify
    checks = _point_checks(report, v)
    eq, hat = euler_lagrange_residuals(u, sharp, v["residual_threshold"], cfg.solver, v["hats"],
                                       np.random.default_rng(seed))
    checks.append(("equation_residual", "{u > threshold}", bool(eq <= v["residual_tol"]), eq))
    checks.append(("one_sided_inequality", f"{v['hats']} hats", bool(hat <= v["residual_tol"]), hat))
    out["checks"] = [{"check": c, "where": w, "passed": ok, "value": val} for c, w, ok, val in checks]
    out["passed"] = all(ok for _, _, ok, _ in checks)
    _json(os.path.join(cfg.out_dir, "report.json"), out)
    report.write_scan_csv(os.path.join(cfg.out_dir, "scans.csv"))
    failed = [c for c in checks if not c[2]]
    for c, w, _, val in failed[:20]:
        print(f"FAIL {c} at {w}: {val:.6g}")
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed at {len(report.per_point)} points")
    return EXIT_OK if not failed else EXIT_FAILED


# ------------------------------------------------------------------ continuation study

def edge_slope(u: ScalarField, data, n_samples: int = 4, limit: int = 32):
    """Median measured slope and median relative error over up to ``limit`` FB points."""
    pts = extract_fb(u, 0.0)
    h = min(u.grid.h)
    pts = select_points(u, pts, 2.0 * (n_samples + 1) * h, limit) if len(pts) else pts
    slopes, errs = [], []
    for x0 in pts:
        try:
            m = fb_gradient_trace(u, x0, data, n_samples)
        except ContractError:
            continue
        slopes.append(m)
        errs.append(abs(m / target_slope(data, x0) - 1.0))
    if not slopes:
        return float("nan"), float("nan")
    return float(np.median(slopes)), float(np.median(errs))


def errors_nonincreasing(errs, last: int = 3, slack: float = 0.10) -> bool:
    tail = list(errs)[-last:]
    return all(b <= (1.0 + slack) * a for a, b in zip(tail, tail[1:]))


def cmd_continuation(cfg: ExperimentConfig) -> int:
    if cfg.mode != "sharp-continuation":
        raise ConfigError(f"{cfg.path}: continuation needs mode = sharp-continuation")
    os.makedirs(cfg.out_dir, exist_ok=True)
    try:
        res = minimize_J_continuation(cfg.data, cfg.boundary, cfg.schedule, cfg.solver, extend=cfg.extend)
    except ContinuationError as exc:
        log.error("%s", exc)
        return EXIT_NONCONVERGED
    sharp = cfg.data.as_sharp()
    n_samples = cfg.scan["n_samples"]
    rows, errs = [], []
    for st in res.stages:
        pts = extract_fb(st.u_sharp, 0.0)
        slope, err = edge_slope(st.u_sharp, sharp, n_samples, cfg.scan["points"])
        errs.append(err)
        x1 = pts[:, 0] if len(pts) else np.array([np.nan])
        target = float(np.median([target_slope(sharp, x) for x in pts])) if len(pts) else float("nan")
        rows.append([f"{st.eps:.10g}", f"{st.result.energy.total:.12g}", f"{st.J_sharp.total:.12g}", len(pts),
                     f"{np.min(x1):.10g}", f"{np.max(x1):.10g}", f"{slope:.10g}", f"{target:.10g}", f"{err:.6g}",
                     st.result.iterations])
    with open(os.path.join(cfg.out_dir, "continuation.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eps", "J_eps", "J_sharp", "fb_count", "fb_x1_min", "fb_x1_max", "edge_slope",
                    "target_slope", "slope_error", "iterations"])
        w.writerows(rows)
    write_field(os.path.join(cfg.out_dir, "u.txt"), res.u)
    fslope, ferr = edge_slope(res.u, sharp, n_samples, cfg.scan["points"])
    ok = errors_nonincreasing(errs)
    _json(os.path.join(cfg.out_dir, "continuation.json"),
          {"stages": len(res.stages), "slope_errors": errs, "nonincreasing": ok,
           "final": {"J": res.energy.to_dict(), "edge_slope": fslope, "slope_error": ferr}})
    if any(np.isnan(errs)):
        print("no measurable free-boundary slope at some stage")
        return EXIT_NOTHING
    print("slope errors: " + ", ".join(f"{e:.4g}" for e in errs))
    return EXIT_OK if ok else EXIT_FAILED


def cmd_oracle(suite: str, out_dir: str, seed: int) -> int:
    if suite not in selfcheck.SUITES and suite != "all":
        raise ConfigError(f"unknown suite {suite!r} (choose from {', '.join(selfcheck.SUITES)}, all)")
    checks, seconds = selfcheck.run_suite(suite, seed)
    os.makedirs(out_dir, exist_ok=True)
    passed = all(c.passed for c in checks)
    _json(os.path.join(out_dir, f"oracle_{suite}.json"),
          {"suite": suite, "seed": seed, "seconds": seconds, "passed": passed,
           "checks": [c.to_dict() for c in checks]})
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.suite}: {c.name} ({c.value:.3g}) {c.detail}".rstrip())
    return EXIT_OK if passed else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fbflow", description="free-boundary energy minimization experiments")
    ap.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, what in (("solve", "minimize the configured energy"),
                       ("verify", "check a solution field"),
                       ("continuation", "eps-continuation study with per-stage slopes")):
        p = sub.add_parser(name, help=what)
        p.add_argument("config")
        p.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
        p.add_argument("--workers", type=int, default=None, help="threads for the compiled kernels")
        if name == "verify":
            p.add_argument("--field", default=None, help="solution field (default: [verify] field or OUT/u.txt)")
    p = sub.add_parser("oracle", help="run oracle self-checks")
    p.add_argument("suite", help="planar, ode, bruteforce, vexp or all")
    p.add_argument("--out", default="out", help="directory for the summary JSON")
    p.add_argument("--workers", type=int, default=None, help="accepted for symmetry; unused")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        seed = seed_from_env()
        if args.command == "oracle":
            return cmd_oracle(args.suite, args.out, seed)
        if args.workers is not None and args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg = load_config(args.config, args.workers, args.out)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "verify":
            path = args.field or cfg.field_path or os.path.join(cfg.out_dir, "u.txt")
            return cmd_verify(cfg, path, seed)
        return cmd_continuation(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
