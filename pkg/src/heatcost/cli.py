"""
Command-line experiment runner.

Every subcommand reads a ``key = value`` config, runs one pipeline and writes
plot-ready CSV tables plus ``manifest.json`` into ``--out``.  Numbers are
written with 17 significant digits and rows are sorted canonically, so two
runs with the same config produce byte-identical CSV files.  With
``--check`` the pipeline's invariants are evaluated and a violation makes the
process exit with status 4.

Failures print one JSON line ``{"error": <kind>, "message": <text>}`` on
stderr and exit nonzero (2 validation, 3 solver, 4 invariant check,
5 control synthesis).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import EXPERIMENTS, ExperimentConfig, load_config
from .control import (GRAMIAN_OPTIMAL, THREE_PHASE, choose_c0, cost_curve, synthesize)
from .elliptic import assemble, eigendecompose, parse_coefficient, write_eigendata
from .errors import ControlError, SolverError, ValidationError
from .geometry import BELOW_RESOLUTION, Subdomain, build_domain, dilate, parse_subdomain
from .heat import HeatState
from .spectral_inequality import (InequalityProbe, count_trend_violations, default_lambda_grid,
                                  fit_envelope, observability_estimate)
from .threesphere import SlitAnnulusGrid, harmonic_samples, probe_interpolation, solve_elliptic_on_annulus

__all__ = ["main", "run"]

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_CHECK, EXIT_CONTROL = 0, 2, 3, 4, 5


class CheckFailure(RuntimeError):
    pass


def fmt(x) -> str:
    """Render a number with 17 significant digits (strings pass through)."""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.16e}"


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _delta_label(d):
    return "Omega" if np.isinf(d) else d


def _key(d) -> str:
    """Short JSON key for a delta value."""
    return "Omega" if np.isinf(d) else f"{d:g}"


# --------------------------------------------------------------------------
# shared setup
# --------------------------------------------------------------------------
def _basis(cfg: ExperimentConfig):
    dom = build_domain(cfg.dimension, cfg.extent, cfg.n_interior)
    coeff = parse_coefficient(cfg.get("coefficient"), cfg.dimension, dom.extent)
    op = assemble(dom, coeff)
    return dom, op, eigendecompose(op)


def _lambda_grid(cfg, basis):
    spec = cfg.get("lambda_grid").strip().lower()
    if spec == "auto":
        return default_lambda_grid(basis, cfg.int("lambda_count"))
    return np.array(cfg.floats("lambda_grid"))


def _map(fn, items, jobs):
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


# --------------------------------------------------------------------------
# experiments; each returns (tables, summary, context)
# --------------------------------------------------------------------------
def _run_eig(cfg, out, jobs):
    _, _, basis = _basis(cfg)
    write_eigendata(basis, out / "eigendata.csv")
    summary = {"count": basis.count, "lambda_1": float(basis.eigenvalues[0])}
    checks = [("positive_spectrum", bool(basis.eigenvalues[0] > 0), "")]
    return ["eigendata.csv"], summary, {"checks": checks}


PROBE_HEADER = ["lambda_cut", "sqrt_lambda", "delta", "K", "log_K", "fit_slope", "fit_intercept",
                "residual", "regularized_flag"]


def _run_probe(cfg, out, jobs, observability=False):
    dom, _, basis = _basis(cfg)
    omega = parse_subdomain(dom, cfg.get("omega"))
    grid = _lambda_grid(cfg, basis)
    deltas = sorted(cfg.floats("delta_grid"))
    T = cfg.float("observability_T") if observability else None
    events, flags = [], []

    def cell(delta):
        target = dilate(omega, delta)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if observability:
                est = [observability_estimate(basis, omega, target, lam, T) for lam in grid]
            else:
                est = InequalityProbe(basis, omega, target, grid).sweep()
        return delta, target, est

    results = _map(cell, deltas, jobs)
    rows, fits, checks = [], {}, []
    for delta, target, est in results:
        if BELOW_RESOLUTION in target.flags:
            flags.append(f"delta={delta:g}: {BELOW_RESOLUTION}")
        for e in est:
            if e.regularized:
                events.append(f"delta={delta:g} lambda_cut={e.lambda_cut:.6g}: jitter on singular source form "
                              f"(rcond={e.rcond:.3e}, dim={e.dim})")
        try:
            fit = fit_envelope(None, est)
        except ValidationError as exc:
            fit = None
            events.append(f"delta={delta:g}: no envelope fit ({exc})")
        fits[delta] = fit
        for e in est:
            K = e.value
            rows.append([e.lambda_cut, np.sqrt(e.lambda_cut), delta, K, np.log(K) if K > 0 else -np.inf,
                         fit.slope if fit else np.nan, fit.intercept if fit else np.nan,
                         fit.residual if fit else np.nan, e.regularized])
        clean = [e.value for e in est if not e.regularized]
        checks.append((f"K_monotone_delta={delta:g}", count_trend_violations(clean) == 0, ""))
        if not observability and target.issubset(omega) is False:
            checks.append((f"K_at_least_one_delta={delta:g}", all(v >= 1 - 1e-12 for v in clean), ""))
    slopes = [fits[d].slope for d in deltas if fits[d] is not None]
    if len(slopes) >= 2:
        viol = count_trend_violations(slopes, increasing=True)
        checks.append(("slope_trend_in_delta", viol <= 1, f"violations={viol}"))
    rows.sort(key=lambda r: (r[2], r[0]))
    name = "observability.csv" if observability else "spectral_probe.csv"
    header = PROBE_HEADER + (["T"] if observability else [])
    if observability:
        rows = [r + [T] for r in rows]
    write_csv(out / name, header, rows)
    summary = {"fits": {_key(d): None if f is None else {
        "slope": f.slope, "intercept": f.intercept, "residual": f.residual,
        "relative_residual": f.relative_residual, "envelope_slope": f.envelope_slope,
        "r_squared": f.r_squared, "n_points": len(f.points), "excluded": f.excluded}
        for d, f in fits.items()}}
    if observability:
        summary["T"] = T
    with open(out / (name.replace(".csv", "_summary.json")), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return [name, name.replace(".csv", "_summary.json")], summary, {
        "checks": checks, "events": events, "flags": flags}


COST_HEADER = ["T", "inv_T", "delta", "method", "cost", "log_cost", "c0_used", "cond_gram",
               "regularized_flag", "terminal_residual"]


def _run_cost_curve(cfg, out, jobs):
    dom, _, full = _basis(cfg)
    basis = full.truncate(min(cfg.int("n_modes"), full.count))
    omega = parse_subdomain(dom, cfg.get("omega"))
    methods = tuple(m.strip() for m in cfg.get("methods").split(",") if m.strip())
    for m in methods:
        if m not in (THREE_PHASE, GRAMIAN_OPTIMAL):
            raise ValidationError(f"unknown method {m!r}")
    flags = [f"delta={d:g}: {BELOW_RESOLUTION}" for d in cfg.floats("delta_grid") if 0 < d < 0.5 * min(dom.h)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        curve = cost_curve(basis, omega, cfg.floats("delta_grid"), cfg.floats("T_grid"),
                           c0=cfg.optional_float("c0"), methods=methods,
                           include_omega=cfg.bool("include_omega"), jobs=jobs)
    order = {THREE_PHASE: 0, GRAMIAN_OPTIMAL: 1}
    rows = sorted(curve.rows, key=lambda r: (r.delta, order[r.method], -r.T))
    write_csv(out / "cost_curve.csv", COST_HEADER, [
        [r.T, r.inv_T, _delta_label(r.delta), r.method, r.cost, np.log(r.cost), r.c0_used, r.cond_gram,
         r.regularized, r.terminal_residual] for r in rows])
    summary = {"c0": curve.c0, "phase3_amplification": curve.amplification, "fits": {}}
    for (d, m), f in sorted(curve.fits.items(), key=lambda kv: (kv[0][0], order[kv[0][1]])):
        summary["fits"].setdefault(m, {})[_key(d)] = {
            "c_hat": f.slope, "C_hat": float(np.exp(f.intercept)), "log_C_hat": f.intercept,
            "r_squared": f.r_squared}
    if THREE_PHASE in methods and cfg.bool("include_omega"):
        base = curve.fits[(np.inf, THREE_PHASE)].slope
        summary["ratio_to_omega"] = {_key(d): curve.fits[(d, THREE_PHASE)].slope / base
                                     for d in sorted(cfg.floats("delta_grid"))}
    with open(out / "cost_curve_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    tol = cfg.float("tol")
    checks = [
        ("three_phase_dominates", len(curve.dominance_violations) == 0,
         f"violations={list(curve.dominance_violations)}"),
        ("cost_monotone_in_T", all(v <= 1 for v in curve.monotonicity_violations.values()),
         f"{ {f'{k[0]:g}/{k[1]}': v for k, v in curve.monotonicity_violations.items()} }"),
        ("terminal_residual", all(r.terminal_residual <= tol for r in curve.rows if r.method == THREE_PHASE),
         f"max={max((r.terminal_residual for r in curve.rows if r.method == THREE_PHASE), default=0):.3e}"),
    ]
    return ["cost_curve.csv", "cost_curve_summary.json"], summary, {
        "checks": checks, "events": list(curve.events), "c0": curve.c0, "flags": flags}


SYNTH_HEADER = ["T", "c0_used", "lambda_cut", "m_phase1", "m_phase3", "cost", "terminal_residual",
                "cn_residual", "projection_residual", "decay_factor", "decay_bound"]


def _run_synthesize(cfg, out, jobs):
    dom, op, full = _basis(cfg)
    basis = full.truncate(min(cfg.int("n_modes"), full.count))
    omega = parse_subdomain(dom, cfg.get("omega"))
    D = dilate(omega, cfg.float("u0_delta"))
    rng = np.random.default_rng(cfg.seed)
    v = np.zeros(dom.n_nodes)
    v[D.membership] = rng.standard_normal(D.count)
    v /= np.sqrt(np.sum(basis.mass * v * v))
    Ts = sorted(cfg.floats("T_grid"), reverse=True)
    c0 = cfg.optional_float("c0")
    amp = None
    if c0 is None:
        c0, amp = choose_c0(basis, omega, Ts[0])
    events = []

    def cell(T):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return synthesize(basis, omega, HeatState(0.0, v), T, c0, tol=cfg.float("tol"), op=op,
                              cn_steps=cfg.int("cn_steps"), cn_tol=cfg.float("cn_tol"),
                              projection_tol=cfg.float("projection_tol"))

    res = _map(cell, Ts, jobs)
    rows = []
    for T, s in zip(Ts, res):
        events.extend(f"T={T:g}: {e}" for e in s.events)
        rows.append([T, c0, s.lambda_cut, s.dual.dual_dim, s.phase3.n_controlled, s.total_cost,
                     s.relative_residual, s.cn_residual / s.u0_norm, s.projection_residual,
                     s.decay_factor, s.decay_bound])
    write_csv(out / "synthesize.csv", SYNTH_HEADER, rows)
    checks = [
        ("terminal_residual", all(s.relative_residual <= cfg.float("tol") for s in res), ""),
        ("projection_annihilation", all(s.projection_residual <= cfg.float("projection_tol") for s in res), ""),
        ("phase2_decay", all(s.decay_factor <= s.decay_bound * (1 + 1e-12) for s in res), ""),
    ]
    summary = {"c0": c0, "phase3_amplification": amp}
    return ["synthesize.csv"], summary, {"checks": checks, "events": events, "c0": c0}


SPHERE_HEADER = ["sample_id", "data_norm", "mid_norm", "global_norm", "witness"]


def _run_three_sphere(cfg, out, jobs):
    win = cfg.floats("window")
    if len(win) != 2:
        raise ValidationError("window: expected two angles")
    grid = SlitAnnulusGrid.build(cfg.float("R1"), cfg.float("R3"), cfg.float("h"), tuple(win),
                                 cfg.optional_float("r0"))
    fields = harmonic_samples(cfg.int("n_samples"), cfg.seed, grid.R1, grid.R3)
    grid._system()  # factorize once before fanning out
    solved = _map(lambda f: solve_elliptic_on_annulus(grid, f), fields, jobs)
    probe = probe_interpolation(grid, solved, grid.r0, cfg.float("r1"), cfg.float("r2"),
                                cfg.float("length_scale"))
    write_csv(out / "three_sphere.csv", SPHERE_HEADER, [
        [s.sample_id, s.boundary_data_norm, s.mid_norm, s.global_norm, s.alpha_witness]
        for s in probe.samples])
    summary = probe.summary()
    with open(out / "three_sphere_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    checks = [
        ("alpha_positive", probe.alpha_hat > 0, f"alpha_hat={probe.alpha_hat:.6g}"),
        ("C_hat_finite", bool(np.isfinite(probe.C_hat)), f"C_hat={probe.C_hat:.6g}"),
        ("mid_le_global", all(s.mid_norm <= s.global_norm * (1 + 1e-12) for s in probe.samples), ""),
    ]
    return ["three_sphere.csv", "three_sphere_summary.json"], summary, {"checks": checks}


RUNNERS = {
    "eig": _run_eig,
    "spectral-probe": _run_probe,
    "observability": lambda cfg, out, jobs: _run_probe(cfg, out, jobs, observability=True),
    "cost-curve": _run_cost_curve,
    "synthesize": _run_synthesize,
    "three-sphere": _run_three_sphere,
}


def run(config: ExperimentConfig, out_dir, jobs: int = 1, check: bool = False) -> dict:
    """Run one experiment and write its artifacts plus ``manifest.json``.

    Returns
    -------
    dict
        The manifest.

    Raises
    ------
    CheckFailure
        In ``check`` mode, when an invariant fails (after writing outputs).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if jobs < 1:
        raise ValidationError("--jobs must be >= 1")
    t0 = time.perf_counter()
    files, summary, ctx = RUNNERS[config.experiment](config, out, jobs)
    wall = time.perf_counter() - t0
    checks = ctx.get("checks", [])
    manifest = {
        "experiment": config.experiment,
        "version": __version__,
        "config_hash": config.digest,
        "config": dict(sorted(config.raw.items())),
        "seed": config.seed,
        "c0_used": ctx.get("c0"),
        "regularization_events": ctx.get("events", []),
        "flags": ctx.get("flags", []),
        "outputs": files,
        "summary": summary,
        "wall_time_s": wall,
        "checks": {name: {"ok": bool(ok), "detail": detail} for name, ok, detail in checks} if check else None,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=float)
    if check:
        failed = [name for name, ok, _ in checks if not ok]
        if failed:
            raise CheckFailure(f"invariant check failed: {', '.join(failed)}")
    return manifest


def _error(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="heatcost", description=__doc__.strip().splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="key = value config file (defaults: 1D reference setup)")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--jobs", type=int, default=1, help="worker threads for sweep cells")
        s.add_argument("--check", action="store_true", help="evaluate invariants; exit 4 on violation")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value (repeatable)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {}
        for item in args.set:
            k, sep, v = item.partition("=")
            if not sep:
                raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
            overrides[k.strip()] = v.strip()
        cfg = load_config(args.config, args.experiment, overrides)
        run(cfg, args.out, args.jobs, args.check)
    except ValidationError as exc:
        return _error("validation", str(exc), EXIT_VALIDATION)
    except SolverError as exc:
        return _error("solver", str(exc), EXIT_SOLVER)
    except CheckFailure as exc:
        return _error("check", str(exc), EXIT_CHECK)
    except ControlError as exc:
        return _error("control", str(exc), EXIT_CONTROL)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
