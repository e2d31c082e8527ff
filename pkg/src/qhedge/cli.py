"""Command-line front end.

Subcommands: solve, superrep, converge-nonlinear, cfl-study,
converge-linear, reference.  Exit codes: 0 ok, 1 usage/config error,
2 numerical fault, 3 acceptance failure under --check.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from .config import ConfigError, RunConfig
from .harness import (
    StudyReport,
    cfl_study,
    converge_linear,
    converge_nonlinear,
    run_solve,
    run_superrep,
    write_metadata_json,
    write_study_csv,
    write_superrep_csv,
    write_surface_csv,
)
from .model import check_assumptions
from .reference import (
    LinearQuantileProblem,
    driftless_put_price,
    linear_quantile_price,
    validate_reference,
)
from .stepping import CflViolation, PicardNonConvergence

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_CHECK = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="qhedge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("solve", "one backward solve; writes surface.csv and meta.json"),
        ("superrep", "super-replication curve; writes superrep.csv and meta.json"),
        ("converge-nonlinear", "delta-ladder self-convergence study"),
        ("cfl-study", "step-size-condition violation study"),
        ("converge-linear", "convergence to the analytical linear-driver price"),
        ("reference", "print reference values and oracle validation"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="configuration file (block.key = value lines)")
        p.add_argument("--json", action="store_true", help="config file is JSON")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="block.key=value",
            help="override a configuration entry (repeatable)",
        )
        p.add_argument("--check", action="store_true", help="exit 3 unless checks pass")
        p.add_argument("--out-dir", default=".", help="directory for output files")
        p.add_argument("--seed", type=int, help="random seed override")
        p.add_argument("--threads", default="1", help="per-control solver threads (n or auto)")
        p.add_argument("--unchecked-cfl", action="store_true",
                       help="run despite violated step-size conditions")
        if name == "converge-nonlinear":
            p.add_argument("--deltas", default="0.1,0.05,0.01,0.005",
                           help="comma-separated delta ladder")
        if name == "cfl-study":
            p.add_argument("--deltas", default="0.05,0.01,0.005")
            p.add_argument("--violating-h", type=float, default=0.1)
            p.add_argument("--hs", default="0.025,0.01,0.0025")
            p.add_argument("--fixed-delta", type=float, default=0.05)
        if name == "converge-linear":
            p.add_argument("--ns", default="3,4,5", help="comma-separated ladder of n")
            p.add_argument("--mc-paths", type=int, default=1_000_000)
        if name == "reference":
            p.add_argument("--mc-paths", type=int, default=1_000_000)
    return parser


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config, json_format=args.json) if args.config else RunConfig()
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects block.key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    cfg = cfg.with_pairs(overrides)
    if args.seed is not None:
        cfg = cfg.with_pairs({"output.seed": str(args.seed)})
    if args.unchecked_cfl:
        cfg = cfg.with_pairs({"scheme.cfl_unchecked": "true"})
    return cfg


def _threads(args) -> int:
    if args.threads == "auto":
        return max(1, os.cpu_count() or 1)
    try:
        return max(1, int(args.threads))
    except ValueError:
        raise ConfigError(f"--threads expects an integer or 'auto', got {args.threads!r}")


def _print_report(report: StudyReport) -> None:
    print(f"study: {report.kind}")
    print(f"{'scale':>12} {'error':>14} {'iters_max':>10} {'seconds':>10}")
    for row in report.rows:
        print(f"{row.scale:12.6g} {row.error:14.6g} {row.iterations_max:10d} {row.seconds:10.2f}")
    if report.slope is not None:
        print(f"log-log slope: {report.slope:.4f} (rate {-report.slope:.4f}, "
              f"fit residual {report.residual:.3g})")
    for name, ok in (report.checks or {}).items():
        print(f"check {name}: {'pass' if ok else 'FAIL'}")
    for msg in report.warnings or []:
        print(f"warning: {msg}")


def _surface_invariant_checks(result) -> dict[str, bool]:
    surface = result.surface
    setup = result.setup
    tol = setup.params.picard_tol * setup.tgrid.num_steps
    x_probe = np.linspace(setup.xgrid.b1, setup.xgrid.b2, 7)
    term_ok = all(
        surface.value(setup.tgrid.T, float(x), p) == float(setup.payoff(x)) * p
        for x in x_probe
        for p in (0.0, 0.37, 1.0)
    )
    p0_ok = float(np.max(np.abs(surface.p0_rows))) <= tol
    p1_gap = 0.0
    bounds_ok = True
    for j, layer in surface.layers.items():
        vals, _ = surface.grid_values(j, [1.0])
        p1_gap = max(p1_gap, float(np.max(np.abs(vals[:, 0] - surface.superrep.values[j]))))
        for f in layer.fields:
            if f.values.min() < -1e-12 or f.values.max() > setup.payoff.bound * (1 + 1e-12):
                bounds_ok = False
    return {
        "terminal_surface_exact": term_ok,
        "p0_slice_zero": p0_ok,
        "p1_matches_superrep": p1_gap <= tol,
        "values_within_payoff_bound": bounds_ok,
    }


def _cmd_solve(args) -> int:
    cfg = _load_config(args)
    setup = cfg.build()
    result = run_solve(setup, threads=_threads(args))
    os.makedirs(args.out_dir, exist_ok=True)
    write_surface_csv(os.path.join(args.out_dir, "surface.csv"), result.surface, cfg.p_samples)
    checks = _surface_invariant_checks(result) if args.check else None
    write_metadata_json(
        os.path.join(args.out_dir, "meta.json"),
        setup,
        surface=result.surface,
        seconds=result.seconds,
        extra={"checks": checks} if checks else None,
    )
    for (t, x, p) in cfg.query_points:
        value, control = result.surface.value_and_argmin(t, x, p)
        label = "" if control is None else f"  argmin raw a = {control.raw:g}"
        print(f"v({t:g}, {x:g}, {p:g}) = {value:.6f}{label}")
    print(f"max Picard iterations per step: {result.surface.max_picard_iterations}")
    if checks is not None:
        for name, ok in checks.items():
            print(f"check {name}: {'pass' if ok else 'FAIL'}")
        if not all(checks.values()):
            return EXIT_CHECK
    return EXIT_OK


def _cmd_superrep(args) -> int:
    cfg = _load_config(args)
    setup = cfg.build()
    curve, seconds = run_superrep(setup)
    os.makedirs(args.out_dir, exist_ok=True)
    write_superrep_csv(os.path.join(args.out_dir, "superrep.csv"), curve)
    checks: dict[str, bool] = {}
    bound = setup.payoff.bound
    checks["values_within_payoff_bound"] = bool(
        curve.values.min() >= -1e-12 and curve.values.max() <= bound * (1 + 1e-12)
    )
    if cfg.driver == "linear" and cfg.payoff == "put":
        x0 = math.log(cfg.K)
        exact = driftless_put_price(x0, cfg.T, cfg.sigma, cfg.K)
        gap = abs(curve.value(0.0, x0) - exact)
        checks["matches_driftless_put_within_0.05"] = gap <= 0.05
        print(f"V(0, log K) = {curve.value(0.0, x0):.6f}  closed form {exact:.6f}  gap {gap:.4f}")
    write_metadata_json(
        os.path.join(args.out_dir, "meta.json"),
        setup,
        curve=curve,
        seconds=seconds,
        extra={"checks": checks},
    )
    for name, ok in checks.items():
        print(f"check {name}: {'pass' if ok else 'FAIL'}")
    if args.check and not all(checks.values()):
        return EXIT_CHECK
    return EXIT_OK


def _floats_arg(text: str) -> tuple[float, ...]:
    return tuple(float(s) for s in text.split(",") if s.strip())


def _cmd_study(args, kind: str) -> int:
    cfg = _load_config(args)
    threads = _threads(args)
    if kind == "converge-nonlinear":
        report = converge_nonlinear(cfg, deltas=_floats_arg(args.deltas), threads=threads)
    elif kind == "cfl-study":
        report = cfl_study(
            cfg,
            deltas=_floats_arg(args.deltas),
            violating_h=args.violating_h,
            hs=_floats_arg(args.hs),
            fixed_delta=args.fixed_delta,
            threads=threads,
        )
    else:
        report = converge_linear(
            cfg,
            ns=[int(x) for x in _floats_arg(args.ns)],
            threads=threads,
            mc_paths=args.mc_paths,
        )
    os.makedirs(args.out_dir, exist_ok=True)
    write_study_csv(os.path.join(args.out_dir, "study.csv"), report)
    with open(os.path.join(args.out_dir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "study": report.kind,
                "config": cfg.echo(),
                "rows": [
                    {
                        "scale": r.scale,
                        "error": r.error,
                        "iterations_max": r.iterations_max,
                        "seconds": r.seconds,
                        "extra": r.extra,
                    }
                    for r in report.rows
                ],
                "slope": report.slope,
                "residual": report.residual,
                "checks": report.checks,
                "warnings": report.warnings,
                "meta": report.meta,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    _print_report(report)
    if args.check and not report.passed:
        return EXIT_CHECK
    return EXIT_OK


def _cmd_reference(args) -> int:
    cfg = _load_config(args)
    base = cfg.with_pairs({"model.driver": "linear"})
    model = base.build_model()
    payoff = base.build_payoff()
    report = check_assumptions(model, payoff)
    print(f"assumption checks: {'pass' if report.ok else 'FAIL'} (upwind {report.upwind})")
    for (t, x, p) in cfg.query_points:
        price = linear_quantile_price(LinearQuantileProblem(model, payoff, t, x, p))
        print(f"reference v({t:g}, {x:g}, {p:g}) = {price:.8f}")
    x0 = math.log(cfg.K) if cfg.payoff == "put" else 0.0
    print(f"driftless put at log K: {driftless_put_price(x0, cfg.T, cfg.sigma, cfg.K):.8f}")
    validation = validate_reference(model, payoff, n_paths=args.mc_paths, seed=cfg.seed)
    print(
        f"oracle validation: {'pass' if validation.ok else 'FAIL'} "
        f"(max gap {validation.max_abs_gap:.3e}, {validation.max_gap_in_se:.2f} std errors)"
    )
    if args.check and not (validation.ok and report.ok):
        return EXIT_CHECK
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "superrep":
            return _cmd_superrep(args)
        if args.command == "reference":
            return _cmd_reference(args)
        return _cmd_study(args, args.command)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PicardNonConvergence, CflViolation) as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
