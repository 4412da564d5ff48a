"""Command-line interface: run experiments, print constants, verify invariants.

Exit codes: 0 success, 1 usage or configuration error, 2 run-time failure
(partial traces are still flushed), 3 verification failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import load_config, with_sweep
from .errors import ConfigError, CsgdLabError, InvalidSpecError, RunHaltedError
from .runner import run_experiment, thread_budget
from . import theory, verify


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csgd-lab",
        description="Compressed SGD with Armijo step-size search and scaling",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a configured experiment across seeds")
    run_p.add_argument("config", help="experiment configuration file")

    sweep_p = sub.add_parser("sweep", help="run a config once per value of one parameter")
    sweep_p.add_argument("config")
    sweep_p.add_argument("--param", required=True, help="override target, e.g. armijo.scale_a")
    sweep_p.add_argument("--values", required=True, help="comma-separated values")

    theory_p = sub.add_parser("theory", help="print every closed-form convergence constant")
    theory_p.add_argument("--sigma", type=float, required=True)
    theory_p.add_argument("--gamma", type=float, required=True)
    theory_p.add_argument("--rho", type=float, default=0.8)
    theory_p.add_argument("--epsilon", type=float, default=None)
    theory_p.add_argument("--a", type=float, default=0.3)
    theory_p.add_argument("--alpha-max", type=float, default=0.1)
    theory_p.add_argument("--l-max", type=float, default=1.0)
    theory_p.add_argument("--l-mean", type=float, default=None)
    theory_p.add_argument("--mu-bar", type=float, default=0.0)
    theory_p.add_argument("--mu-max", type=float, default=None)
    theory_p.add_argument("--nu", type=float, default=1.0)
    theory_p.add_argument("--theta", type=float, default=1.0)
    theory_p.add_argument("--p", type=float, default=None)
    theory_p.add_argument("--r", type=float, default=None)
    theory_p.add_argument("--epsilon-nc", type=float, default=None)
    theory_p.add_argument("--p-nc", type=float, default=None)
    theory_p.add_argument("--r-nc", type=float, default=None)
    theory_p.add_argument(
        "--check", action="store_true",
        help="also run the split-program grid oracle and interior-split predicate checks",
    )

    verify_p = sub.add_parser("verify", help="run the full invariant suite")
    verify_p.add_argument("--quick", action="store_true", help="reduced sizes, same coverage")
    verify_p.add_argument(
        "--inject-fault", default=None, metavar="NAME",
        help="test-only failure mode (e.g. disable_scaling)",
    )
    return parser


def _print_outcomes(variants) -> None:
    for variant in variants:
        print(f"== {variant.label}")
        for outcome in variant.outcomes:
            drop = (
                outcome.final_loss / outcome.initial_loss
                if outcome.initial_loss not in (0.0,) else float("nan")
            )
            line = (
                f"  seed {outcome.seed:>4}  {outcome.status:<9}  rows {outcome.rows:>7}  "
                f"final {outcome.final_loss:.6e}  final/initial {drop:.3e}"
            )
            if outcome.halt_reason:
                line += f"  ({outcome.halt_reason})"
            print(line)
        print(f"  mean final loss {variant.mean_final_loss:.6e}")
        print(f"  aggregate {variant.aggregate_path}")
    if len(variants) == 2:
        a, b = variants
        if b.mean_final_loss > 0:
            print(
                f"final-loss ratio {a.label} / {b.label} = "
                f"{a.mean_final_loss / b.mean_final_loss:.6e}"
            )


def _cmd_run(args, override=None) -> int:
    try:
        config = load_config(args.config)
        if override is not None:
            param, values = override
            config = with_sweep(config, param, values)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    print(f"threads: {thread_budget()}")
    try:
        variants = run_experiment(config)
    except RunHaltedError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        outcome = getattr(exc, "partial_outcome", None)
        if outcome is not None:
            _print_outcomes([outcome])
        print("partial traces flushed", file=sys.stderr)
        return 2
    except CsgdLabError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 2
    _print_outcomes(variants)
    return 0


def _cmd_theory(args) -> int:
    try:
        inputs = theory.TheoryInputs(
            sigma=args.sigma, gamma=args.gamma, rho=args.rho, epsilon=args.epsilon,
            a=args.a, alpha_max=args.alpha_max, l_max=args.l_max, l_mean=args.l_mean,
            mu_bar=args.mu_bar, mu_max=args.mu_max, nu=args.nu, theta=args.theta,
            p=args.p, r=args.r, epsilon_nc=args.epsilon_nc, p_nc=args.p_nc, r_nc=args.r_nc,
        )
        report = theory.full_report(inputs)
    except (InvalidSpecError, CsgdLabError) as exc:
        print(f"invalid inputs: {exc}", file=sys.stderr)
        return 1
    width = max(len(name) for name, _ in report.rows())
    print(f"{'constant':<{width}}  value")
    for name, value in report.rows():
        print(f"{name:<{width}}  {value:.12g}")
    print(f"{'flags':<{width}}  {', '.join(report.flags) if report.flags else '(none)'}")
    print("# machine-readable")
    for name, value in report.rows():
        print(f"{name}={value!r}")
    print(f"flags={','.join(report.flags)}")
    if args.check:
        checks = [
            verify.check_split_program_oracle(),
            verify.check_split_consistency(),
            verify.check_interior_split_predicates(),
        ]
        failed = _print_checks(checks)
        return 3 if failed else 0
    return 0


def _print_checks(checks) -> int:
    failed = 0
    for check in checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"{status}  {check.name:<32} {check.detail}  [{check.seconds:.2f}s]")
        failed += 0 if check.passed else 1
    return failed


def _cmd_verify(args) -> int:
    results = verify.run_all(quick=args.quick, fault=args.inject_fault)
    failed = _print_checks(results)
    if failed:
        print(f"{failed} of {len(results)} checks failed", file=sys.stderr)
        return 3
    print(f"all {len(results)} checks passed")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "sweep":
        return _cmd_run(args, override=(args.param, args.values))
    if args.command == "theory":
        return _cmd_theory(args)
    if args.command == "verify":
        return _cmd_verify(args)
    return 1


if __name__ == "__main__":
    sys.exit(main())
