"""
Command Line Interface
======================

    acbound family build|verify --config CONFIG --out DIR
    acbound ac run|fit          --config CONFIG --out DIR
    acbound oracle fano|fixedpoint|net-entropy [flags] --out DIR

Exit codes: 0 success, 1 failed verification, 2 usage or configuration error,
3 unexpected internal error. Every command writes manifest.json (status,
config echo, version, wall clock, sha256 of each output, stage timings) after
its outputs; an internal error leaves one with status "failed".
"""

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .bounds_calculus import (
    calibrate_comparator,
    erm_power_forms,
    fano_oracle_verify,
    random_fano_instance,
    sigma_comparator,
    sigma_n_t,
    sigma_n_t_grid,
)
from .classifiers import RuleClass, build_holder_net, epsilon_schedule, family_code_net, holder_net_entropy
from .config import ExperimentConfig, load_config
from .core_model import MarginSpec
from .errors import AcboundError, ConfigError, EnumerationTooLargeError, FamilyParameterError, RateFitError
from .lb_family import LowerBoundFamily, build_family, holder_q, maximal_separation_subset, verify_family
from .mc_engine import (
    ACEstimate,
    ClassifierSpec,
    fit_concentration_slope,
    fit_lambda_exponent,
    fit_n_rate,
    lambda_grid,
    mean_excess_by_n,
    run_ac,
)
from .observability import PerformanceMonitor, configure_logging, get_logger

logger = get_logger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2, 3

AC_HEADER = ["family_id", "sigma_index", "n", "lambda", "m", "exceed_count", "p_hat", "ci_lo", "ci_hi"]
MEAN_HEADER = ["family_id", "sigma_index", "n", "m", "mean_excess"]
RATES_HEADER = ["kind", "slope", "intercept", "r2", "n_points", "alpha", "r_prime"]


# ============================================================================
# Output helpers
# ============================================================================

def _format(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format(row.get(key)) for key in header])


def read_csv(path: Path) -> List[Dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def write_json(path: Path, payload: Dict[str, Any]) -> None:
    path.write_text(json.dumps(payload, indent=2, default=str) + "\n", encoding="utf-8")


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class RunContext:
    """Output directory, timings and manifest of one command"""

    # most recently opened context, for the failure manifest in main
    active: Optional["RunContext"] = None

    def __init__(self, command: str, out: Path, config: Optional[ExperimentConfig] = None):
        self.command = command
        self.out = out
        self.config = config
        self.outputs: List[Path] = []
        self.monitor = PerformanceMonitor()
        self.started = datetime.now()
        self.clock = time.perf_counter()
        out.mkdir(parents=True, exist_ok=True)
        RunContext.active = self

    def path(self, name: str) -> Path:
        target = self.out / name
        self.outputs.append(target)
        return target

    def write_manifest(self, status: str = "ok", error: Optional[str] = None) -> None:
        manifest = {
            "command": self.command,
            "status": status,
            "version": __version__,
            "started": self.started.isoformat(),
            "wall_clock_seconds": time.perf_counter() - self.clock,
            "config": self.config.echo() if self.config is not None else None,
            "outputs": {p.name: sha256_file(p) for p in self.outputs if p.exists()},
            "timings": self.monitor.get_all_stats(),
        }
        if error is not None:
            manifest["error"] = error
        tmp = self.out / "manifest.json.tmp"
        write_json(tmp, manifest)
        os.replace(tmp, self.out / "manifest.json")


# ============================================================================
# Family commands
# ============================================================================

def family_from_config(config: ExperimentConfig) -> LowerBoundFamily:
    fam = config.family
    q = fam.q
    if q is None:
        assert fam.holder is not None
        q = holder_q(fam.delta, fam.alpha, fam.holder.beta, fam.holder.c5)
    return build_family(
        d=fam.d,
        q=q,
        delta=fam.delta,
        alpha=fam.alpha,
        C=fam.C,
        c2=fam.c2,
        code_mode=fam.code_mode,
        min_hamming=fam.min_hamming,
        code_budget=fam.code_budget,
        code_seed=fam.code_seed,
    )


def cmd_family(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.set)
    ctx = RunContext(f"family {args.action}", Path(args.out), config)
    with ctx.monitor.timed("family build"):
        family = family_from_config(config)

    if args.action == "build":
        family.save(ctx.path("family.json"))
        ctx.write_manifest()
        print(f"family {family.family_id}: {family.code_count} codes, b = {family.b}")
        return EXIT_OK

    fam = config.family
    target = MarginSpec(family.alpha, fam.target_C_M) if fam.target_C_M is not None else None
    holder = {"beta": fam.holder.beta, "L": fam.holder.L} if fam.holder is not None else None
    with ctx.monitor.timed("family verify"):
        report = verify_family(family, target_margin=target, holder=holder)
    report.export_results(ctx.path("verify.json"))
    ctx.write_manifest()
    print(report.generate_report())
    return EXIT_OK if report.verdict else EXIT_FAILED


# ============================================================================
# AC commands
# ============================================================================

def classifier_for(config: ExperimentConfig, family: LowerBoundFamily, n: int) -> ClassifierSpec:
    section = config.classifier
    if section is None:
        raise ConfigError("missing classifier section", "classifier")
    if section.kind == "class_erm":
        return ClassifierSpec("class_erm", rules=RuleClass.cellwise(family))
    net = section.net
    assert net is not None
    if net.source == "codes":
        return ClassifierSpec("net_erm", net=family_code_net(family))
    if net.epsilon is not None:
        epsilon = net.epsilon
    else:
        assert net.schedule is not None
        epsilon = min(epsilon_schedule(n, family.alpha, net.schedule.r), 0.999)
    return ClassifierSpec("net_erm", net=build_holder_net(family.d, net.beta, net.L, epsilon, net.max_members))


def cmd_ac_run(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.set)
    if config.run is None:
        raise ConfigError("missing run section", "run")
    run = config.run
    ctx = RunContext("ac run", Path(args.out), config)
    with ctx.monitor.timed("family build"):
        family = family_from_config(config)
    grid = lambda_grid(
        run.lambda_.min, run.lambda_.max, run.lambda_.points, run.lambda_.scale, run.lambda_.unit, family
    )
    subset = maximal_separation_subset(family, run.sigma_subset_size)

    rows: List[Dict[str, Any]] = []
    mean_rows: List[Dict[str, Any]] = []
    for n in run.n_list:
        spec = classifier_for(config, family, n)
        estimate = run_ac(family, subset, spec, n, run.m, grid, run.master_seed, run.workers, ctx.monitor)
        rows.extend(estimate.rows())
        mean_rows.extend(estimate.mean_excess_rows())

    write_csv(ctx.path("ac_estimates.csv"), AC_HEADER, rows)
    write_csv(ctx.path("mean_excess.csv"), MEAN_HEADER, mean_rows)
    ctx.write_manifest()
    print(f"{len(rows)} estimates written to {ctx.out / 'ac_estimates.csv'}")
    return EXIT_OK


def cmd_ac_fit(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.set)
    out = Path(args.out)
    source = out / "ac_estimates.csv"
    if not source.exists():
        raise ConfigError("run `ac run` first", str(source))
    mean_path = out / "mean_excess.csv"
    estimates = ACEstimate.from_rows(read_csv(source), read_csv(mean_path) if mean_path.exists() else ())
    alpha = config.family.alpha
    r_prime = config.run.r_prime if config.run is not None else None

    ctx = RunContext("ac fit", out, config)
    fits: List[Dict[str, Any]] = []
    rates: List[Dict[str, Any]] = []
    skipped: List[Dict[str, Any]] = []

    def attempt(kind: str, n: Optional[int], build) -> None:
        try:
            fit = build()
        except RateFitError as exc:
            logger.warning("Fit skipped", kind=kind, reason=str(exc))
            skipped.append({"kind": kind, "n": n, "reason": str(exc)})
            return
        rates.append(fit.row())
        fits.append({"n": n, **fit.to_dict()})

    with ctx.monitor.timed("fits"):
        for est in estimates:
            attempt("lambda_exponent", est.n, lambda est=est: fit_lambda_exponent(est, alpha))
        if len(estimates) >= 3:
            attempt("concentration_slope", None, lambda: fit_concentration_slope(estimates, alpha))
        if r_prime is not None:
            attempt("n_rate", None, lambda: fit_n_rate(mean_excess_by_n(estimates), alpha, r_prime))
        else:
            skipped.append({"kind": "n_rate", "n": None, "reason": "run.r_prime not set"})

    write_csv(ctx.path("rates.csv"), RATES_HEADER, rates)
    write_json(ctx.path("fit.json"), {"fits": fits, "skipped": skipped})
    ctx.write_manifest()
    for fit in fits:
        print(f"{fit['kind']}: slope {fit['slope']:.6g}, r2 {fit['r2']:.4f}")
    return EXIT_OK if fits else EXIT_FAILED


# ============================================================================
# Oracle commands
# ============================================================================

def cmd_oracle_fano(args: argparse.Namespace) -> int:
    ctx = RunContext("oracle fano", Path(args.out))
    rng = np.random.default_rng(args.seed)
    instances = []
    with ctx.monitor.timed("fano oracle"):
        for index in range(args.instances):
            Q = random_fano_instance(rng, args.support, args.alternatives)
            result = fano_oracle_verify(Q)
            instances.append({"index": index, "support": args.support, "M": args.alternatives, **result.to_dict()})
    verdict = all(item["pass"] for item in instances)
    write_json(
        ctx.path("oracle.json"), {"oracle": "fano", "seed": args.seed, "verdict": verdict, "instances": instances}
    )
    ctx.write_manifest()
    failures = sum(not item["pass"] for item in instances)
    print(f"fano oracle: {len(instances)} instances, {failures} violations")
    return EXIT_OK if verdict else EXIT_FAILED


def cmd_oracle_fixedpoint(args: argparse.Namespace) -> int:
    ctx = RunContext("oracle fixedpoint", Path(args.out))
    points = []
    with ctx.monitor.timed("fixed points"):
        table: Dict[tuple, float] = {}
        for n in args.n:
            for t in args.t:
                D2, phi = erm_power_forms(n, args.kappa, args.rho, include_floor=not args.no_floor)
                bisected = sigma_n_t(D2, phi, t, n)
                scanned = sigma_n_t_grid(D2, phi, t, n)
                table[(n, t)] = bisected
                rel = abs(bisected - scanned) / bisected
                points.append(
                    {"n": n, "t": t, "bisection": bisected, "grid": scanned, "rel_diff": rel, "pass": rel <= 1e-4}
                )

        ns, ts = sorted(args.n), sorted(args.t)
        monotone_n = all(table[(a, t)] >= table[(b, t)] for t in ts for a, b in zip(ns, ns[1:]))
        monotone_t = all(table[(n, a)] <= table[(n, b)] for n in ns for a, b in zip(ts, ts[1:]))
        c7 = calibrate_comparator(list(table), args.kappa, args.rho, include_floor=not args.no_floor)
        for item in points:
            item["comparator"] = sigma_comparator(item["n"], item["t"], args.kappa, args.rho, c7)

    verdict = monotone_n and monotone_t and all(item["pass"] for item in points)
    payload = {
        "oracle": "fixedpoint",
        "kappa": args.kappa,
        "rho": args.rho,
        "c7": c7,
        "monotone_in_n": monotone_n,
        "monotone_in_t": monotone_t,
        "verdict": verdict,
        "points": points,
    }
    write_json(ctx.path("oracle.json"), payload)
    ctx.write_manifest()
    print(f"fixed point oracle: {len(points)} points, c7 = {c7:.6g}, verdict {'PASS' if verdict else 'FAIL'}")
    return EXIT_OK if verdict else EXIT_FAILED


def cmd_oracle_net_entropy(args: argparse.Namespace) -> int:
    ctx = RunContext("oracle net-entropy", Path(args.out))
    with ctx.monitor.timed("net entropy"):
        entropy = holder_net_entropy(args.d, args.beta, args.L, args.eps)
    expected = args.d / args.beta
    rel = abs(entropy.exponent - expected) / expected
    verdict = rel <= 0.3
    payload = {
        "oracle": "net-entropy",
        "d": args.d,
        "beta": args.beta,
        "L": args.L,
        "points": [{"epsilon": e, "log_cardinality": s} for e, s in zip(entropy.epsilons, entropy.log_sizes)],
        "exponent": entropy.exponent,
        "expected": expected,
        "rel_diff": rel,
        "verdict": verdict,
    }
    write_json(ctx.path("oracle.json"), payload)
    ctx.write_manifest()
    print(f"net entropy: measured exponent {entropy.exponent:.4f} against d/beta = {expected:.4f}")
    return EXIT_OK if verdict else EXIT_FAILED


# ============================================================================
# Parser
# ============================================================================

def _common(parser: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        parser.add_argument("--config", required=True, help="experiment JSON document")
        parser.add_argument("--set", action="append", default=[], metavar="PATH=VALUE", help="override a config field")
    parser.add_argument("--out", default=".", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acbound", description="Accuracy-confidence experiments")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--version", action="version", version=f"acbound {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    family = commands.add_parser("family", help="build or verify a lower-bound family")
    family.add_argument("action", choices=["build", "verify"])
    _common(family)
    family.set_defaults(handler=cmd_family)

    ac = commands.add_parser("ac", help="run or fit accuracy-confidence experiments")
    ac_actions = ac.add_subparsers(dest="action", required=True)
    ac_run = ac_actions.add_parser("run")
    _common(ac_run)
    ac_run.set_defaults(handler=cmd_ac_run)
    ac_fit = ac_actions.add_parser("fit")
    _common(ac_fit)
    ac_fit.set_defaults(handler=cmd_ac_fit)

    oracle = commands.add_parser("oracle", help="brute-force checks of the bounds")
    oracles = oracle.add_subparsers(dest="action", required=True)
    fano = oracles.add_parser("fano")
    fano.add_argument("--instances", type=int, default=50)
    fano.add_argument("--support", type=int, default=6)
    fano.add_argument("--alternatives", type=int, default=2, help="M, the number of alternatives")
    fano.add_argument("--seed", type=int, default=0)
    _common(fano, config=False)
    fano.set_defaults(handler=cmd_oracle_fano)

    fixed = oracles.add_parser("fixedpoint")
    fixed.add_argument("--n", type=int, nargs="+", default=[1000, 10000, 100000])
    fixed.add_argument("--t", type=float, nargs="+", default=[0.5, 1.0, 4.0])
    fixed.add_argument("--kappa", type=float, default=1.0)
    fixed.add_argument("--rho", type=float, default=0.5)
    fixed.add_argument("--no-floor", action="store_true", help="drop the n^(-1/(1+rho)) term of phi_n")
    _common(fixed, config=False)
    fixed.set_defaults(handler=cmd_oracle_fixedpoint)

    entropy = oracles.add_parser("net-entropy")
    entropy.add_argument("--beta", type=float, default=1.0)
    entropy.add_argument("--L", type=float, default=1.0)
    entropy.add_argument("--d", type=int, default=1)
    entropy.add_argument("--eps", type=float, nargs="+", default=[0.4, 0.2, 0.1, 0.05])
    _common(entropy, config=False)
    entropy.set_defaults(handler=cmd_oracle_net_entropy)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    configure_logging(args.log_level)

    RunContext.active = None
    try:
        return args.handler(args)
    except (ConfigError, FamilyParameterError, EnumerationTooLargeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AcboundError as exc:
        logger.error("Command failed", exc_info=True, command=args.command, error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        logger.error("Unexpected failure", exc_info=True, command=args.command, error=str(exc))
        print(f"internal error: {exc}", file=sys.stderr)
        if RunContext.active is not None:
            RunContext.active.write_manifest(status="failed", error=f"{type(exc).__name__}: {exc}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
