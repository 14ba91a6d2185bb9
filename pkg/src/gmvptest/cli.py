"""Command-line interface.

``gmvptest test``      run a test on a CSV return panel (exit 0 accept, 1 reject, 2 error)
``gmvptest power``     tabulate analytic or simulated power functions
``gmvptest simulate``  run a power or ROC experiment from a config file or a manifest
"""

from __future__ import annotations

import argparse
import json
import secrets
import sys
from pathlib import Path

from . import __version__
from .dense import (
    Reference,
    mahalanobis_test,
    power_mahalanobis_asymptotic,
    power_mahalanobis_exact,
    power_shrinkage_asymptotic,
    shrinkage_test,
)
from .errors import ConfigError, GmvpError, InputError
from .io import (
    RunManifest,
    SimulationPlan,
    load_config_file,
    parse_grid,
    plan_from_mapping,
    read_returns_csv,
    read_weights_csv,
    write_curve_csv,
    write_power_csv,
)
from .model import selection_matrix
from .simulation import (
    RngStream,
    empirical_power_shrinkage,
    empirical_power_singular_stochastic,
    empirical_power_stochastic,
    run_power_experiment,
    run_roc_experiment,
)
from .singular import (
    SingularTestConfig,
    Standardization,
    bonferroni_full_test,
    mahalanobis_test_singular,
    power_shrinkage_singular,
    power_singular_asymptotic,
    shrinkage_test_singular,
)

EXIT_ACCEPT = 0
EXIT_REJECT = 1
EXIT_ERROR = 2


def _parse_indices(text: str) -> list[int]:
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise InputError("--indices is empty")
    return out


# ---------------------------------------------------------------------------
# test
# ---------------------------------------------------------------------------


def _run_test(args: argparse.Namespace) -> int:
    returns = read_returns_csv(args.returns)
    r = read_weights_csv(args.weights, returns.p)
    n, p = returns.n, returns.p
    q = args.rank
    if q is not None and not 1 <= q <= p:
        raise InputError(f"--rank must lie in [1, p={p}]")
    singular = q is not None and (q < p or n <= p)
    if not singular and n <= p:
        raise InputError(
            f"n={n} <= p={p}: the sample covariance is singular; pass --rank q to use the singular tests"
        )
    if args.mode == "exact" and (singular or args.method != "mahalanobis"):
        raise InputError("an exact reference distribution exists only for the full-rank Mahalanobis test")
    mode = args.mode or ("exact" if args.method == "mahalanobis" and not singular else "asymptotic")

    if args.method == "bonferroni":
        qq = q if q is not None else p
        agg = bonferroni_full_test(returns, r, qq, args.alpha, args.block_size, args.standardization)
        lines = [
            f"method: bonferroni ({len(agg.blocks)} blocks, level {agg.block_alpha:.6g} each)",
            f"adjusted p-value: {agg.p_value:.6g}",
        ]
        for idx, out in zip(agg.block_indices, agg.blocks):
            lines.append(
                f"  block {idx[0]}-{idx[-1]}: statistic {out.statistic:.6g}, p-value {out.p_value:.6g}"
                f"{' (reject)' if out.reject else ''}"
            )
        lines.append(f"decision: {'reject' if agg.reject else 'do not reject'} H0 at alpha={args.alpha}")
        payload = {"method": "bonferroni", "singular": True, "q": qq, **agg.as_dict()}
        reject = agg.reject
    else:
        if args.method == "mahalanobis":
            if singular:
                idx = _parse_indices(args.indices) if args.indices else list(range(args.k or max(q - 1, 1)))
                cfg = SingularTestConfig(q, selection_matrix(p, idx), args.alpha, args.standardization)
                outcome = mahalanobis_test_singular(returns, cfg, r.weights[idx])
            else:
                ref = Reference.F_EXACT if mode == "exact" else Reference.NORMAL_ASYMPTOTIC
                outcome = mahalanobis_test(returns, r, args.alpha, ref)
        elif singular:
            outcome = shrinkage_test_singular(returns, r, q, args.alpha)
        else:
            outcome = shrinkage_test(returns, r, args.alpha)
        label = f"{'singular ' if singular else ''}{args.method}"
        lines = [
            f"method: {label} (n={n}, p={p}{f', q={q}' if singular else ''})",
            f"reference: {outcome.reference.value}",
            f"statistic: {outcome.statistic:.10g}",
            f"standardized: {outcome.standardized:.10g}",
            f"p-value: {outcome.p_value:.10g}",
            f"effect estimate: {outcome.effect_estimate:.10g}",
            f"decision: {'reject' if outcome.reject else 'do not reject'} H0 at alpha={args.alpha}",
        ]
        payload = {"method": args.method, "singular": singular, "q": q, "n": n, "p": p, **outcome.as_dict()}
        reject = outcome.reject
    print("\n".join(lines))
    if args.json:
        Path(args.json).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return EXIT_REJECT if reject else EXIT_ACCEPT


# ---------------------------------------------------------------------------
# power
# ---------------------------------------------------------------------------


def _power_rows(args: argparse.Namespace, seed: int) -> list[tuple[float, float, float | None, str]]:
    grid = parse_grid(args.grid)
    modes = [m.strip() for m in args.mode.split(",") if m.strip()]
    for m in modes:
        if m not in ("exact", "asymptotic", "empirical"):
            raise InputError(f"unknown mode {m!r}")
    p, n = args.p, args.n
    test = args.test
    singular = test.startswith("singular")
    q = args.q if args.q is not None else p
    k = args.k if args.k is not None else max(q - 1, 1)
    std = Standardization(args.standardization)
    rows = []
    for mode in modes:
        for i, effect in enumerate(grid):
            if effect < 0:
                raise InputError("effect sizes must be nonnegative")
            se = None
            if mode == "exact":
                if test != "mahalanobis":
                    raise InputError("exact power is available only for the full-rank Mahalanobis test")
                value = power_mahalanobis_exact(effect, p, n, args.alpha)
            elif mode == "asymptotic":
                if test == "mahalanobis":
                    value = power_mahalanobis_asymptotic(effect, p, n, args.alpha)
                elif test == "shrinkage":
                    value = power_shrinkage_asymptotic(effect, p, n, args.alpha)
                elif test == "singular-mahalanobis":
                    value = power_singular_asymptotic(effect, q, k, n, args.alpha, std)
                else:
                    value = power_shrinkage_singular(effect, q, n, args.alpha)
            else:
                stream = RngStream(seed, i)
                if test == "mahalanobis":
                    est = empirical_power_stochastic(effect, p, n, args.alpha, args.B, stream)
                elif test == "singular-mahalanobis":
                    est = empirical_power_singular_stochastic(effect, q, k, n, args.alpha, args.B, stream, std)
                else:
                    est = empirical_power_shrinkage(effect, q if singular else p, n, args.alpha, args.B, seed + i)
                value, se = est.estimate, est.std_error
            rows.append((effect, value, se, mode))
    return rows


def _run_power(args: argparse.Namespace) -> int:
    if args.p is None and args.test in ("mahalanobis", "shrinkage"):
        raise InputError("--p is required")
    if args.test.startswith("singular") and args.q is None:
        raise InputError("--q is required for the singular tests")
    if args.p is None:
        args.p = args.q
    seed = args.seed if args.seed is not None else secrets.randbits(63)
    rows = _power_rows(args, seed)
    if args.out:
        write_power_csv(rows, args.out)
        config = {k: v for k, v in vars(args).items() if k not in ("func", "out", "seed")}
        RunManifest.create("power", config, seed).write(Path(str(args.out) + ".manifest.json"))
    else:
        write_power_csv(rows, sys.stdout)
    return EXIT_ACCEPT


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _load_plan(path: Path, seed: int | None) -> SimulationPlan:
    if path.suffix.lower() == ".json":
        manifest = RunManifest.read(path)
        if manifest.command != "simulate":
            raise ConfigError(f"{path}: manifest belongs to command {manifest.command!r}")
        return plan_from_mapping(dict(manifest.config), path.parent, seed if seed is not None else manifest.master_seed)
    return load_config_file(path, seed)


def _run_simulate(args: argparse.Namespace) -> int:
    plan = _load_plan(Path(args.config), args.seed)
    out_dir = Path(args.out) if args.out else plan.directory or Path.cwd() / f"{Path(args.config).stem}_out"
    out_dir.mkdir(parents=True, exist_ok=True)
    runner = run_power_experiment if plan.kind == "power" else run_roc_experiment
    curves = runner(plan.experiment, workers=args.workers)
    for kind, curve in curves.items():
        target = out_dir / f"{kind.value}_{plan.kind}.csv"
        write_curve_csv(curve, target)
        print(f"wrote {target}")
    manifest = RunManifest.create("simulate", plan.canonical_config(), plan.experiment.seed)
    manifest.write(out_dir / "manifest.json")
    print(f"wrote {out_dir / 'manifest.json'} (seed {plan.experiment.seed})")
    return EXIT_ACCEPT


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmvptest", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="test H0: w_GMVP = r on a return panel")
    t.add_argument("returns", help="CSV with a header row, n rows x p columns")
    t.add_argument("weights", help="CSV with one row of p weights summing to 1")
    t.add_argument("--method", choices=["mahalanobis", "shrinkage", "bonferroni"], default="mahalanobis")
    t.add_argument("--mode", choices=["exact", "asymptotic"], default=None)
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--rank", type=int, default=None, help="known rank q of the covariance matrix")
    t.add_argument("--k", type=int, default=None, help="number of leading weights tested (singular path)")
    t.add_argument("--indices", default=None, help="comma list or ranges of tested weights, e.g. 0-9,12")
    t.add_argument("--block-size", type=int, default=None, help="block size for --method bonferroni")
    t.add_argument("--standardization", choices=[s.value for s in Standardization], default="general")
    t.add_argument("--json", default=None, help="write the outcome as JSON to this path")
    t.set_defaults(func=_run_test)

    pw = sub.add_parser("power", help="power function on an effect-size grid")
    pw.add_argument(
        "--test",
        choices=["mahalanobis", "shrinkage", "singular-mahalanobis", "singular-shrinkage"],
        default="mahalanobis",
    )
    pw.add_argument("--grid", required=True, help="start:stop:count or a comma list of effect sizes")
    pw.add_argument("--p", type=int, default=None)
    pw.add_argument("--n", type=int, required=True)
    pw.add_argument("--q", type=int, default=None)
    pw.add_argument("--k", type=int, default=None)
    pw.add_argument("--alpha", type=float, default=0.05)
    pw.add_argument("--mode", default="asymptotic", help="comma list of exact, asymptotic, empirical")
    pw.add_argument("--B", type=int, default=10_000)
    pw.add_argument("--seed", type=int, default=None)
    pw.add_argument("--standardization", choices=[s.value for s in Standardization], default="general")
    pw.add_argument("--out", default=None, help="CSV path (default: standard output)")
    pw.set_defaults(func=_run_power)

    sm = sub.add_parser("simulate", help="run a power or ROC experiment")
    sm.add_argument("config", help=".cfg experiment file or a manifest.json from an earlier run")
    sm.add_argument("--out", default=None, help="output directory")
    sm.add_argument("--seed", type=int, default=None, help="override the configured seed")
    sm.add_argument("--workers", type=int, default=None, help="worker processes (default GMVP_TEST_THREADS)")
    sm.set_defaults(func=_run_simulate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (GmvpError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
