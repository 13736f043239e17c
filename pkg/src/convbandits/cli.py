"""Command-line interface.

Subcommands: gen (synthetic environment artifact), prep (HetRec files into an
environment artifact), spanner (compute/verify on an artifact), run
(experiment from a JSON config), bounds (regret-bound curves CSV), check
(empirical concentration suites). Exit code 0 on success, nonzero with a
diagnostic on validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import __version__
from ._kernels import backend
from .bench import (
    ExperimentConfig,
    aggregate,
    check_confidence_coverage,
    check_norm_ceiling,
    export,
    regret_bound_conucb,
    regret_bound_mcr,
    regret_bound_spanner,
    resolve_environment,
    run_experiment,
)
from .env import Environment, SyntheticConfig, build_real_env, gen_synthetic, load_hetrec
from .spanner import compute_spanner, min_covariance_eigenvalue, verify_spanner


def _cmd_gen(args) -> int:
    cfg = SyntheticConfig(
        num_arms=args.arms,
        num_keyterms=args.keyterms,
        d=args.dim,
        num_users=args.users,
        nk_range=(args.nk_lo, args.nk_hi),
        noise_sigma=args.sigma,
        pool_size=args.pool_size,
        key_pool_size=args.key_pool_size,
        seed=args.seed,
    )
    env = gen_synthetic(cfg)
    if args.spanner:
        env = env.with_spanner(compute_spanner(env.keyterms, args.spanner_c))
    env.save(args.out)
    print(f"wrote environment artifact: {args.out} "
          f"({args.arms} arms, {args.keyterms} key-terms, d={args.dim})")
    return 0


def _cmd_prep(args) -> int:
    data = load_hetrec(args.data, args.source)
    env = build_real_env(
        data,
        num_arms=args.arms,
        num_users=args.users,
        max_tags_per_arm=args.max_tags_per_arm,
        d=args.dim,
        noise_sigma=args.sigma,
        pool_size=args.pool_size,
        key_pool_size=args.key_pool_size,
        seed=args.seed,
    )
    if args.spanner:
        env = env.with_spanner(compute_spanner(env.keyterms, args.spanner_c))
    env.save(args.out)
    print(f"wrote environment artifact: {args.out} "
          f"({args.arms} arms, {len(env.keyterms)} key-terms, d={args.dim})")
    return 0


def _cmd_spanner(args) -> int:
    env = Environment.load(args.env)
    span = compute_spanner(env.keyterms, args.c)
    ok, max_coeff = verify_spanner(span, env.keyterms, args.tol)
    min_eig = min_covariance_eigenvalue(span)
    print(f"spanner members: {list(span.member_ids)}")
    print(f"swaps: {span.swap_count}  max coefficient: {max_coeff:.6f}  "
          f"min eigenvalue: {min_eig:.6g}  verified: {ok}")
    if args.out:
        env.with_spanner(span).save(args.out)
        print(f"wrote environment artifact with spanner: {args.out}")
    if not ok:
        print("error: spanner verification failed", file=sys.stderr)
        return 1
    return 0


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "base_seed": args.seed})
    out_dir = args.out or cfg.out_dir
    if out_dir is None:
        print("error: no output directory (set --out or out_dir in the config)",
              file=sys.stderr)
        return 2
    env = resolve_environment(cfg)
    traces = run_experiment(cfg, env=env, threads=args.threads)
    paths = export(traces, out_dir, cfg=cfg, environment=env)
    for algo, (mean, _) in sorted(aggregate(traces).items()):
        print(f"{algo}: mean final regret {mean[-1]:.3f}")
    print(f"wrote {paths['regret_curves']}, {paths['summary']}, {paths['manifest']}")
    return 0


def _cmd_bounds(args) -> int:
    grid = np.unique(np.logspace(
        np.log10(args.t_min), np.log10(args.t_max), args.points
    ).astype(np.int64))
    span_curve = regret_bound_spanner(
        grid, args.rate, args.min_eig, args.beta, min(args.delta, 0.25), args.dim
    )
    mcr_curve = regret_bound_mcr(grid, args.rate, args.beta, args.delta, args.dim)
    conucb_curve = regret_bound_conucb(
        grid, args.rate, args.lam, args.beta, args.delta, args.dim
    )
    with open(args.out, "w") as fh:
        fh.write("T,bound_spanner,bound_mcr,bound_conucb\n")
        for i, t in enumerate(grid):
            fh.write(f"{t},{span_curve[i]!r},{mcr_curve[i]!r},{conucb_curve[i]!r}\n")
    print(f"wrote bound curves for {grid.size} horizons: {args.out}")
    return 0


def _cmd_check(args) -> int:
    failed = False
    report = {}
    if args.suite in ("coverage", "both"):
        cov = check_confidence_coverage(base_seed=args.seed)
        limit = 0.05 + 0.02
        ok = cov.rate <= limit
        failed |= not ok
        report["coverage"] = {
            "samples": cov.samples, "violations": cov.violations,
            "rate": cov.rate, "limit": limit, "pass": ok,
        }
        print(f"coverage: {cov.violations}/{cov.samples} violations "
              f"(rate {cov.rate:.4f}, limit {limit}) -> {'pass' if ok else 'FAIL'}")
    if args.suite in ("ceiling", "both"):
        ceil = check_norm_ceiling(base_seed=args.seed)
        ok = ceil.passes >= 9
        failed |= not ok
        report["ceiling"] = {
            "max_ratios": list(ceil.max_ratios), "burn_in": ceil.burn_in,
            "min_eig": ceil.min_eig, "passes": ceil.passes, "pass": ok,
        }
        print(f"ceiling: {ceil.passes}/10 seeds under the ceiling "
              f"(burn-in {ceil.burn_in:.0f}, min eig {ceil.min_eig:.4f}) "
              f"-> {'pass' if ok else 'FAIL'}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=1, sort_keys=True)
            fh.write("\n")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convbandits",
        description="Conversational bandit simulation and benchmark harness "
                    f"(v{__version__}, kernels: {backend()})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic environment artifact")
    p.add_argument("--arms", type=int, default=500)
    p.add_argument("--keyterms", type=int, default=100)
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--users", type=int, default=20)
    p.add_argument("--nk-lo", type=int, default=1)
    p.add_argument("--nk-hi", type=int, default=10)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--pool-size", type=int, default=20)
    p.add_argument("--key-pool-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spanner", action=argparse.BooleanOptionalAction, default=True,
                   help="embed a precomputed spanner in the artifact")
    p.add_argument("--spanner-c", type=float, default=1.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("prep", help="build an environment from HetRec tag files")
    p.add_argument("--data", required=True, help="tab-separated tagging file")
    p.add_argument("--source", choices=("lastfm", "movielens"), required=True)
    p.add_argument("--arms", type=int, default=2000)
    p.add_argument("--users", type=int, default=500)
    p.add_argument("--max-tags-per-arm", type=int, default=20)
    p.add_argument("--dim", type=int, default=50)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--pool-size", type=int, default=50)
    p.add_argument("--key-pool-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spanner", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--spanner-c", type=float, default=1.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_prep)

    p = sub.add_parser("spanner", help="compute and verify a spanner on an artifact")
    p.add_argument("--env", required=True)
    p.add_argument("--c", type=float, default=1.05)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out", default=None,
                   help="write the artifact back with the spanner embedded")
    p.set_defaults(func=_cmd_spanner)

    p = sub.add_parser("run", help="run an experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override base_seed")
    p.add_argument("--out", default=None, help="override the output directory")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("bounds", help="emit theoretical regret-bound curves")
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--rate", type=float, default=0.5)
    p.add_argument("--min-eig", type=float, default=0.1)
    p.add_argument("--lam", type=float, default=0.5)
    p.add_argument("--t-min", type=float, default=10.0)
    p.add_argument("--t-max", type=float, default=1e6)
    p.add_argument("--points", type=int, default=60)
    p.set_defaults(func=_cmd_bounds)

    p = sub.add_parser("check", help="empirical concentration check suites")
    p.add_argument("--suite", choices=("coverage", "ceiling", "both"), default="both")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", default=None, help="write a JSON report")
    p.set_defaults(func=_cmd_check)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
