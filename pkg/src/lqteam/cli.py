"""Command-line interface.

Subcommands
-----------
solve-dare         joint Riccati solve + average-cost identity for an instance
simulate           one rollout (decentralized or central), CSV log, plot
experiment         Monte Carlo regret curves, or the coupled-gap study
coupled-check      decentralized vs central twin equivalence on shared draws
counterexample     worst-case regret of fixed policies on the tracking pair
verify-identities  average-cost identities on builtin and random instances

Exit codes: 0 success; 1 bad input (arguments, config files, dimensions);
2 assumption failure (no stabilizing solution, or the shared-seed agents
disagreed); 3 a checked identity or claimed bound failed numerically.

The ``LQTEAM_WORKERS`` environment variable sets the default process count
for ``experiment`` (serial when unset).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .control import (
    aux_average_cost,
    optimal_average_cost,
    synthesize_gains,
    total_gap,
)
from .experiments import (
    DEFAULT_DECAY_GRID,
    coupled_gap_study,
    counterexample_sweep,
    fit_growth_exponent,
    monte_carlo,
    plot_curve,
    plot_log,
    run_once,
)
from .learners import LearnerConfig
from .model import BUILTIN_INSTANCES, ConfigError, load_instance
from .riccati import StabilizationError, spectral_radius
from .simulation import AgreementError, run_coupled

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_ASSUMPTION = 2
EXIT_IDENTITY = 3


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage errors exit with the input-error code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _add_instance_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--instance", default="appendix-j", metavar="NAME_OR_PATH",
                   help="builtin instance name (%s) or JSON config path"
                        % "/".join(sorted(BUILTIN_INSTANCES)))


def _add_learner_args(p: argparse.ArgumentParser) -> None:
    group = p.add_argument_group("learner")
    group.add_argument("--learner", default="ts-frd", choices=LearnerConfig.KINDS,
                       help="sampler type (default: ts-frd)")
    group.add_argument("--eta", type=float, default=1.1,
                       help="epoch growth rate for ts-frd (default: 1.1)")
    group.add_argument("--g", type=float, default=2.0,
                       help="determinant growth trigger for ts-abbasi (default: 2)")
    group.add_argument("--v0-scale", type=float, default=1.0,
                       help="prior precision scale (default: 1)")
    group.add_argument("--mu0", type=float, default=0.0,
                       help="prior mean, broadcast over all entries (default: 0)")
    group.add_argument("--max-resample", type=int, default=100,
                       help="draws allowed per sample event before falling back")


def _learner_config(args) -> LearnerConfig:
    return LearnerConfig(kind=args.learner, eta=args.eta, g=args.g,
                         v0_scale=args.v0_scale, mu0=args.mu0,
                         max_resample=args.max_resample)


def _load(args, default_horizon: int):
    """Resolve instance plus horizon/seed (file fields, overridden by flags)."""
    instance, extras = load_instance(args.instance)
    horizon = args.horizon if args.horizon is not None else extras.get("T", default_horizon)
    seed = args.seed if args.seed is not None else extras.get("seed", 0)
    return instance, int(horizon), int(seed)


def _matrix_lines(name: str, M: np.ndarray) -> str:
    body = np.array2string(M, precision=6, suppress_small=True)
    return f"{name} =\n{body}"


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_solve_dare(args) -> int:
    instance, _, _ = _load(args, default_horizon=0)
    bundle = synthesize_gains(instance.systems, instance.cost, locals_too=False)
    A, B = instance.A, instance.B
    rho = spectral_radius(A + B @ bundle.K)
    print(f"instance {instance.name!r}: pattern {instance.scenario}, "
          f"{instance.n_systems} systems, state dim {instance.dx_total}")
    print(f"fixed point reached in {bundle.iterations} iterations; "
          f"closed-loop spectral radius {rho:.6f}")
    print(_matrix_lines("P", bundle.P))
    print(_matrix_lines("K", bundle.K))
    try:
        j = optimal_average_cost(instance)
        j_aux = aux_average_cost(instance, bundle=bundle)
        gap = total_gap(instance)
        print(f"average cost under this pattern  J  = {j:.12f}")
        print(f"fully-shared (auxiliary) cost    J° = {j_aux:.12f}")
        print(f"sum of private error rates          {gap:.12f}  "
              f"(identity residual {abs(j - j_aux - gap):.3e})")
    except StabilizationError as exc:
        print(f"note: per-system average-cost terms unavailable ({exc})")
    if args.out:
        payload = {
            "P": bundle.P.tolist(),
            "K": bundle.K.tolist(),
            "iterations": bundle.iterations,
            "spectral_radius": rho,
        }
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    instance, horizon, seed = _load(args, default_horizon=1000)
    cfg = _learner_config(args)
    log = run_once(instance, horizon, cfg, seed, algorithm=args.algorithm,
                   agent_seeds=args.agent_seeds)
    fit = fit_growth_exponent(log.regret)
    print(f"instance {instance.name!r} ({instance.scenario}), algorithm "
          f"{args.algorithm}, T={horizon}, seed={seed}")
    print(f"optimal average cost {log.baseline:.6f}; realized average "
          f"{float(np.mean(log.costs)):.6f}")
    print(f"final regret {log.regret[-1]:.3f}; samples drawn "
          f"{int(np.sum(log.epoch_flags))}, rejected draws {int(np.sum(log.resamples))}")
    print(fit.describe())
    if args.out:
        log.write_csv(args.out)
        print(f"wrote {args.out}")
    if args.plot:
        plot_log(log, args.plot, title=f"{instance.name}: {args.algorithm}, T={horizon}")
        print(f"wrote {args.plot}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    instance, horizon, seed = _load(args, default_horizon=2000)
    cfg = _learner_config(args)
    if args.coupled:
        report = coupled_gap_study(instance, horizon, learner=cfg,
                                   n_runs=args.runs, base_seed=seed,
                                   delta=args.delta, workers=args.workers)
        print(report.describe())
        if args.out:
            with open(args.out, "w", newline="", encoding="utf-8") as fh:
                fh.write("run,final_gap\n")
                for i, gap in enumerate(report.final_gaps):
                    fh.write(f"{i},{gap:.17g}\n")
            print(f"wrote {args.out}")
        if report.max_decomposition_residual > 1e-6:
            print("cost decomposition failed to close on at least one run",
                  file=sys.stderr)
            return EXIT_IDENTITY
        return EXIT_OK
    curve = monte_carlo(instance, horizon, learner=cfg, n_runs=args.runs,
                        base_seed=seed, algorithm=args.algorithm,
                        agent_seeds=args.agent_seeds,
                        keep_runs=bool(args.runs_out), workers=args.workers)
    fit = fit_growth_exponent(curve.mean)
    print(f"instance {instance.name!r} ({instance.scenario}), {args.runs} runs, "
          f"T={horizon}, algorithm {args.algorithm}")
    print(f"mean final regret {curve.mean[-1]:.3f} "
          f"[{curve.ci_low[-1]:.3f}, {curve.ci_high[-1]:.3f}]")
    print(fit.describe())
    if args.out:
        curve.write_csv(args.out)
        print(f"wrote {args.out}")
    if args.runs_out:
        curve.write_runs_csv(args.runs_out)
        print(f"wrote {args.runs_out}")
    if args.plot:
        plot_curve(curve, args.plot,
                   title=f"{instance.name}: {args.algorithm}, {args.runs} runs")
        print(f"wrote {args.plot}")
    return EXIT_OK


def cmd_coupled_check(args) -> int:
    instance, horizon, seed = _load(args, default_horizon=2000)
    cfg = _learner_config(args)
    report = run_coupled(instance, horizon, learner=cfg, seed=seed, tol=args.tol)
    print(report.summary())
    return EXIT_OK if report.ok else EXIT_IDENTITY


def cmd_counterexample(args) -> int:
    result = counterexample_sweep(horizon=args.horizon, grid=args.grid,
                                  threshold_frac=args.threshold_frac)
    print(result.describe())
    if result.all_exceed():
        print("every fixed policy suffers linear worst-case regret, as claimed")
        return EXIT_OK
    print("a policy beat the linear-regret bar — claim violated", file=sys.stderr)
    return EXIT_IDENTITY


def cmd_verify_identities(args) -> int:
    from .model import random_instance
    from .numerics import SeedStream

    rows = []

    def check(instance, label):
        bundle = synthesize_gains(instance.systems, instance.cost)
        j = optimal_average_cost(instance, bundle=bundle)
        j_aux = aux_average_cost(instance, bundle=bundle)
        gap = total_gap(instance)
        rows.append((label, j, j_aux, gap, abs(j - j_aux - gap)))

    instance, _, _ = _load(args, default_horizon=0)
    check(instance, instance.name)
    for i in range(args.samples):
        stream = SeedStream(args.seed if args.seed is not None else 0, f"verify/{i}")
        check(random_instance(stream), f"random[{i}]")
    print(f"{'instance':>12s} {'J':>14s} {'J aux':>14s} {'gap':>14s} {'residual':>10s}")
    worst = 0.0
    for label, j, j_aux, gap, resid in rows:
        worst = max(worst, resid)
        print(f"{label:>12s} {j:14.8f} {j_aux:14.8f} {gap:14.8f} {resid:10.2e}")
    print(f"worst residual {worst:.3e} (tolerance {args.tol:.1e})")
    if worst > args.tol:
        print("average-cost identity violated", file=sys.stderr)
        return EXIT_IDENTITY
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser assembly
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lqteam",
                     description="Decentralized adaptive LQ control: solvers, "
                                 "rollouts, and claim checks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve-dare", help="solve the joint Riccati equation")
    _add_instance_arg(p)
    p.add_argument("--horizon", type=int, default=None, help=argparse.SUPPRESS)
    p.add_argument("--seed", type=int, default=None, help=argparse.SUPPRESS)
    p.add_argument("--out", default=None, help="write P/K as JSON")
    p.set_defaults(func=cmd_solve_dare)

    p = sub.add_parser("simulate", help="run one rollout and log it")
    _add_instance_arg(p)
    p.add_argument("--horizon", type=int, default=None, help="steps (default: 1000)")
    p.add_argument("--seed", type=int, default=None, help="run seed (default: 0)")
    p.add_argument("--algorithm", default="marl", choices=("marl", "sarl"),
                   help="decentralized protocol or its central twin")
    p.add_argument("--agent-seeds", default="same", choices=("same", "arbitrary"),
                   help="share the learner stream across agents or not")
    _add_learner_args(p)
    p.add_argument("--out", default=None, help="write per-step CSV log")
    p.add_argument("--plot", default=None, help="write regret/error figure")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", help="Monte Carlo regret curves")
    _add_instance_arg(p)
    p.add_argument("--runs", type=int, default=20, help="number of runs (default: 20)")
    p.add_argument("--horizon", type=int, default=None, help="steps (default: 2000)")
    p.add_argument("--seed", type=int, default=None,
                   help="base seed; run i uses seed+i (default: 0)")
    p.add_argument("--algorithm", default="marl", choices=("marl", "sarl"))
    p.add_argument("--agent-seeds", default="same", choices=("same", "arbitrary"))
    p.add_argument("--workers", type=int, default=None,
                   help="parallel processes (default: LQTEAM_WORKERS env var, else 1)")
    p.add_argument("--coupled", action="store_true",
                   help="run the coupled twin-gap study instead of plain curves")
    p.add_argument("--delta", type=float, default=0.05,
                   help="envelope quantile for --coupled (default: 0.05)")
    _add_learner_args(p)
    p.add_argument("--out", default=None, help="write aggregate CSV")
    p.add_argument("--runs-out", default=None, help="write long-form per-run CSV")
    p.add_argument("--plot", default=None, help="write mean-curve figure")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("coupled-check",
                       help="check the decentralized/central equivalence numerically")
    _add_instance_arg(p)
    p.add_argument("--horizon", type=int, default=None, help="steps (default: 2000)")
    p.add_argument("--seed", type=int, default=None, help="run seed (default: 0)")
    p.add_argument("--tol", type=float, default=1e-9,
                   help="relative tolerance for every identity (default: 1e-9)")
    _add_learner_args(p)
    p.set_defaults(func=cmd_coupled_check)

    p = sub.add_parser("counterexample",
                       help="worst-case regret of fixed policies on the tracking pair")
    p.add_argument("--horizon", type=int, default=500)
    p.add_argument("--grid", type=float, nargs="+", default=list(DEFAULT_DECAY_GRID),
                   help="decay rates to sweep (each in (-1, 1))")
    p.add_argument("--threshold-frac", type=float, default=0.2,
                   help="linear-regret bar as a fraction of the horizon")
    p.set_defaults(func=cmd_counterexample)

    p = sub.add_parser("verify-identities",
                       help="average-cost identities on builtin and random instances")
    _add_instance_arg(p)
    p.add_argument("--samples", type=int, default=10,
                   help="extra random instances to check (default: 10)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int, default=None, help=argparse.SUPPRESS)
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_verify_identities)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"lqteam: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"lqteam: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except AgreementError as exc:
        print(f"lqteam: agreement breakdown: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except StabilizationError as exc:
        print(f"lqteam: stabilization failure: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION


if __name__ == "__main__":
    sys.exit(main())
