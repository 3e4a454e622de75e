"""Monte Carlo studies, regret-growth fits, and the no-sharing lower bound.

Everything here is reproducible from a base seed: run i of an experiment
uses seed ``base_seed + i``, and every random quantity inside a run flows
through named substreams of that seed, so aggregation is independent of
execution order and a re-run is bit-identical.  Set the ``LQTEAM_WORKERS``
environment variable (or pass ``workers``) to fan runs out over processes.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .control import aux_average_cost, optimal_average_cost, total_gap
from .learners import LearnerConfig
from .model import ConfigError, MultiAgentInstance
from .numerics import SeedStream
from .simulation import TrajectoryLog, run_coupled, run_marl, run_sarl

WORKERS_ENV = "LQTEAM_WORKERS"
ALGORITHMS = ("marl", "sarl")


def _resolve_workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    return workers


def run_once(instance: MultiAgentInstance, horizon: int, learner: LearnerConfig,
             seed: int, algorithm: str = "marl", agent_seeds: str = "same",
             baseline: float | None = None) -> TrajectoryLog:
    """One rollout of the chosen algorithm (used as the Monte Carlo unit)."""
    if algorithm == "marl":
        return run_marl(instance, horizon, learner=learner, seed=seed,
                        agent_seeds=agent_seeds, baseline=baseline)
    if algorithm == "sarl":
        return run_sarl(instance, horizon, learner=learner, seed=seed,
                        baseline=baseline)
    raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {algorithm!r}")


def _regret_job(args) -> np.ndarray:
    instance, horizon, learner, seed, algorithm, agent_seeds, baseline = args
    log = run_once(instance, horizon, learner, seed, algorithm=algorithm,
                   agent_seeds=agent_seeds, baseline=baseline)
    return log.regret


@dataclass
class AggregateCurve:
    """Mean regret curve with a pointwise normal-approximation CI."""

    t: np.ndarray
    mean: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    n_runs: int
    level: float = 0.95
    per_run: np.ndarray | None = None  # (n_runs, T+1) when kept

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "mean_regret", "ci_low", "ci_high"])
            for i in range(self.t.size):
                writer.writerow([int(self.t[i]), f"{self.mean[i]:.17g}",
                                 f"{self.ci_low[i]:.17g}", f"{self.ci_high[i]:.17g}"])

    def write_runs_csv(self, path) -> None:
        """Long-form per-run regret (run, t, regret); requires kept runs."""
        if self.per_run is None:
            raise ConfigError("per-run curves were not kept; rerun with keep_runs=True")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["run", "t", "regret"])
            for r in range(self.per_run.shape[0]):
                for i in range(self.t.size):
                    writer.writerow([r, int(self.t[i]), f"{self.per_run[r, i]:.17g}"])


def aggregate_regret(curves: np.ndarray, level: float = 0.95,
                     keep_runs: bool = False) -> AggregateCurve:
    """Pointwise mean and CI over an (n_runs, T+1) stack of regret curves."""
    curves = np.asarray(curves, dtype=float)
    n, _ = curves.shape
    mean = curves.mean(axis=0)
    if n > 1:
        half = 1.959963984540054 * curves.std(axis=0, ddof=1) / math.sqrt(n)
    else:
        half = np.zeros_like(mean)
    return AggregateCurve(t=np.arange(curves.shape[1]), mean=mean,
                          ci_low=mean - half, ci_high=mean + half,
                          n_runs=n, level=level,
                          per_run=curves if keep_runs else None)


def monte_carlo(instance: MultiAgentInstance, horizon: int,
                learner: LearnerConfig | None = None, n_runs: int = 20,
                base_seed: int = 0, algorithm: str = "marl",
                agent_seeds: str = "same", keep_runs: bool = False,
                workers: int | None = None) -> AggregateCurve:
    """Independent rollouts over seeds base_seed, base_seed+1, ..."""
    learner = learner if learner is not None else LearnerConfig()
    if n_runs < 1:
        raise ConfigError(f"n_runs must be >= 1, got {n_runs}")
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {algorithm!r}")
    baseline = (optimal_average_cost(instance) if algorithm == "marl"
                else aux_average_cost(instance))
    jobs = [(instance, int(horizon), learner, base_seed + i, algorithm,
             agent_seeds, baseline) for i in range(n_runs)]
    workers = _resolve_workers(workers)
    if workers == 1 or n_runs == 1:
        curves = [_regret_job(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            curves = list(pool.map(_regret_job, jobs, chunksize=1))
    return aggregate_regret(np.stack(curves), keep_runs=keep_runs)


@dataclass
class FitReport:
    """Power-law fit R(t) ≈ coefficient · t^exponent over the tail window."""

    exponent: float
    coefficient: float
    t_lo: int
    t_hi: int
    rms_residual: float
    shifted: bool  # curve was shifted up to make the log defined

    def describe(self) -> str:
        note = " (curve shifted to positive)" if self.shifted else ""
        return (f"R(t) ~ {self.coefficient:.4g} * t^{self.exponent:.3f} on "
                f"t in [{self.t_lo}, {self.t_hi}], log-log rms {self.rms_residual:.3g}{note}")


def fit_growth_exponent(regret: np.ndarray, window: tuple[float, float] = (0.5, 1.0)) -> FitReport:
    """Least-squares slope of log R against log t over the tail of the curve.

    The window is given as fractions of the horizon; the fit starts no
    earlier than t=1.  Non-positive regret values (possible early on, since
    regret increments can be negative) are handled by shifting the whole
    window up by a hair above the minimum, flagged in the report.
    """
    regret = np.asarray(regret, dtype=float)
    T = regret.size - 1
    lo = max(1, int(math.floor(window[0] * T)))
    hi = max(lo + 1, int(math.ceil(window[1] * T)))
    t = np.arange(lo, hi + 1)
    values = regret[lo:hi + 1].copy()
    shifted = False
    low = float(values.min())
    if low <= 0.0:
        values += (-low) + 1e-9 * (1.0 + abs(low))
        shifted = True
    logt = np.log(t)
    logr = np.log(values)
    slope, intercept = np.polyfit(logt, logr, 1)
    resid = logr - (slope * logt + intercept)
    return FitReport(exponent=float(slope), coefficient=float(np.exp(intercept)),
                     t_lo=lo, t_hi=hi,
                     rms_residual=float(np.sqrt(np.mean(resid**2))), shifted=shifted)


# --------------------------------------------------------------------------
# Coupled-gap envelope study
# --------------------------------------------------------------------------

@dataclass
class EnvelopeReport:
    """Per-run regret-gap behaviour of coupled decentralized/central twins.

    Every run's cost-difference decomposition must close exactly (largest
    per-run residual in ``max_decomposition_residual``); the regret gap at
    the horizon, centered by T x gap_rate, is then summarized by the
    empirical envelope constant c = the ⌈(1−δ)n⌉-th order statistic of
    (gap − T·rate)/√T, so at least (1−δ)n runs sit inside c·√T by
    construction — the interesting output is how small c is.
    """

    horizon: int
    n_runs: int
    delta: float
    gap_rate: float
    final_gaps: np.ndarray          # (n,) R_dec(T) − R_cen(T)
    envelope_constant: float
    runs_within: int
    max_decomposition_residual: float
    max_state_gap: float

    def describe(self) -> str:
        T = self.horizon
        centered = self.final_gaps - T * self.gap_rate
        return "\n".join([
            f"coupled gap study: {self.n_runs} runs, T={T}, rate={self.gap_rate:.6f}",
            f"  decomposition residual (worst run)  {self.max_decomposition_residual:.3e}",
            f"  trajectory identity gap (worst run) {self.max_state_gap:.3e}",
            f"  mean final gap − T·rate             {float(np.mean(centered)):.3f}",
            f"  envelope constant c ({1 - self.delta:.0%} quantile) {self.envelope_constant:.4f}",
            f"  runs with gap ≤ T·rate + c·√T       {self.runs_within}/{self.n_runs}",
        ])


def _coupled_job(args) -> tuple[float, float, float]:
    instance, horizon, learner, seed, tol = args
    report = run_coupled(instance, horizon, learner=learner, seed=seed, tol=tol)
    final_gap = float(report.marl.regret[-1] - report.sarl.regret[-1])
    return final_gap, report.decomposition_residual, report.state_gap


def coupled_gap_study(instance: MultiAgentInstance, horizon: int,
                      learner: LearnerConfig | None = None, n_runs: int = 100,
                      base_seed: int = 0, delta: float = 0.05,
                      tol: float = 1e-9, workers: int | None = None) -> EnvelopeReport:
    """Monte Carlo over coupled twin runs; see :class:`EnvelopeReport`."""
    learner = learner if learner is not None else LearnerConfig()
    if not 0.0 < delta < 1.0:
        raise ConfigError(f"delta must lie in (0, 1), got {delta}")
    T = int(horizon)
    jobs = [(instance, T, learner, base_seed + i, tol) for i in range(n_runs)]
    workers = _resolve_workers(workers)
    if workers == 1 or n_runs == 1:
        results = [_coupled_job(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_coupled_job, jobs, chunksize=1))
    final_gaps = np.array([r[0] for r in results])
    rate = total_gap(instance)
    normalized = np.sort((final_gaps - T * rate) / math.sqrt(T))
    k = min(n_runs, int(math.ceil((1.0 - delta) * n_runs)))
    c = float(normalized[k - 1])
    within = int(np.sum(final_gaps <= T * rate + c * math.sqrt(T) + 1e-12))
    return EnvelopeReport(
        horizon=T, n_runs=n_runs, delta=delta, gap_rate=rate,
        final_gaps=final_gaps, envelope_constant=c, runs_within=within,
        max_decomposition_residual=float(max(r[1] for r in results)),
        max_state_gap=float(max(r[2] for r in results)),
    )


# --------------------------------------------------------------------------
# No-sharing lower bound: fixed policies on the tracking pair
# --------------------------------------------------------------------------

DEFAULT_DECAY_GRID = (-0.999, -0.99, -0.9, -0.6, -0.3, 0.0, 0.3, 0.6, 0.9, 0.99, 0.999)


def zero_policy(t: int) -> tuple[float, float]:
    """Both agents do nothing."""
    return 0.0, 0.0


class MismatchedTracker:
    """The pair of actions that would be optimal if the decay were ``a_guess``.

    Against the true decay a₂ these are u¹ₜ = â^{t+1}, u²ₜ = 2â^{t+1} — an
    honest certainty-equivalent policy committed to the wrong parameter.
    """

    def __init__(self, a_guess: float = 0.5):
        self.a_guess = float(a_guess)

    def __call__(self, t: int) -> tuple[float, float]:
        a = self.a_guess ** (t + 1)
        return a, 2.0 * a


class BoundedRandomPolicy:
    """Both actions i.i.d. uniform on [−scale, scale], seeded."""

    def __init__(self, seed: int = 0, scale: float = 1.0):
        self.seed = int(seed)
        self.scale = float(scale)
        self._stream = SeedStream(self.seed, "policy/tracking")

    def reset(self) -> None:
        self._stream = SeedStream(self.seed, "policy/tracking")

    def __call__(self, t: int) -> tuple[float, float]:
        draw = self._stream.uniform(-self.scale, self.scale, (2,))
        return float(draw[0]), float(draw[1])


def default_tracking_policies() -> dict:
    return {
        "zero": zero_policy,
        "mismatched-tracker": MismatchedTracker(0.5),
        "bounded-random": BoundedRandomPolicy(seed=0),
    }


def tracking_cost(a2: float, horizon: int, policy) -> float:
    """Total cost of a no-communication policy pair on the tracking instance.

    The instance is noiseless and the optimal total cost is 0, so the total
    cost *is* the regret.  The closed forms: x¹ evolves by u¹ alone and x²
    decays freely from 1, so cₜ = (x¹ₜ − a₂ᵗ)² + (u¹ₜ − u²ₜ/2)².
    """
    a2 = float(a2)
    if not -1.0 < a2 < 1.0:
        raise ConfigError(f"decay must lie in (-1, 1), got {a2}")
    if hasattr(policy, "reset"):
        policy.reset()
    x1 = 1.0
    x2 = 1.0
    total = 0.0
    for t in range(int(horizon)):
        u1, u2 = policy(t)
        total += (x1 - x2) ** 2 + (u1 - 0.5 * u2) ** 2
        x1 = u1
        x2 = a2 * x2
    return total


@dataclass
class SweepResult:
    """Worst-case tracking regret of fixed policies over a decay grid."""

    horizon: int
    grid: tuple[float, ...]
    totals: dict[str, np.ndarray]   # policy name -> per-grid total cost
    threshold: float                # linear-regret bar the worst case must clear

    def worst(self, name: str) -> tuple[float, float]:
        """(worst-case decay, worst-case regret) for one policy."""
        values = self.totals[name]
        i = int(np.argmax(values))
        return self.grid[i], float(values[i])

    def all_exceed(self) -> bool:
        return all(self.worst(name)[1] >= self.threshold for name in self.totals)

    def describe(self) -> str:
        lines = [f"no-sharing lower bound: T={self.horizon}, "
                 f"threshold {self.threshold:.1f} (= 0.2·T)"]
        for name in self.totals:
            a2, value = self.worst(name)
            verdict = "exceeds" if value >= self.threshold else "BELOW"
            lines.append(f"  {name:>20s}: worst-case regret {value:10.1f} "
                         f"at decay {a2:+.3f} — {verdict} threshold")
        return "\n".join(lines)


def counterexample_sweep(horizon: int = 500, policies: dict | None = None,
                         grid=DEFAULT_DECAY_GRID,
                         threshold_frac: float = 0.2) -> SweepResult:
    """Evaluate fixed no-communication policies across the decay grid.

    Every fixed policy pair must suffer total cost ≥ threshold_frac·T at
    *some* grid point — the point of the construction: without sharing, one
    policy cannot track every decay rate, so worst-case regret grows
    linearly with the horizon.
    """
    policies = policies if policies is not None else default_tracking_policies()
    grid = tuple(float(a) for a in grid)
    totals = {
        name: np.array([tracking_cost(a2, horizon, policy) for a2 in grid])
        for name, policy in policies.items()
    }
    return SweepResult(horizon=int(horizon), grid=grid, totals=totals,
                       threshold=threshold_frac * float(horizon))


# --------------------------------------------------------------------------
# Plots (optional matplotlib)
# --------------------------------------------------------------------------

def plot_curve(curve: AggregateCurve, path, title: str = "mean regret",
               reference_sqrt: bool = True) -> None:
    """Save a mean-regret plot with its CI band (and a √t guide) to a file."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(curve.t, curve.mean, label=f"mean over {curve.n_runs} runs")
    ax.fill_between(curve.t, curve.ci_low, curve.ci_high, alpha=0.25,
                    label=f"{curve.level:.0%} CI")
    if reference_sqrt and curve.t.size > 1 and curve.mean[-1] > 0:
        guide = curve.mean[-1] / math.sqrt(curve.t[-1]) * np.sqrt(curve.t)
        ax.plot(curve.t, guide, "--", linewidth=1.0, label="∝ √t")
    ax.set_xlabel("t")
    ax.set_ylabel("regret")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_log(log: TrajectoryLog, path, title: str = "single run") -> None:
    """Save one run's regret curve and per-step error norm to a file."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(log.regret)
    ax1.set_ylabel("regret")
    ax1.set_title(title)
    ax2.plot(log.error_norms(), linewidth=0.8)
    ax2.set_ylabel("‖x − estimate‖")
    ax2.set_xlabel("t")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
