"""Closed-loop rollouts: decentralized protocols and their central twin.

``run_marl`` executes the decentralized protocol: every agent runs its own
copy of the learner on the *common* state vector (broadcast states where
available, recursive noise-free estimates elsewhere), applies its rows of
the joint certainty-equivalent gain, and — when its own system is private —
adds a local correction driving its true state toward the common estimate.

``run_sarl`` executes the central twin: one learner controlling the
auxiliary problem in which only broadcast systems keep their process noise.
With equal seeds the common trajectory of the decentralized run *is* the
central run, step for step; ``run_coupled`` runs both on shared noise and
learner streams and checks that equivalence — and the exact per-step cost
decomposition between the two — numerically.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .control import (
    GapQuantities,
    aux_average_cost,
    gap_quantities,
    optimal_average_cost,
    total_gap,
)
from .learners import LearnerConfig, make_learner, outputs_equal
from .model import (
    ConfigError,
    MultiAgentInstance,
    NoiseTrace,
    instantaneous_cost,
    step_system,
)
from .numerics import SeedStream, split_vector, vecc

AGENT_SEED_MODES = ("same", "arbitrary")


class AgreementError(RuntimeError):
    """Physically separate agents computed different plans.

    Raised when the shared-seed protocol's agreement invariant (equal
    samples, equal gains, equal common estimates at every step) breaks.
    """


def learner_stream(seed: int, agent: int | None = None, mode: str = "same") -> SeedStream:
    """The learner RNG stream for one agent (or the central learner).

    In ``same`` mode every agent — and the central twin — draws from the
    stream named ``"learner"``, which is what synchronizes their samples.
    In ``arbitrary`` mode each agent gets its own stream.
    """
    if mode not in AGENT_SEED_MODES:
        raise ConfigError(f"agent_seeds must be one of {AGENT_SEED_MODES}, got {mode!r}")
    if mode == "same" or agent is None:
        return SeedStream(seed, "learner")
    return SeedStream(seed, f"learner/agent{agent}")


@dataclass
class TrajectoryLog:
    """Everything one rollout produced, step-indexed.

    ``states``/``estimates`` have T+1 rows (time 0 through T); ``actions``,
    ``planned``, ``costs`` and the event flags have T rows.  ``planned`` is
    the joint certainty-equivalent action K·(common vector) before any
    private corrections; for a central run it equals ``actions``.
    ``baseline`` is the optimal long-run average cost the run is regret-
    measured against.
    """

    states: np.ndarray
    actions: np.ndarray
    planned: np.ndarray
    costs: np.ndarray
    estimates: np.ndarray
    epoch_flags: np.ndarray
    resamples: np.ndarray
    baseline: float

    @property
    def horizon(self) -> int:
        return int(self.costs.shape[0])

    @property
    def regret(self) -> np.ndarray:
        """Cumulative regret R(t) = Σ_{s<t} (c_s − J*); R(0) = 0, length T+1."""
        return np.concatenate([[0.0], np.cumsum(self.costs - self.baseline)])

    def error_norms(self) -> np.ndarray:
        """‖x_t − (common vector)_t‖₂ per step; zero on broadcast coordinates."""
        return np.linalg.norm(self.states - self.estimates, axis=1)

    def write_csv(self, path) -> None:
        """Per-step log: t, cost, regret_increment, e_norm, epoch_flag."""
        e = self.error_norms()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "cost", "regret_increment", "e_norm", "epoch_flag"])
            for t in range(self.horizon):
                writer.writerow([t, f"{self.costs[t]:.17g}",
                                 f"{self.costs[t] - self.baseline:.17g}",
                                 f"{e[t]:.17g}", int(self.epoch_flags[t])])


def _allocate(T: int, dx: int, du: int):
    return (np.empty((T + 1, dx)), np.empty((T, du)), np.empty((T, du)),
            np.empty(T), np.empty((T + 1, dx)),
            np.zeros(T, dtype=bool), np.zeros(T, dtype=np.int64))


def run_sarl(instance: MultiAgentInstance, horizon: int,
             learner: LearnerConfig | None = None, seed: int = 0,
             noise: NoiseTrace | None = None, stream: SeedStream | None = None,
             baseline: float | None = None) -> TrajectoryLog:
    """Central learner on the auxiliary problem (noise only where broadcast).

    The single agent observes the full state, so no corrections and no
    estimators are involved: u_t = K(θ̂_t)·x_t.  Pass ``noise``/``stream``
    to couple the run to a decentralized twin; by default both derive from
    ``seed`` exactly as the twin's would.
    """
    cfg = learner if learner is not None else LearnerConfig()
    T = int(horizon)
    if T < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    if noise is None:
        noise = NoiseTrace.generate(instance, T, seed, mask=instance.aux_noise_mask())
    if stream is None:
        stream = learner_stream(seed)
    if baseline is None:
        baseline = aux_average_cost(instance)
    agent = make_learner(cfg, instance, stream)
    dims_x, dims_u = instance.state_dims, instance.input_dims
    states, actions, planned, costs, estimates, flags, resamples = _allocate(
        T, instance.dx_total, instance.du_total)
    x_parts = [v.copy() for v in instance.x0]
    x = vecc(x_parts)
    states[0] = x
    estimates[0] = x
    prev_rejects = 0
    for t in range(T):
        agent.step(t, x)
        flags[t] = agent.last_event
        resamples[t] = agent.resample_total - prev_rejects
        prev_rejects = agent.resample_total
        u = agent.planned_action
        costs[t] = instantaneous_cost(instance.cost, x, u)
        actions[t] = u
        planned[t] = u
        us = split_vector(u, dims_u)
        x_parts = [step_system(s, x_parts[n], us[n], noise.arrays[n][t])
                   for n, s in enumerate(instance.systems)]
        x = vecc(x_parts)
        states[t + 1] = x
        estimates[t + 1] = x
    return TrajectoryLog(states=states, actions=actions, planned=planned,
                         costs=costs, estimates=estimates, epoch_flags=flags,
                         resamples=resamples, baseline=baseline)


def _private_corrections(instance: MultiAgentInstance) -> dict[int, GapQuantities]:
    """Local gain/error quantities for every private system (from true params)."""
    out = {}
    for n, s in enumerate(instance.systems):
        if not instance.info.shared(n):
            out[n] = gap_quantities(s, instance.cost.q_block(n), instance.cost.r_block(n))
    return out


def run_marl(instance: MultiAgentInstance, horizon: int,
             learner: LearnerConfig | None = None, seed: int = 0,
             agent_seeds: str = "same", noise: NoiseTrace | None = None,
             check_agreement: bool | None = None, baseline: float | None = None,
             estimator_fault=None) -> TrajectoryLog:
    """Decentralized rollout under the instance's information pattern.

    Every agent maintains its own learner and its own copy of every private
    estimate, so nothing is implicitly shared: with ``agent_seeds="same"``
    the copies provably coincide (checked bitwise each step unless
    ``check_agreement=False``), with ``"arbitrary"`` they genuinely diverge
    and the protocol runs on honestly different samples.

    ``estimator_fault(t, agent, estimates) -> estimates`` is a test hook
    applied to one agent's private estimates after each update.
    """
    scenario = instance.scenario
    if scenario == "marl1":
        raise ConfigError(
            "no decentralized learning protocol exists when nothing is broadcast; "
            "run the fixed-policy baselines on this instance instead"
        )
    cfg = learner if learner is not None else LearnerConfig()
    T = int(horizon)
    if T < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    if check_agreement is None:
        check_agreement = agent_seeds == "same"
    if noise is None:
        noise = NoiseTrace.generate(instance, T, seed)
    if baseline is None:
        baseline = optimal_average_cost(instance)
    N = instance.n_systems
    shared = instance.shared_mask()
    agents = [make_learner(cfg, instance, learner_stream(seed, m, agent_seeds))
              for m in range(N)]
    corrections = _private_corrections(instance)

    dims_u = instance.input_dims
    u_edges = np.concatenate([[0], np.cumsum(dims_u)])
    states, actions, planned, costs, estimates, flags, resamples = _allocate(
        T, instance.dx_total, instance.du_total)
    x_parts = [v.copy() for v in instance.x0]
    # est[m][n]: agent m's copy of the common estimate of system n's state.
    est = [[v.copy() for v in instance.x0] for _ in range(N)]
    states[0] = vecc(x_parts)
    estimates[0] = vecc(est[0])
    prev_rejects = 0

    for t in range(T):
        # Each agent assembles its common vector and advances its learner.
        outputs = []
        for m in range(N):
            v_m = vecc([x_parts[n] if shared[n] else est[m][n] for n in range(N)])
            outputs.append(agents[m].step(t, v_m))
        if check_agreement:
            ref = outputs[0]
            for m in range(1, N):
                if not outputs_equal(outputs[m], ref):
                    raise AgreementError(f"agents 1 and {m + 1} hold different samples at step {t}")
                if not np.array_equal(agents[m].bundle.K, agents[0].bundle.K):
                    raise AgreementError(f"agents 1 and {m + 1} hold different gains at step {t}")
                for n in range(N):
                    if not np.array_equal(est[m][n], est[0][n]):
                        raise AgreementError(
                            f"agents 1 and {m + 1} disagree on the estimate of system "
                            f"{n + 1} at step {t}")
        flags[t] = agents[0].last_event
        resamples[t] = agents[0].resample_total - prev_rejects
        prev_rejects = agents[0].resample_total

        # Executed actions: own rows of the joint plan, plus the local
        # correction for private systems (driven by the agent's own state,
        # which only that agent can see).
        u_parts = []
        for m in range(N):
            plan_m = agents[m].planned_action
            u_m = plan_m[u_edges[m]:u_edges[m + 1]]
            if not shared[m]:
                u_m = u_m + corrections[m].K @ (x_parts[m] - est[m][m])
            u_parts.append(u_m)
        x = vecc(x_parts)
        u = vecc(u_parts)
        costs[t] = instantaneous_cost(instance.cost, x, u)
        actions[t] = u
        planned[t] = agents[0].planned_action

        # True dynamics, then every agent's estimator update: broadcast
        # systems jump to the observed state, private systems follow the
        # noise-free model under the agent's own plan.
        new_parts = [step_system(s, x_parts[n], u_parts[n], noise.arrays[n][t])
                     for n, s in enumerate(instance.systems)]
        for m in range(N):
            plan_m = agents[m].planned_action
            for n in range(N):
                if shared[n]:
                    est[m][n] = new_parts[n].copy()
                else:
                    s = instance.systems[n]
                    est[m][n] = s.A @ est[m][n] + s.B @ plan_m[u_edges[n]:u_edges[n + 1]]
            if estimator_fault is not None:
                est[m] = list(estimator_fault(t, m, est[m]))
        x_parts = new_parts
        states[t + 1] = vecc(x_parts)
        estimates[t + 1] = vecc(est[0])

    return TrajectoryLog(states=states, actions=actions, planned=planned,
                         costs=costs, estimates=estimates, epoch_flags=flags,
                         resamples=resamples, baseline=baseline)


def _require_scenario(instance: MultiAgentInstance, expected: str) -> None:
    got = instance.scenario
    if got != expected:
        raise ConfigError(f"instance {instance.name!r} has pattern {got}, expected {expected}")


def run_marl_one_way(instance, horizon, learner=None, seed=0, **kw) -> TrajectoryLog:
    """Two systems, one unknown broadcaster and one known private follower."""
    _require_scenario(instance, "marl2")
    return run_marl(instance, horizon, learner=learner, seed=seed, **kw)


def run_marl_broadcast(instance, horizon, learner=None, seed=0, **kw) -> TrajectoryLog:
    """General mix: every system either unknown+broadcast or known+private."""
    _require_scenario(instance, "marl3")
    return run_marl(instance, horizon, learner=learner, seed=seed, **kw)


def run_marl_two_way(instance, horizon, learner=None, seed=0, **kw) -> TrajectoryLog:
    """All systems unknown and broadcast; coincides with the central run."""
    _require_scenario(instance, "marl4")
    return run_marl(instance, horizon, learner=learner, seed=seed, **kw)


@dataclass
class CouplingReport:
    """Numeric comparison of a decentralized run against its central twin.

    The checks, in order: the decentralized common trajectory and plan equal
    the central state/action trajectories; every per-step cost difference
    splits exactly into its quadratic-error part and a mixed zero-mean part;
    the tracking errors of private systems follow their local closed-loop
    recursion.  ``quad``/``cross`` are the two series of the decomposition;
    ``gap_rate`` is the stationary expectation of the quadratic part.
    """

    marl: TrajectoryLog
    sarl: TrajectoryLog
    state_gap: float
    plan_gap: float
    decomposition_residual: float
    recursion_residual: float
    quad: np.ndarray
    cross: np.ndarray
    gap_rate: float
    tolerance: float

    @property
    def failures(self) -> list[str]:
        out = []
        if not self.state_gap <= self.tolerance:
            out.append(f"common trajectory deviates from central twin by {self.state_gap:.3e}")
        if not self.plan_gap <= self.tolerance:
            out.append(f"common plan deviates from central twin by {self.plan_gap:.3e}")
        if not self.decomposition_residual <= self.tolerance:
            out.append(f"cost decomposition residual {self.decomposition_residual:.3e}")
        if not self.recursion_residual <= self.tolerance:
            out.append(f"error recursion residual {self.recursion_residual:.3e}")
        return out

    @property
    def ok(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        T = self.marl.horizon
        gap_T = self.marl.regret[-1] - self.sarl.regret[-1]
        lines = [
            f"coupled check over T={T} steps: {'PASS' if self.ok else 'FAIL'}",
            f"  max |common - central| state gap   {self.state_gap:.3e}",
            f"  max |common - central| plan gap    {self.plan_gap:.3e}",
            f"  cost decomposition residual        {self.decomposition_residual:.3e}"
            f"  (tolerance {self.tolerance:.1e})",
            f"  error recursion residual           {self.recursion_residual:.3e}",
            f"  quadratic error cost, mean/step    {float(np.mean(self.quad)):.6f}"
            f"  (stationary rate {self.gap_rate:.6f})",
            f"  mixed term, mean/step              {float(np.mean(self.cross)):.3e}"
            f"  (zero-mean; |sum|/√T = {abs(float(np.sum(self.cross))) / T ** 0.5:.3e})",
            f"  regret gap at T                    {gap_T:.3f}"
            f"  vs T x rate = {T * self.gap_rate:.3f}",
        ]
        lines.extend(f"  FAIL: {msg}" for msg in self.failures)
        return "\n".join(lines)


def run_coupled(instance: MultiAgentInstance, horizon: int,
                learner: LearnerConfig | None = None, seed: int = 0,
                tol: float = 1e-9, estimator_fault=None) -> CouplingReport:
    """Run the decentralized protocol and its central twin on shared draws.

    Both runs consume the same process noise (the twin sees it masked to
    broadcast systems, sharing the surviving arrays) and the same learner
    stream, which makes the trajectory identity exact up to float roundoff;
    the report quantifies that and the per-step cost decomposition.
    """
    T = int(horizon)
    noise_full = NoiseTrace.generate(instance, T, seed)
    noise_aux = noise_full.masked(instance.aux_noise_mask())
    marl = run_marl(instance, T, learner=learner, seed=seed, agent_seeds="same",
                    noise=noise_full, estimator_fault=estimator_fault)
    sarl = run_sarl(instance, T, learner=learner, seed=seed, noise=noise_aux,
                    stream=learner_stream(seed))

    state_scale = 1.0 + float(np.max(np.abs(sarl.states), initial=0.0))
    state_gap = float(np.max(np.abs(marl.estimates - sarl.states))) / state_scale
    plan_scale = 1.0 + float(np.max(np.abs(sarl.actions), initial=0.0))
    plan_gap = float(np.max(np.abs(marl.planned - sarl.actions))) / plan_scale

    # Exact per-step split of the cost difference.  With δx = x − x⋄ and
    # δu = u − u⋄:  c − c⋄ = (2x⋄ + δx)ᵀQδx + (2u⋄ + δu)ᵀRδu, identically.
    Q, R = instance.cost.Q, instance.cost.R
    dx = marl.states[:T] - sarl.states[:T]
    du = marl.actions - sarl.actions
    qx = dx @ Q
    ru = du @ R
    quad = np.einsum("ij,ij->i", dx, qx) + np.einsum("ij,ij->i", du, ru)
    cross = 2.0 * (np.einsum("ij,ij->i", sarl.states[:T], qx)
                   + np.einsum("ij,ij->i", sarl.actions, ru))
    diff = marl.costs - sarl.costs
    scale = 1.0 + np.abs(marl.costs) + np.abs(sarl.costs)
    decomposition_residual = float(np.max(np.abs(diff - quad - cross) / scale))

    # Private tracking errors follow e' = Ce + w with the local closed loop.
    recursion_residual = 0.0
    x_edges = np.concatenate([[0], np.cumsum(instance.state_dims)])
    err = marl.states - marl.estimates
    for n, gq in _private_corrections(instance).items():
        e_n = err[:, x_edges[n]:x_edges[n + 1]]
        w_n = noise_full.arrays[n]
        pred = e_n[:-1] @ gq.C.T + w_n
        defect = np.abs(e_n[1:] - pred) / (1.0 + np.abs(e_n[1:]))
        recursion_residual = max(recursion_residual, float(np.max(defect)))

    return CouplingReport(marl=marl, sarl=sarl, state_gap=state_gap,
                          plan_gap=plan_gap,
                          decomposition_residual=decomposition_residual,
                          recursion_residual=recursion_residual,
                          quad=quad, cross=cross, gap_rate=total_gap(instance),
                          tolerance=float(tol))
