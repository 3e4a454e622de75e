"""Full-information optimal control for the multi-system LQ problem.

Given true parameters, the optimal stationary policy under partial state
sharing has two layers:

* a joint gain K from the DARE of the assembled system, applied to the
  vector of commonly-known quantities (broadcast states and recursive
  estimates of private ones), and
* per-system local correction gains K̃ⁿ from each private system's own
  DARE, applied to that system's estimation error xⁿ − x̂ⁿ.

The optimal average cost splits accordingly: shared systems contribute
tr([P]ₙₙ), private ones tr(P̃ⁿ), and the difference between the assembled
problem and its "noise only in shared coordinates" auxiliary twin equals
Σ tr(DⁿΣⁿ) over private systems — the quantity the learning analysis
revolves around.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CostSpec, InfoPattern, MultiAgentInstance, SystemParams
from .numerics import block_diag, diag_blocks, vecc
from .riccati import solve_dare, solve_lyapunov, spectral_radius


@dataclass(frozen=True)
class GainBundle:
    """Certified gains for an assembled multi-system problem.

    ``K_rows[n]`` is the row block of the joint gain producing system n's
    action.  ``P_local``/``K_local`` hold the per-system solutions used for
    private-state corrections; they are None when synthesized with
    ``locals_too=False`` (learning loops only need the joint gain for
    sampled parameters — corrections always use the true ones).
    """

    P: np.ndarray
    K: np.ndarray
    K_rows: tuple[np.ndarray, ...]
    P_local: tuple[np.ndarray, ...] | None
    K_local: tuple[np.ndarray, ...] | None
    iterations: int = 0

    def theta_key(self) -> bytes:
        """Byte identity of (P, K), usable for exact-equality checks."""
        return self.P.tobytes() + self.K.tobytes()


def synthesize_gains(systems, cost: CostSpec, tol: float = 1e-12,
                     max_iter: int = 10**6, locals_too: bool = True,
                     p0: np.ndarray | None = None) -> GainBundle:
    """Solve the joint and (optionally) per-system DAREs and certify them.

    Raises :class:`lqteam.riccati.StabilizationError` when any required
    fixed point fails to converge or yields an unstable closed loop.
    """
    systems = tuple(systems)
    A = block_diag([s.A for s in systems])
    B = block_diag([s.B for s in systems])
    joint = solve_dare(cost.Q, cost.R, A, B, tol=tol, max_iter=max_iter, p0=p0)
    input_dims = tuple(s.du for s in systems)
    edges = np.concatenate([[0], np.cumsum(input_dims)])
    K_rows = tuple(joint.K[edges[n]:edges[n + 1], :] for n in range(len(systems)))
    P_local = K_local = None
    if locals_too:
        locals_p, locals_k = [], []
        for n, s in enumerate(systems):
            sol = solve_dare(cost.q_block(n), cost.r_block(n), s.A, s.B,
                             tol=tol, max_iter=max_iter)
            locals_p.append(sol.P)
            locals_k.append(sol.K)
        P_local, K_local = tuple(locals_p), tuple(locals_k)
    return GainBundle(P=joint.P, K=joint.K, K_rows=K_rows,
                      P_local=P_local, K_local=K_local, iterations=joint.iterations)


@dataclass(frozen=True)
class EstimatorState:
    """Per-system common estimates x̂ⁿ (broadcast systems hold the true state)."""

    estimates: tuple[np.ndarray, ...]

    @classmethod
    def initial(cls, instance: MultiAgentInstance) -> "EstimatorState":
        """Start from the known initial states (so every x̂ⁿ₀ = xⁿ₀)."""
        return cls(estimates=tuple(np.array(v, dtype=float) for v in instance.x0))

    @property
    def full(self) -> np.ndarray:
        return vecc(self.estimates)


def update_estimator(est: EstimatorState, systems, K_rows, observed: dict,
                     info: InfoPattern) -> EstimatorState:
    """Advance the common estimates by one step.

    Broadcast systems (γⁿ=1) jump to their newly observed state, which must
    be supplied in ``observed[n]``; private systems follow the noise-free
    closed-loop model x̂ⁿ' = Aⁿx̂ⁿ + Bⁿ(Kⁿ·vecc(x̂)) driven by the current
    common vector.
    """
    common = est.full
    new = []
    for n, s in enumerate(systems):
        if info.shared(n):
            if n not in observed:
                raise ValueError(f"system {n} broadcasts its state but no observation given")
            new.append(np.array(observed[n], dtype=float))
        else:
            new.append(s.A @ est.estimates[n] + s.B @ (K_rows[n] @ common))
    return EstimatorState(estimates=tuple(new))


def optimal_action(bundle: GainBundle, agent: int, x_own: np.ndarray,
                   est: EstimatorState, info: InfoPattern) -> np.ndarray:
    """Agent's optimal action: joint gain on the common vector plus, for a
    private system, the local correction K̃ⁿ(xⁿ − x̂ⁿ)."""
    u = bundle.K_rows[agent] @ est.full
    if not info.shared(agent):
        if bundle.K_local is None:
            raise ValueError("bundle lacks local gains; synthesize with locals_too=True")
        u = u + bundle.K_local[agent] @ (np.asarray(x_own, dtype=float) - est.estimates[agent])
    return u


@dataclass(frozen=True)
class GapQuantities:
    """Error-cost quantities of one private system.

    K is the local certainty-equivalent gain (the correction a private agent
    applies to its own tracking error); D weights the estimation error in
    the stage cost; C is the local closed loop the error follows; Sigma is
    the stationary error covariance; and tr_d_sigma = tr(D·Σ) is the
    system's contribution to the optimal-cost gap between the assembled
    problem and its auxiliary twin.
    """

    K: np.ndarray
    D: np.ndarray
    C: np.ndarray
    Sigma: np.ndarray
    tr_d_sigma: float


def gap_quantities(system: SystemParams, Qnn: np.ndarray, Rnn: np.ndarray,
                   tol: float = 1e-12) -> GapQuantities:
    """Compute (D, C, Σ, trDΣ) for one private system from its local DARE."""
    sol = solve_dare(Qnn, Rnn, system.A, system.B, tol=tol)
    K_loc = sol.K
    C = system.A + system.B @ K_loc
    assert spectral_radius(C) < 1.0
    Sigma = solve_lyapunov(C, tol=tol)
    D = Qnn + K_loc.T @ Rnn @ K_loc
    return GapQuantities(K=K_loc, D=D, C=C, Sigma=Sigma,
                         tr_d_sigma=float(np.trace(D @ Sigma)))


def _block_trace_sum(P: np.ndarray, dims, mask) -> float:
    """Σₙ tr([P]ₙₙ) over systems selected by the mask."""
    blocks = diag_blocks(P, dims)
    return float(sum(np.trace(blocks[n]) for n in range(len(dims)) if mask[n]))


def optimal_average_cost(instance: MultiAgentInstance,
                         bundle: GainBundle | None = None,
                         tol: float = 1e-12) -> float:
    """Optimal long-run average cost under the instance's sharing pattern.

    J = Σₙ 1{noiseⁿ}·tr(γⁿ·[P]ₙₙ + (1−γⁿ)·P̃ⁿ).  Noiseless systems
    contribute nothing (their stationary error and state excitation both
    vanish).
    """
    if bundle is None:
        bundle = synthesize_gains(instance.systems, instance.cost, tol=tol)
    total = 0.0
    blocks = diag_blocks(bundle.P, instance.state_dims)
    for n in range(instance.n_systems):
        if not instance.noise[n]:
            continue
        if instance.info.shared(n):
            total += float(np.trace(blocks[n]))
        else:
            total += float(np.trace(bundle.P_local[n]))
    return total


def aux_average_cost(instance: MultiAgentInstance,
                     bundle: GainBundle | None = None,
                     tol: float = 1e-12) -> float:
    """Optimal average cost of the auxiliary problem (noise only where shared).

    J⋄ = Σ_{n shared, noisy} tr([P]ₙₙ) — the same joint P as the assembled
    problem, traced only over the coordinates that keep their noise.
    """
    if bundle is None:
        bundle = synthesize_gains(instance.systems, instance.cost, tol=tol,
                                  locals_too=False)
    return _block_trace_sum(bundle.P, instance.state_dims, instance.aux_noise_mask())


def total_gap(instance: MultiAgentInstance, tol: float = 1e-12) -> float:
    """Σ tr(DⁿΣⁿ) over private noisy systems — the J − J⋄ gap."""
    total = 0.0
    for n, s in enumerate(instance.systems):
        if instance.info.shared(n) or not instance.noise[n]:
            continue
        gq = gap_quantities(s, instance.cost.q_block(n), instance.cost.r_block(n), tol=tol)
        total += gq.tr_d_sigma
    return total
