"""Problem instances: subsystem dynamics, quadratic cost, information patterns.

A :class:`MultiAgentInstance` bundles N linear subsystems
x'ⁿ = Aⁿxⁿ + Bⁿuⁿ + wⁿ, a joint quadratic cost xᵀQx + uᵀRu that may couple
the subsystems, per-system "parameters known?" flags, and per-system
"state broadcast?" flags.  Two builtin instances are provided: a two-system
benchmark used throughout the tests and demos, and a noiseless scalar
tracking instance on which no-communication policies provably incur linear
regret.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .numerics import (
    SeedStream,
    as_matrix,
    as_vector,
    block_diag,
    extract_blocks,
    is_psd,
    split_vector,
    symmetrize,
    vecc,
)
from .riccati import solve_dare, spectral_radius


class ConfigError(ValueError):
    """Malformed instance/config input (bad file, bad field, bad dims)."""


@dataclass(frozen=True)
class SystemParams:
    """One subsystem's dynamics pair (A, B)."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise ConfigError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ConfigError(f"A and B row counts differ: {A.shape} vs {B.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def dx(self) -> int:
        return self.A.shape[0]

    @property
    def du(self) -> int:
        return self.B.shape[1]

    @property
    def theta(self) -> np.ndarray:
        """Stacked parameter matrix [A, B], one row block per state."""
        return np.hstack([self.A, self.B])


@dataclass(frozen=True)
class CostSpec:
    """Joint quadratic cost xᵀQx + uᵀRu, partitioned per subsystem.

    Q must be symmetric PSD.  R must be symmetric PSD here; strict positive
    definiteness is demanded only where an inverse is actually formed
    (R + BᵀPB in the Riccati operator, per-block Rⁿⁿ in local solves), so
    instances whose joint R is singular but block-PD remain constructible.
    """

    Q: np.ndarray
    R: np.ndarray
    state_dims: tuple[int, ...]
    input_dims: tuple[int, ...]

    def __post_init__(self):
        Q = symmetrize(as_matrix(self.Q, "Q"))
        R = symmetrize(as_matrix(self.R, "R"))
        sd = tuple(int(d) for d in self.state_dims)
        ud = tuple(int(d) for d in self.input_dims)
        if Q.shape != (sum(sd), sum(sd)):
            raise ConfigError(f"Q shape {Q.shape} does not match state dims {sd}")
        if R.shape != (sum(ud), sum(ud)):
            raise ConfigError(f"R shape {R.shape} does not match input dims {ud}")
        if not is_psd(Q):
            raise ConfigError("Q must be positive semidefinite")
        if not is_psd(R):
            raise ConfigError("R must be positive semidefinite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "state_dims", sd)
        object.__setattr__(self, "input_dims", ud)

    def q_block(self, i: int, j: int | None = None) -> np.ndarray:
        j = i if j is None else j
        return extract_blocks(self.Q, self.state_dims)[i][j]

    def r_block(self, i: int, j: int | None = None) -> np.ndarray:
        j = i if j is None else j
        return extract_blocks(self.R, self.input_dims)[i][j]


@dataclass(frozen=True)
class InfoPattern:
    """Per-system binary broadcast flags: 1 = state shared with everyone."""

    gamma: tuple[int, ...]

    def __post_init__(self):
        g = tuple(int(v) for v in self.gamma)
        if any(v not in (0, 1) for v in g):
            raise ConfigError(f"gamma flags must be 0/1, got {g}")
        object.__setattr__(self, "gamma", g)

    def shared(self, n: int) -> bool:
        return self.gamma[n] == 1

    def __len__(self) -> int:
        return len(self.gamma)


SCENARIOS = ("marl1", "marl2", "marl3", "marl4")


def classify_scenario(known: tuple[bool, ...], gamma: tuple[int, ...]) -> str:
    """Map (known, shared) masks to a supported scenario name.

    Supported combinations: every system is either unknown+shared or
    known+unshared ("marl2" for the two-system one-way case, "marl3" for
    any other mix), all systems unknown+shared ("marl4", two-way), or all
    systems unknown+unshared ("marl1", no communication — baselines only,
    no learning loop exists for it).
    """
    n = len(known)
    if n != len(gamma) or n < 1:
        raise ConfigError("known/gamma masks must have equal nonzero length")
    unknown = [not k for k in known]
    shared = [g == 1 for g in gamma]
    if all(unknown) and not any(shared):
        return "marl1"
    if all(unknown) and all(shared):
        return "marl4"
    for i in range(n):
        if shared[i] != unknown[i]:
            raise ConfigError(
                "unsupported information pattern: each system must be unknown+shared "
                f"or known+unshared (system {i + 1}: known={known[i]}, gamma={gamma[i]})"
            )
    if not any(unknown) or not any(shared):
        raise ConfigError("need at least one unknown+shared system for a learning scenario")
    if n == 2 and unknown == [True, False]:
        return "marl2"
    return "marl3"


@dataclass(frozen=True)
class MultiAgentInstance:
    """Immutable problem instance shared by all runs that use it."""

    systems: tuple[SystemParams, ...]
    known: tuple[bool, ...]
    cost: CostSpec
    info: InfoPattern
    x0: tuple[np.ndarray, ...]
    noise: tuple[bool, ...] = None  # per-system: unit Gaussian (True) or none
    name: str = "custom"

    def __post_init__(self):
        systems = tuple(self.systems)
        n = len(systems)
        known = tuple(bool(k) for k in self.known)
        noise = self.noise if self.noise is not None else tuple(True for _ in systems)
        noise = tuple(bool(b) for b in noise)
        x0 = tuple(as_vector(v, "x0") for v in self.x0)
        if not (len(known) == len(self.info) == len(x0) == len(noise) == n):
            raise ConfigError("systems/known/gamma/x0/noise lengths disagree")
        sd = tuple(s.dx for s in systems)
        ud = tuple(s.du for s in systems)
        if self.cost.state_dims != sd or self.cost.input_dims != ud:
            raise ConfigError(
                f"cost partition {self.cost.state_dims}/{self.cost.input_dims} "
                f"does not match system dims {sd}/{ud}"
            )
        for i, v in enumerate(x0):
            if v.size != sd[i]:
                raise ConfigError(f"x0[{i}] has length {v.size}, expected {sd[i]}")
        classify_scenario(known, self.info.gamma)  # fail fast on unsupported patterns
        object.__setattr__(self, "systems", systems)
        object.__setattr__(self, "known", known)
        object.__setattr__(self, "noise", noise)
        object.__setattr__(self, "x0", x0)

    # -- structure ---------------------------------------------------------
    @property
    def n_systems(self) -> int:
        return len(self.systems)

    @property
    def state_dims(self) -> tuple[int, ...]:
        return self.cost.state_dims

    @property
    def input_dims(self) -> tuple[int, ...]:
        return self.cost.input_dims

    @property
    def dx_total(self) -> int:
        return sum(self.state_dims)

    @property
    def du_total(self) -> int:
        return sum(self.input_dims)

    @property
    def A(self) -> np.ndarray:
        return block_diag([s.A for s in self.systems])

    @property
    def B(self) -> np.ndarray:
        return block_diag([s.B for s in self.systems])

    @property
    def scenario(self) -> str:
        return classify_scenario(self.known, self.info.gamma)

    @property
    def x0_full(self) -> np.ndarray:
        return vecc(self.x0)

    def shared_mask(self) -> tuple[bool, ...]:
        return tuple(self.info.shared(n) for n in range(self.n_systems))

    def aux_noise_mask(self) -> tuple[bool, ...]:
        """Noise pattern of the auxiliary single-agent problem.

        The auxiliary problem keeps the noise of shared systems and zeroes
        the noise of unshared ones (their coordinates follow the recursive
        estimate, which has no innovation).
        """
        return tuple(s and w for s, w in zip(self.shared_mask(), self.noise))

    def certify(self, tol: float = 1e-12) -> None:
        """Assert the overall system is stabilizable/detectable, operationally.

        Solves the joint DARE and checks closed-loop stability; raises
        :class:`lqteam.riccati.StabilizationError` otherwise.
        """
        sol = solve_dare(self.cost.Q, self.cost.R, self.A, self.B, tol=tol)
        assert spectral_radius(self.A + self.B @ sol.K) < 1.0


@dataclass(frozen=True)
class NoiseTrace:
    """Pre-drawn per-system process noise, reproducible from (seed, names)."""

    arrays: tuple[np.ndarray, ...]  # each (T, dx_n); zeros where noise is off
    seed: int | None = None

    @property
    def horizon(self) -> int:
        return self.arrays[0].shape[0]

    @classmethod
    def generate(cls, instance: MultiAgentInstance, horizon: int, seed: int,
                 mask: tuple[bool, ...] | None = None) -> "NoiseTrace":
        """Draw the full noise trace from per-system named streams.

        The stream for system n is ``SeedStream(seed, "noise/system{n}")``,
        so regeneration with the same seed is bit-identical and a masked
        twin (e.g. the auxiliary problem's) shares the surviving arrays
        exactly.
        """
        mask = instance.noise if mask is None else mask
        arrays = []
        for n, sys_n in enumerate(instance.systems):
            if mask[n]:
                stream = SeedStream(seed, f"noise/system{n}")
                arrays.append(stream.standard_normal((horizon, sys_n.dx)))
            else:
                arrays.append(np.zeros((horizon, sys_n.dx)))
        return cls(arrays=tuple(arrays), seed=seed)

    def masked(self, mask: tuple[bool, ...]) -> "NoiseTrace":
        """Zero out systems excluded by the mask, sharing kept arrays."""
        arrays = tuple(a if m else np.zeros_like(a) for a, m in zip(self.arrays, mask))
        return NoiseTrace(arrays=arrays, seed=self.seed)


def step_system(params: SystemParams, x: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """One subsystem transition x' = Ax + Bu + w."""
    return params.A @ x + params.B @ u + w


def step_dynamics(instance: MultiAgentInstance, x: np.ndarray, u: np.ndarray,
                  w: np.ndarray) -> np.ndarray:
    """Joint transition, computed per subsystem and restacked.

    Per-block stepping is the definition; the equivalent joint-matrix form
    ``A x + B u + w`` agrees to round-off (tested), and per-block stepping
    is what keeps coupled twin simulations bit-identical.
    """
    x = as_vector(x, "x")
    u = as_vector(u, "u")
    w = as_vector(w, "w")
    if x.size != instance.dx_total or u.size != instance.du_total or w.size != instance.dx_total:
        raise ConfigError("state/input/noise dimensions do not match the instance")
    xs = split_vector(x, instance.state_dims)
    us = split_vector(u, instance.input_dims)
    ws = split_vector(w, instance.state_dims)
    return vecc([step_system(s, xs[n], us[n], ws[n]) for n, s in enumerate(instance.systems)])


def instantaneous_cost(cost: CostSpec, x: np.ndarray, u: np.ndarray) -> float:
    """Stage cost xᵀQx + uᵀRu."""
    x = as_vector(x, "x")
    u = as_vector(u, "u")
    if x.size != cost.Q.shape[0] or u.size != cost.R.shape[0]:
        raise ConfigError("state/input dimensions do not match the cost")
    return float(x @ cost.Q @ x + u @ cost.R @ u)


# --------------------------------------------------------------------------
# Builtin instances
# --------------------------------------------------------------------------

def make_benchmark_instance() -> MultiAgentInstance:
    """Two 3-dimensional systems, one-way sharing.

    System 1 (parameters unknown, state broadcast) has a slightly unstable
    tridiagonal A; system 2 (parameters known, state private) is an
    integrator.  Cost weights: Q = 1e-3·I₆, R = I₆.  Initial states zero.
    """
    A1 = np.array([[1.01, 0.01, 0.00],
                   [0.01, 1.01, 0.01],
                   [0.00, 0.01, 1.01]])
    eye3 = np.eye(3)
    systems = (SystemParams(A=A1, B=eye3), SystemParams(A=eye3, B=eye3))
    cost = CostSpec(Q=1e-3 * np.eye(6), R=np.eye(6), state_dims=(3, 3), input_dims=(3, 3))
    return MultiAgentInstance(
        systems=systems,
        known=(False, True),
        cost=cost,
        info=InfoPattern(gamma=(1, 0)),
        x0=(np.zeros(3), np.zeros(3)),
        noise=(True, True),
        name="appendix-j",
    )


def make_tracking_instance(a2: float = 0.5) -> MultiAgentInstance:
    """Noiseless scalar pair where agent 1 must track agent 2's free decay.

    x¹' = u¹ and x²' = a₂x², both starting at 1, with cost
    (x¹ − x²)² + (u¹ − 0.5u²)² and no state sharing.  The optimal average
    cost is 0 (play u¹ₜ = a₂^{t+1}, u²ₜ = 2a₂^{t+1}), but without seeing
    x² no agent-1 policy can track a₂ᵗ for every a₂, which forces regret
    linear in the horizon for any fixed no-communication policy.
    """
    a2 = float(a2)
    if not -1.0 < a2 < 1.0:
        raise ConfigError(f"a2 must lie in (-1, 1), got {a2}")
    systems = (
        SystemParams(A=np.zeros((1, 1)), B=np.ones((1, 1))),
        SystemParams(A=np.array([[a2]]), B=np.zeros((1, 1))),
    )
    Q = np.array([[1.0, -1.0], [-1.0, 1.0]])
    R = np.array([[1.0, -0.5], [-0.5, 0.25]])
    cost = CostSpec(Q=Q, R=R, state_dims=(1, 1), input_dims=(1, 1))
    return MultiAgentInstance(
        systems=systems,
        known=(False, False),
        cost=cost,
        info=InfoPattern(gamma=(0, 0)),
        x0=(np.ones(1), np.ones(1)),
        noise=(False, False),
        name="counterexample",
    )


BUILTIN_INSTANCES = {
    "appendix-j": make_benchmark_instance,
    "counterexample": make_tracking_instance,
}


def make_two_way_benchmark() -> MultiAgentInstance:
    """Benchmark variant with both systems unknown and both states shared."""
    base = make_benchmark_instance()
    return replace(base, known=(False, False), info=InfoPattern(gamma=(1, 1)),
                   name="appendix-j-two-way")


def make_four_system_benchmark() -> MultiAgentInstance:
    """Four-system variant: two unknown+shared, two known+unshared.

    Uses scaled-down copies of the benchmark blocks so the joint problem
    stays comfortably stabilizable.
    """
    A1 = np.array([[1.01, 0.01, 0.00],
                   [0.01, 1.01, 0.01],
                   [0.00, 0.01, 1.01]])
    eye3 = np.eye(3)
    stable = 0.9 * eye3
    systems = (
        SystemParams(A=A1, B=eye3),
        SystemParams(A=eye3, B=eye3),
        SystemParams(A=stable, B=eye3),
        SystemParams(A=0.5 * eye3, B=eye3),
    )
    cost = CostSpec(Q=1e-3 * np.eye(12), R=np.eye(12),
                    state_dims=(3, 3, 3, 3), input_dims=(3, 3, 3, 3))
    return MultiAgentInstance(
        systems=systems,
        known=(False, False, True, True),
        cost=cost,
        info=InfoPattern(gamma=(1, 1, 0, 0)),
        x0=tuple(np.zeros(3) for _ in range(4)),
        noise=(True, True, True, True),
        name="four-system",
    )


def random_instance(stream: SeedStream, n_systems: int = 2, max_dim: int = 3,
                    scenario: str = "marl2") -> MultiAgentInstance:
    """Draw a random stabilizable instance (used for property-style tests).

    Per-system A has entries scaled to a spectral radius in (0.3, 1.2) —
    possibly unstable but stabilizable since B is a full-row-rank square
    perturbation of the identity.  Q is block-structured PSD with strictly
    PD diagonal blocks plus a small symmetric coupling; R is block-diagonal
    PD.
    """
    dims = [int(stream.uniform(1, max_dim + 1, ())) for _ in range(n_systems)]
    systems = []
    for d in dims:
        while True:
            raw = stream.standard_normal((d, d))
            rho = spectral_radius(raw)
            if rho > 0.2:  # avoid blowing up entries when normalizing
                break
        target = float(stream.uniform(0.3, 1.2, ()))
        A = raw * (target / rho)
        B = np.eye(d) + 0.3 * stream.standard_normal((d, d))
        systems.append(SystemParams(A=A, B=B))
    dx = sum(dims)
    G = stream.standard_normal((dx, dx))
    Q = symmetrize(G @ G.T) / dx + 0.05 * np.eye(dx)
    # Damp the off-diagonal coupling so Q keeps PD diagonal blocks.
    blocks = extract_blocks(Q, dims)
    for i in range(n_systems):
        for j in range(n_systems):
            if i != j:
                blocks[i][j] = 0.25 * blocks[i][j]
    Q = symmetrize(np.block(blocks))
    if not is_psd(Q):
        Q = Q + (abs(float(np.linalg.eigvalsh(Q).min())) + 0.01) * np.eye(dx)
    R_blocks = []
    for d in dims:
        H = stream.standard_normal((d, d))
        R_blocks.append(symmetrize(H @ H.T) / d + 0.5 * np.eye(d))
    R = block_diag(R_blocks)
    cost = CostSpec(Q=Q, R=R, state_dims=tuple(dims), input_dims=tuple(dims))
    if scenario == "marl2":
        known = tuple([False] + [True] * (n_systems - 1))
        gamma = tuple([1] + [0] * (n_systems - 1))
    elif scenario == "marl4":
        known = tuple(False for _ in dims)
        gamma = tuple(1 for _ in dims)
    else:
        raise ConfigError(f"random_instance supports marl2/marl4, not {scenario!r}")
    return MultiAgentInstance(
        systems=tuple(systems),
        known=known,
        cost=cost,
        info=InfoPattern(gamma=gamma),
        x0=tuple(np.zeros(d) for d in dims),
        noise=tuple(True for _ in dims),
        name="random",
    )


# --------------------------------------------------------------------------
# Serialization (one canonical JSON layout)
# --------------------------------------------------------------------------

def instance_to_config(instance: MultiAgentInstance, horizon: int | None = None,
                       seed: int | None = None) -> dict:
    """Plain-dict config with nested row-major arrays."""
    cfg = {
        "systems": [
            {"A": s.A.tolist(), "B": s.B.tolist(), "known": bool(k)}
            for s, k in zip(instance.systems, instance.known)
        ],
        "Q": instance.cost.Q.tolist(),
        "R": instance.cost.R.tolist(),
        "gamma": list(instance.info.gamma),
        "x0": [v.tolist() for v in instance.x0],
        "noise": list(instance.noise),
    }
    if horizon is not None:
        cfg["T"] = int(horizon)
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


def _require(cfg: dict, key: str, path: str):
    if key not in cfg:
        raise ConfigError(f"missing field '{path}{key}'")
    return cfg[key]


def instance_from_config(cfg: dict) -> tuple[MultiAgentInstance, dict]:
    """Build an instance from a config dict; returns (instance, extras).

    Extras carries optional run fields (``T``, ``seed``) when present.
    """
    if not isinstance(cfg, dict):
        raise ConfigError(f"config root must be an object, got {type(cfg).__name__}")
    raw_systems = _require(cfg, "systems", "")
    if not isinstance(raw_systems, list) or not raw_systems:
        raise ConfigError("field 'systems' must be a nonempty array")
    systems, known = [], []
    for i, entry in enumerate(raw_systems):
        path = f"systems[{i}]."
        try:
            systems.append(SystemParams(A=_require(entry, "A", path),
                                        B=_require(entry, "B", path)))
        except ValueError as exc:
            raise ConfigError(f"bad matrix in 'systems[{i}]': {exc}") from exc
        known.append(bool(_require(entry, "known", path)))
    dims_x = tuple(s.dx for s in systems)
    dims_u = tuple(s.du for s in systems)
    try:
        cost = CostSpec(Q=_require(cfg, "Q", ""), R=_require(cfg, "R", ""),
                        state_dims=dims_x, input_dims=dims_u)
        info = InfoPattern(gamma=tuple(_require(cfg, "gamma", "")))
        x0_raw = _require(cfg, "x0", "")
        x0 = tuple(as_vector(v, f"x0[{i}]") for i, v in enumerate(x0_raw))
        noise = tuple(bool(b) for b in cfg.get("noise", [True] * len(systems)))
        instance = MultiAgentInstance(
            systems=tuple(systems), known=tuple(known), cost=cost, info=info,
            x0=x0, noise=noise, name=str(cfg.get("name", "custom")),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    extras = {k: cfg[k] for k in ("T", "seed") if k in cfg}
    return instance, extras


def save_instance(instance: MultiAgentInstance, path, horizon: int | None = None,
                  seed: int | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(instance_to_config(instance, horizon=horizon, seed=seed), fh, indent=2)
        fh.write("\n")


def load_instance(path) -> tuple[MultiAgentInstance, dict]:
    """Load an instance from a JSON file or resolve a builtin name."""
    name = str(path)
    if name in BUILTIN_INSTANCES:
        return BUILTIN_INSTANCES[name](), {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(
            f"no such instance file or builtin name: {name!r} "
            f"(builtins: {', '.join(sorted(BUILTIN_INSTANCES))})"
        ) from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{name}: invalid JSON at line {exc.lineno}, column {exc.colno}: "
                          f"{exc.msg}") from exc
    return instance_from_config(cfg)
