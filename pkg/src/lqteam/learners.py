"""Self-contained adaptive learners for the auxiliary single-agent problem.

A learner is fed ``(t, x)`` once per step and returns per-system parameter
estimates; internally it keeps the regression state, decides when to draw a
fresh Thompson sample, certifies the sample (the assembled closed loop must
admit a converged Riccati fixed point), and records the executed action for
the next regression pair.  All randomness flows through the learner's own
:class:`~lqteam.numerics.SeedStream`, so two learners built with equal
seeds and fed equal inputs produce byte-identical outputs — the property
that lets physically separate agents run the same learner as a coordination
device without communicating.

Two samplers are provided:

* ``ts-frd``  — resamples on the deterministic schedule t = ⌊η^m⌋;
* ``ts-abbasi`` — resamples when det(V) grows by a factor g since the last
  sample;

plus ``exact``, a degenerate learner that always returns the true
parameters (certainty equivalence with the truth — the optimal-policy
baseline).
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .control import GainBundle, synthesize_gains
from .model import ConfigError, CostSpec, MultiAgentInstance, SystemParams
from .numerics import SeedStream, as_matrix, matrix_normal_sample, symmetrize
from .riccati import StabilizationError


@dataclass(frozen=True)
class LearnerOutput:
    """Per-system parameter estimates emitted by one learner step."""

    theta: tuple[SystemParams, ...]


def outputs_equal(a: LearnerOutput, b: LearnerOutput) -> bool:
    """Exact (bitwise) equality of two outputs' estimate matrices."""
    if len(a.theta) != len(b.theta):
        return False
    return all(
        np.array_equal(sa.A, sb.A) and np.array_equal(sa.B, sb.B)
        for sa, sb in zip(a.theta, b.theta)
    )


@dataclass(frozen=True)
class LearnerConfig:
    """Learner hyperparameters; ``kind`` selects the sampler."""

    kind: str = "ts-frd"
    eta: float = 1.1
    g: float = 2.0
    v0_scale: float = 1.0
    mu0: float = 0.0
    max_resample: int = 100

    KINDS = ("ts-frd", "ts-abbasi", "exact")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown learner type {self.kind!r}; pick one of {self.KINDS}")
        if self.eta <= 1.0:
            raise ConfigError(f"eta must exceed 1, got {self.eta}")
        if self.g <= 1.0:
            raise ConfigError(f"g must exceed 1, got {self.g}")
        if self.v0_scale <= 0.0:
            raise ConfigError(f"v0_scale must be positive, got {self.v0_scale}")
        if self.max_resample < 0:
            raise ConfigError("max_resample must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "LearnerConfig":
        """Build from the external config keys (``type``, ``eta``, ...)."""
        known = {"type", "eta", "g", "v0_scale", "mu0", "max_resample"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown learner config keys: {sorted(extra)}")
        kwargs = {}
        if "type" in d:
            kwargs["kind"] = str(d["type"])
        for key in ("eta", "g", "v0_scale", "mu0"):
            if key in d:
                kwargs[key] = float(d[key])
        if "max_resample" in d:
            kwargs["max_resample"] = int(d["max_resample"])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {"type": self.kind, "eta": self.eta, "g": self.g,
                "v0_scale": self.v0_scale, "mu0": self.mu0,
                "max_resample": self.max_resample}


def partition_theta(theta_hat: np.ndarray, state_dims, input_dims) -> tuple[SystemParams, ...]:
    """Extract per-system [Aⁿ, Bⁿ] diagonal blocks from a stacked estimate.

    The stacked estimate has one row block per system and columns laid out
    as [all states | all actions], each in system order; cross blocks are
    discarded.
    """
    theta_hat = as_matrix(theta_hat, "theta_hat")
    p = sum(state_dims)
    q = p + sum(input_dims)
    if theta_hat.shape != (p, q):
        raise ConfigError(f"theta_hat shape {theta_hat.shape} != ({p}, {q})")
    out = []
    row = col_x = 0
    col_u = p
    for dx, du in zip(state_dims, input_dims):
        A = theta_hat[row:row + dx, col_x:col_x + dx].copy()
        B = theta_hat[row:row + dx, col_u:col_u + du].copy()
        out.append(SystemParams(A=A, B=B))
        row += dx
        col_x += dx
        col_u += du
    return tuple(out)


def regularized_ls(history, V0, mu0) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise regularized least squares over (z, x_next) pairs.

    Returns (μ, V) with V = V₀ + Σ zzᵀ and μ = (μ₀V₀ + Σ x'zᵀ)V⁻¹, so the
    no-data case returns (μ₀, V₀) and the sampler is always well posed.
    """
    V0 = as_matrix(V0, "V0")
    mu0 = as_matrix(mu0, "mu0")
    V = V0.copy()
    S = mu0 @ V0
    for z, x_next in history:
        z = np.asarray(z, dtype=float).ravel()
        x_next = np.asarray(x_next, dtype=float).ravel()
        V += np.outer(z, z)
        S += np.outer(x_next, z)
    V = symmetrize(V)
    mu = np.linalg.solve(V, S.T).T
    return mu, V


def stabilize_or_fallback(candidate, certify, resample, previous, max_resample: int):
    """Certify a sampled estimate, resampling on failure, falling back last.

    Parameters
    ----------
    candidate : matrix
        First stacked estimate to try.
    certify : callable
        ``theta_hat -> (LearnerOutput, GainBundle)``; raises
        :class:`~lqteam.riccati.StabilizationError` to reject.
    resample : callable
        Draws a fresh stacked estimate from the learner's stream.
    previous : (LearnerOutput, GainBundle) or None
        Last certified result, reused when every draw fails.
    max_resample : int
        Extra draws allowed after the first candidate.

    Returns
    -------
    (output, bundle, resamples_used)
    """
    theta = candidate
    for attempt in range(max_resample + 1):
        try:
            output, bundle = certify(theta)
            return output, bundle, attempt
        except StabilizationError:
            if attempt == max_resample:
                break
            theta = resample()
    if previous is not None and previous[0] is not None:
        return previous[0], previous[1], max_resample + 1
    raise ConfigError(
        "no stabilizable estimate found and no previous one to fall back to; "
        "the prior (mu0, v0_scale) is pathological for this instance"
    )


# Joint-gain synthesis memo: pure function of (systems, cost, tol), so a
# shared cache only saves repeated solves (twin learners fed equal inputs
# request identical keys).  Failures are cached too.
_GAIN_CACHE: OrderedDict[bytes, GainBundle | None] = OrderedDict()
_GAIN_CACHE_LIMIT = 1024


def _cache_key(systems, cost: CostSpec, tol: float) -> bytes:
    parts = [np.float64(tol).tobytes(), cost.Q.tobytes(), cost.R.tobytes()]
    parts += [s.A.tobytes() + s.B.tobytes() for s in systems]
    return b"".join(parts)


def _synthesize_joint(systems, cost: CostSpec, tol: float, p0) -> GainBundle:
    key = _cache_key(systems, cost, tol)
    if key in _GAIN_CACHE:
        hit = _GAIN_CACHE[key]
        if hit is None:
            raise StabilizationError("candidate previously rejected")
        return hit
    try:
        bundle = synthesize_gains(systems, cost, tol=tol, locals_too=False, p0=p0)
    except StabilizationError:
        _GAIN_CACHE[key] = None
        _trim_cache()
        raise
    _GAIN_CACHE[key] = bundle
    _trim_cache()
    return bundle


def _trim_cache():
    while len(_GAIN_CACHE) > _GAIN_CACHE_LIMIT:
        _GAIN_CACHE.popitem(last=False)


class EpochSchedule:
    """Strictly increasing resample times t = ⌊η^m⌋ with duplicates collapsed."""

    def __init__(self, eta: float):
        if eta <= 1.0:
            raise ConfigError(f"eta must exceed 1, got {eta}")
        self.eta = float(eta)
        self._m = 0
        self._next = 1  # ⌊η⁰⌋

    @property
    def next_epoch(self) -> int:
        return self._next

    def is_epoch(self, t: int) -> bool:
        """True iff t is a scheduled resample time; advances the schedule."""
        if t < self._next:
            return False
        hit = False
        nxt = self._next
        while nxt <= t:
            if nxt == t:
                hit = True
            self._m += 1
            nxt = int(math.floor(self.eta ** self._m))
        self._next = nxt
        return hit


class _ThompsonLearner:
    """Shared machinery: regression state, posterior, draw-certify loop."""

    def __init__(self, instance: MultiAgentInstance, cfg: LearnerConfig, stream: SeedStream):
        self.cfg = cfg
        self.stream = stream
        self.state_dims = instance.state_dims
        self.input_dims = instance.input_dims
        self.known = instance.known
        self.true_systems = instance.systems
        self.cost = instance.cost
        self.tol = 1e-12
        p = sum(self.state_dims)
        q = p + sum(self.input_dims)
        self.p, self.q = p, q
        self.V0 = cfg.v0_scale * np.eye(q)
        mu0 = np.asarray(cfg.mu0, dtype=float)
        self.mu0 = np.full((p, q), float(mu0)) if mu0.ndim == 0 else as_matrix(mu0, "mu0")
        if self.mu0.shape != (p, q):
            raise ConfigError(f"mu0 shape {self.mu0.shape} != ({p}, {q})")
        self.V = self.V0.copy()
        self.S = self.mu0 @ self.V0
        self.pending: tuple[np.ndarray, np.ndarray] | None = None
        self.output: LearnerOutput | None = None
        self.bundle: GainBundle | None = None
        self.planned_action: np.ndarray | None = None
        self._warm_P: np.ndarray | None = None
        self.resample_total = 0
        self.sample_count = 0
        self.last_event = False

    # -- regression state ---------------------------------------------------
    def _absorb(self, x_next: np.ndarray) -> None:
        x_prev, u_prev = self.pending
        z = np.concatenate([x_prev, u_prev])
        self.V += np.outer(z, z)
        self.S += np.outer(x_next, z)

    def _posterior(self) -> tuple[np.ndarray, np.ndarray]:
        V = symmetrize(self.V)
        mu = np.linalg.solve(V, self.S.T).T
        return mu, V

    # -- sampling -------------------------------------------------------------
    def _certify(self, theta_hat: np.ndarray) -> tuple[LearnerOutput, GainBundle]:
        estimates = partition_theta(theta_hat, self.state_dims, self.input_dims)
        merged = tuple(
            self.true_systems[n] if self.known[n] else estimates[n]
            for n in range(len(estimates))
        )
        bundle = _synthesize_joint(merged, self.cost, self.tol, self._warm_P)
        return LearnerOutput(theta=merged), bundle

    def _refresh_sample(self) -> None:
        mu, V = self._posterior()
        draw = lambda: matrix_normal_sample(mu, V, self.stream)  # noqa: E731
        output, bundle, used = stabilize_or_fallback(
            draw(), self._certify, draw,
            (self.output, self.bundle), self.cfg.max_resample,
        )
        self.output, self.bundle = output, bundle
        self._warm_P = bundle.P
        self.resample_total += used
        self.sample_count += 1

    def _trigger(self, t: int) -> bool:  # pragma: no cover - overridden
        raise NotImplementedError

    def step(self, t: int, x: np.ndarray) -> LearnerOutput:
        """Consume (t, x), maybe resample, and record the implied action."""
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.p:
            raise ConfigError(f"learner expects state of length {self.p}, got {x.size}")
        if self.pending is not None:
            self._absorb(x)
        fire = (self.output is None) or self._trigger(t)
        self.last_event = fire
        if fire:
            self._refresh_sample()
        u = self.bundle.K @ x
        self.pending = (x, u)
        self.planned_action = u
        return self.output


class TsFrdLearner(_ThompsonLearner):
    """Thompson sampler on the deterministic epoch schedule t = ⌊η^m⌋."""

    def __init__(self, instance, cfg, stream):
        super().__init__(instance, cfg, stream)
        self.schedule = EpochSchedule(cfg.eta)

    def _trigger(self, t: int) -> bool:
        return self.schedule.is_epoch(t)


class TsAbbasiLearner(_ThompsonLearner):
    """Thompson sampler triggered by determinant growth of the design matrix."""

    def __init__(self, instance, cfg, stream):
        super().__init__(instance, cfg, stream)
        self._logdet_last = float(np.linalg.slogdet(self.V0)[1])
        self._log_g = math.log(cfg.g)

    def _trigger(self, t: int) -> bool:
        logdet = float(np.linalg.slogdet(symmetrize(self.V))[1])
        if logdet > self._log_g + self._logdet_last:
            self._logdet_last = logdet
            return True
        return False

    def _refresh_sample(self) -> None:
        super()._refresh_sample()
        # First (prior) sample also pins the determinant snapshot.
        self._logdet_last = max(self._logdet_last,
                                float(np.linalg.slogdet(symmetrize(self.V))[1]))


class ExactLearner:
    """Degenerate learner that always returns the true parameters."""

    def __init__(self, instance: MultiAgentInstance, cfg: LearnerConfig | None = None,
                 stream: SeedStream | None = None):
        self.output = LearnerOutput(theta=instance.systems)
        self.bundle = synthesize_gains(instance.systems, instance.cost, locals_too=False)
        self.planned_action: np.ndarray | None = None
        self.resample_total = 0
        self.sample_count = 0
        self.last_event = False
        self.p = instance.dx_total

    def step(self, t: int, x: np.ndarray) -> LearnerOutput:
        self.planned_action = self.bundle.K @ np.asarray(x, dtype=float).ravel()
        return self.output


def make_learner(cfg: LearnerConfig, instance: MultiAgentInstance, stream: SeedStream):
    """Instantiate the configured learner for this instance."""
    if cfg.kind == "exact":
        return ExactLearner(instance, cfg, stream)
    if cfg.kind == "ts-frd":
        return TsFrdLearner(instance, cfg, stream)
    if cfg.kind == "ts-abbasi":
        return TsAbbasiLearner(instance, cfg, stream)
    raise ConfigError(f"unknown learner type {cfg.kind!r}")  # pragma: no cover
