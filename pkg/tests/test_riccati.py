import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from lqteam.numerics import SeedStream, block_diag
from lqteam.riccati import (
    StabilizationError,
    gain_operator,
    riccati_operator,
    solve_dare,
    solve_lyapunov,
    spectral_radius,
)

GOLDEN_P = (1.0 + np.sqrt(5.0)) / 2.0  # scalar fixed point of the all-ones problem


def _random_stabilizable(seed, n=3, m=2):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    A *= 1.1 / max(spectral_radius(A), 1e-6)
    B = rng.standard_normal((n, m))
    G = rng.standard_normal((n, n))
    Q = G @ G.T / n + 0.1 * np.eye(n)
    H = rng.standard_normal((m, m))
    R = H @ H.T / m + 0.5 * np.eye(m)
    return Q, R, A, B


# ---------------------------------------------------------------------------
# single operator applications (hand-computed)
# ---------------------------------------------------------------------------

def test_riccati_operator_hand_values():
    one = np.eye(1)
    # Q + A'PA - A'PB (R + B'PB)^{-1} B'PA with everything 1: 1 + 1 - 1/2
    out = riccati_operator(one, Q=one, R=one, A=one, B=one)
    np.testing.assert_allclose(out, [[1.5]], rtol=0, atol=1e-15)
    # With B = 0 the correction vanishes: Q + A'PA = 1 + 2
    out = riccati_operator(2.0 * one, Q=one, R=one, A=one, B=np.zeros((1, 1)))
    np.testing.assert_allclose(out, [[3.0]], rtol=0, atol=1e-15)


def test_gain_operator_hand_value():
    one = np.eye(1)
    K = gain_operator(GOLDEN_P * one, R=one, A=one, B=one)
    np.testing.assert_allclose(K, [[-GOLDEN_P / (1.0 + GOLDEN_P)]], atol=1e-15)


# ---------------------------------------------------------------------------
# fixed-point solve
# ---------------------------------------------------------------------------

def test_scalar_golden_fixed_point():
    sol = solve_dare(np.eye(1), np.eye(1), np.eye(1), np.eye(1))
    assert abs(sol.P[0, 0] - GOLDEN_P) < 1e-10
    assert abs(sol.K[0, 0] - (-1.0 / GOLDEN_P)) < 1e-10
    assert sol.iterations > 0
    assert sol.residual <= 1e-12


def test_solution_satisfies_fixed_point_equation():
    Q, R, A, B = _random_stabilizable(0)
    sol = solve_dare(Q, R, A, B)
    image = riccati_operator(sol.P, Q, R, A, B)
    np.testing.assert_allclose(image, sol.P, rtol=0, atol=1e-10)


def test_agrees_with_scipy_direct_solver():
    for seed in range(8):
        Q, R, A, B = _random_stabilizable(seed)
        sol = solve_dare(Q, R, A, B)
        reference = scipy.linalg.solve_discrete_are(A, B, Q, R)
        np.testing.assert_allclose(sol.P, reference, rtol=1e-8, atol=1e-8)
        K_ref = -np.linalg.solve(R + B.T @ reference @ B, B.T @ reference @ A)
        np.testing.assert_allclose(sol.K, K_ref, rtol=1e-7, atol=1e-8)


def test_closed_loop_is_stable():
    for seed in range(5):
        Q, R, A, B = _random_stabilizable(seed + 50)
        sol = solve_dare(Q, R, A, B)
        assert spectral_radius(A + B @ sol.K) < 1.0


def test_block_diagonal_solve_decouples():
    Qs, Rs, As, Bs, Ps = [], [], [], [], []
    for seed in (3, 4):
        Q, R, A, B = _random_stabilizable(seed, n=2, m=2)
        Qs.append(Q); Rs.append(R); As.append(A); Bs.append(B)
        Ps.append(solve_dare(Q, R, A, B).P)
    joint = solve_dare(block_diag(Qs), block_diag(Rs), block_diag(As), block_diag(Bs))
    np.testing.assert_allclose(joint.P, block_diag(Ps), rtol=0, atol=1e-9)


def test_warm_start_converges_to_same_point():
    Q, R, A, B = _random_stabilizable(1)
    cold = solve_dare(Q, R, A, B)
    warm = solve_dare(Q, R, A, B, p0=cold.P + 0.01 * np.eye(3))
    np.testing.assert_allclose(warm.P, cold.P, rtol=0, atol=1e-9)
    assert warm.iterations < cold.iterations


def test_uncontrollable_unstable_system_raises():
    # x' = 2x with no input authority: no stabilizing solution exists.
    with pytest.raises(StabilizationError):
        solve_dare(np.eye(1), np.eye(1), 2.0 * np.eye(1), np.zeros((1, 1)))


def test_divergence_detected_before_iteration_budget():
    # The iterates blow up geometrically; the guard should fire long before
    # max_iter, so this must return quickly rather than spin for 10^6 rounds.
    with pytest.raises(StabilizationError):
        solve_dare(np.eye(2), np.eye(2), 1.5 * np.eye(2), np.zeros((2, 2)),
                   max_iter=10**6)


def test_singular_r_is_fine_when_btpb_regularizes():
    # R singular but B'PB positive definite on the relevant subspace: the
    # tracking pair's joint cost has exactly this structure.
    Q = np.array([[1.0, -1.0], [-1.0, 1.0]])
    R = np.array([[1.0, -0.5], [-0.5, 0.25]])
    A = np.diag([0.0, 0.5])
    B = np.diag([1.0, 0.0])
    sol = solve_dare(Q, R, A, B)
    assert spectral_radius(A + B @ sol.K) < 1.0


# ---------------------------------------------------------------------------
# Lyapunov recursion
# ---------------------------------------------------------------------------

def test_lyapunov_scalar_golden():
    S = solve_lyapunov(0.5 * np.eye(1))
    np.testing.assert_allclose(S, [[4.0 / 3.0]], rtol=0, atol=1e-12)


def test_lyapunov_agrees_with_scipy():
    rng = np.random.default_rng(2)
    for _ in range(5):
        C = rng.standard_normal((3, 3))
        C *= 0.8 / spectral_radius(C)
        S = solve_lyapunov(C)
        ref = scipy.linalg.solve_discrete_lyapunov(C, np.eye(3))
        np.testing.assert_allclose(S, ref, rtol=1e-10, atol=1e-10)


def test_lyapunov_unstable_rejected():
    with pytest.raises(StabilizationError):
        solve_lyapunov(np.eye(2))


@given(st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_lyapunov_residual_and_monotone_iterates(seed):
    stream = SeedStream(seed, "lyap")
    C = stream.standard_normal((3, 3))
    C *= float(stream.uniform(0.1, 0.95, ())) / max(spectral_radius(C), 1e-9)
    S = solve_lyapunov(C)
    residual = np.max(np.abs(S - np.eye(3) - C @ S @ C.T))
    assert residual <= 1e-12 * max(1.0, np.linalg.norm(S))
    # the recursion S <- I + C S C' climbs monotonically in the PSD order
    it = np.zeros((3, 3))
    for _ in range(30):
        nxt = np.eye(3) + C @ it @ C.T
        assert np.linalg.eigvalsh(nxt - it).min() >= -1e-12
        it = nxt
    assert np.linalg.eigvalsh(S - it).min() >= -1e-12  # limit dominates iterates
