"""Discrete algebraic Riccati and Lyapunov fixed points.

Small dense problems only (state dimension ≤ a few dozen), solved by plain
fixed-point iteration:

* DARE:      P = Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA, iterated from P₀ = Q.
* Lyapunov:  Σ = I + CΣCᵀ, iterated from Σ₀ = 0 (monotone increasing).

Stabilizability is certified operationally: the DARE iteration converged
and the closed loop A + BK has spectral radius < 1.  Unstabilizable inputs
show up as divergence, which is detected early and reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import as_matrix, symmetrize

_DIVERGENCE_NORM = 1e100


class StabilizationError(RuntimeError):
    """A Riccati/Lyapunov fixed point could not be certified."""


@dataclass(frozen=True)
class DareSolution:
    """Converged DARE fixed point with its certified gain."""

    P: np.ndarray
    K: np.ndarray
    iterations: int
    residual: float


def riccati_operator(P, Q, R, A, B) -> np.ndarray:
    """One application of the Riccati operator; output symmetrized."""
    P, Q, R, A, B = (as_matrix(M, n) for M, n in
                     zip((P, Q, R, A, B), "PQRAB"))
    PA = P @ A
    PB = P @ B
    G = symmetrize(R + B.T @ PB)
    try:
        X = np.linalg.solve(G, B.T @ PA)
    except np.linalg.LinAlgError as exc:
        raise StabilizationError("R + BᵀPB is singular (R not positive definite?)") from exc
    return symmetrize(Q + A.T @ PA - A.T @ PB @ X)


def gain_operator(P, R, A, B) -> np.ndarray:
    """Feedback gain K = −(R + BᵀPB)⁻¹BᵀPA for a given value matrix P."""
    P, R, A, B = (as_matrix(M, n) for M, n in zip((P, R, A, B), ("P", "R", "A", "B")))
    PB = P @ B
    G = symmetrize(R + B.T @ PB)
    try:
        return -np.linalg.solve(G, B.T @ P @ A)
    except np.linalg.LinAlgError as exc:
        raise StabilizationError("R + BᵀPB is singular (R not positive definite?)") from exc


def spectral_radius(M) -> float:
    """Largest absolute eigenvalue of a square matrix."""
    M = as_matrix(M, "M")
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"spectral radius needs a square matrix, got {M.shape}")
    return float(np.abs(np.linalg.eigvals(M)).max())


def solve_dare(Q, R, A, B, tol: float = 1e-12, max_iter: int = 10**6,
               p0=None) -> DareSolution:
    """Solve the DARE by fixed-point iteration and certify the closed loop.

    Parameters
    ----------
    Q, R, A, B : array-like
        Cost and dynamics matrices (Q PSD, R PD on the controlled range).
    tol : float
        Frobenius-norm fixed-point residual at which to stop.
    max_iter : int
        Iteration budget before declaring non-convergence.
    p0 : array-like, optional
        Starting point; defaults to Q.  A warm start from a nearby solution
        speeds up the repeated solves inside learning loops; the fixed
        point reached is the same.

    Raises
    ------
    StabilizationError
        On divergence, iteration exhaustion, or an unstable closed loop —
        operationally, the stabilizability/detectability assumption fails.
    """
    Q, R, A, B = (as_matrix(M, n) for M, n in zip((Q, R, A, B), ("Q", "R", "A", "B")))
    P = symmetrize(as_matrix(p0, "p0")) if p0 is not None else symmetrize(Q)
    for it in range(1, int(max_iter) + 1):
        P_next = riccati_operator(P, Q, R, A, B)
        step = float(np.linalg.norm(P_next - P, "fro"))
        P = P_next
        if step <= tol:
            K = gain_operator(P, R, A, B)
            rho = spectral_radius(A + B @ K)
            if rho >= 1.0:
                raise StabilizationError(
                    f"DARE fixed point reached but closed loop is unstable (rho={rho:.6f})"
                )
            return DareSolution(P=P, K=K, iterations=it, residual=step)
        if not np.isfinite(step) or np.linalg.norm(P, "fro") > _DIVERGENCE_NORM:
            raise StabilizationError(
                f"DARE iteration diverged after {it} steps (unstabilizable system?)"
            )
    raise StabilizationError(f"DARE did not converge within {max_iter} iterations")


def solve_lyapunov(C, tol: float = 1e-12, max_iter: int = 10**6) -> np.ndarray:
    """Limit Σ of the monotone iteration Σ ← I + CΣCᵀ from Σ₀ = 0.

    Requires ρ(C) < 1; the iterates increase (in the PSD order) to the
    unique PSD fixed point.
    """
    C = as_matrix(C, "C")
    if C.shape[0] != C.shape[1]:
        raise ValueError(f"solve_lyapunov needs a square matrix, got {C.shape}")
    rho = spectral_radius(C)
    if rho >= 1.0:
        raise StabilizationError(f"Lyapunov iteration requires rho(C) < 1, got {rho:.6f}")
    eye = np.eye(C.shape[0])
    S = np.zeros_like(C)
    for _ in range(1, int(max_iter) + 1):
        S_next = symmetrize(eye + C @ S @ C.T)
        step = float(np.linalg.norm(S_next - S, "fro"))
        S = S_next
        if step <= tol:
            return S
    raise StabilizationError(f"Lyapunov iteration did not converge within {max_iter} iterations")
