"""Dense linear-algebra helpers and reproducible random streams.

Everything downstream (Riccati solvers, simulators, learners) works with
plain float64 numpy arrays; this module provides the small set of shared
primitives: block assembly, vector stacking/splitting, symmetrization and
PSD checks, and seeded random sampling with named, independent streams.
"""

from __future__ import annotations

import hashlib

import numpy as np
import scipy.linalg


def as_matrix(value, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array and require finite entries."""
    M = np.asarray(value, dtype=float)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    elif M.ndim == 1:
        M = M.reshape(1, -1)
    elif M.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite entries")
    return M


def as_vector(value, name: str = "vector") -> np.ndarray:
    """Coerce to a 1-D float64 array and require finite entries."""
    v = np.atleast_1d(np.asarray(value, dtype=float)).ravel()
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def symmetrize(M: np.ndarray) -> np.ndarray:
    """(M + Mᵀ)/2 — absorbs round-off before PD/PSD checks and solves."""
    return (M + M.T) / 2.0


def is_psd(M: np.ndarray, tol: float = 1e-10) -> bool:
    """True if the symmetric part of M has min eigenvalue ≥ -tol."""
    return bool(np.linalg.eigvalsh(symmetrize(M)).min() >= -tol)


def robust_cholesky(M: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor of the symmetrized input.

    Raises
    ------
    ValueError
        If the (symmetrized) matrix is not positive definite.
    """
    try:
        return np.linalg.cholesky(symmetrize(M))
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{name} is not positive definite") from exc


def block_diag(blocks) -> np.ndarray:
    """Block-diagonal assembly of a nonempty list of matrices.

    Off-diagonal blocks are exactly zero.  Blocks may be rectangular.
    """
    blocks = list(blocks)
    if not blocks:
        raise ValueError("block_diag needs at least one block")
    return scipy.linalg.block_diag(*[as_matrix(b, "block") for b in blocks])


def extract_blocks(M: np.ndarray, row_dims, col_dims=None) -> list[list[np.ndarray]]:
    """Partition M into a grid of blocks given per-block row/col sizes.

    Inverse of :func:`block_diag` in the sense that
    ``extract_blocks(block_diag(bs), dims)[i][i] == bs[i]``.
    """
    if col_dims is None:
        col_dims = row_dims
    r_edges = np.concatenate([[0], np.cumsum(row_dims)])
    c_edges = np.concatenate([[0], np.cumsum(col_dims)])
    if r_edges[-1] != M.shape[0] or c_edges[-1] != M.shape[1]:
        raise ValueError(
            f"block dims {tuple(row_dims)}x{tuple(col_dims)} do not tile shape {M.shape}"
        )
    return [
        [M[r_edges[i]:r_edges[i + 1], c_edges[j]:c_edges[j + 1]] for j in range(len(col_dims))]
        for i in range(len(row_dims))
    ]


def diag_blocks(M: np.ndarray, dims) -> list[np.ndarray]:
    """Diagonal blocks of a square matrix partitioned by ``dims``."""
    grid = extract_blocks(M, dims, dims)
    return [grid[i][i] for i in range(len(dims))]


def vecc(parts) -> np.ndarray:
    """Stack a nonempty list of vectors into one column-ordered vector."""
    parts = list(parts)
    if not parts:
        raise ValueError("vecc needs at least one part")
    return np.concatenate([as_vector(p, "part") for p in parts])


def split_vector(v: np.ndarray, dims) -> list[np.ndarray]:
    """Split a stacked vector back into parts of the given lengths."""
    v = as_vector(v)
    edges = np.concatenate([[0], np.cumsum(dims)])
    if edges[-1] != v.size:
        raise ValueError(f"dims {tuple(dims)} do not sum to length {v.size}")
    return [v[edges[i]:edges[i + 1]] for i in range(len(dims))]


def _stream_key(stream_id) -> int:
    """Stable 64-bit key for a stream id (int or descriptive string)."""
    if isinstance(stream_id, (int, np.integer)):
        return int(stream_id) % (1 << 64)
    digest = hashlib.blake2s(str(stream_id).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class SeedStream:
    """A named, reproducible stream of random draws.

    Two streams constructed with the same ``(seed, stream_id)`` produce
    bit-identical draw sequences, across processes and platforms.  Distinct
    stream ids under the same seed are statistically independent, so one
    base seed can fan out to per-system noise streams, per-agent learner
    streams, and per-run Monte Carlo streams without coordination.
    """

    def __init__(self, seed: int, stream_id=0):
        self.seed = int(seed)
        self.stream_id = stream_id
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(_stream_key(stream_id),))
        self._gen = np.random.default_rng(ss)

    def clone(self) -> "SeedStream":
        """Fresh stream with the same identity, restarted from the beginning."""
        return SeedStream(self.seed, self.stream_id)

    def standard_normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def __repr__(self) -> str:  # pragma: no cover - debugging nicety
        return f"SeedStream(seed={self.seed}, stream_id={self.stream_id!r})"


def gaussian_vector(n: int, stream: SeedStream) -> np.ndarray:
    """n independent standard-normal draws from the stream."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return stream.standard_normal(n)


def matrix_normal_sample(mean: np.ndarray, row_cov_inv: np.ndarray, stream: SeedStream) -> np.ndarray:
    """Sample a p×q matrix with independent rows ~ N(mean_row, V⁻¹).

    Parameters
    ----------
    mean : (p, q) array
        Row means.
    row_cov_inv : (q, q) array
        Shared row precision V (symmetric positive definite); each row's
        covariance is V⁻¹.  Columns are uncoupled (identity column
        covariance).
    stream : SeedStream
        Source of randomness; the draw is deterministic given its state.
    """
    mean = as_matrix(mean, "mean")
    L = robust_cholesky(as_matrix(row_cov_inv, "row_cov_inv"), "row_cov_inv")
    Z = stream.standard_normal(mean.shape)
    # Row r of the sample is mean_r + L^{-T} z_r, giving covariance
    # L^{-T} L^{-1} = V^{-1}; stacked over rows that is Z @ L^{-1}.
    Y = scipy.linalg.solve_triangular(L, Z.T, lower=True, trans="T").T
    return mean + Y
