"""Deterministic linear-algebra and sampling substrate shared by all modules.

Randomness is counter-based: a generator is fully determined by a
(seed, stream) pair of 64-bit integers, so parallel Monte-Carlo runs are
reproducible no matter how work is scheduled across workers.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve

_U64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(a: int, b: int) -> int:
    """splitmix64-style mixing of two 64-bit values into one."""
    z = (a + _GOLDEN * (b + 1)) & _U64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
    return (z ^ (z >> 31)) & _U64


class Rng:
    """Counter-based random stream keyed by (seed, stream).

    Two instances with the same key produce identical draw sequences across
    runs, platforms with the same numpy, and any thread count.  ``child(i)``
    derives an independent stream; never share one instance across threads.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _U64
        self.stream = int(stream) & _U64
        self._gen = np.random.Generator(
            np.random.Philox(key=np.array([self.seed, self.stream], dtype=np.uint64))
        )

    def child(self, index: int) -> "Rng":
        """Independent substream; deterministic function of (key, index)."""
        return Rng(self.seed, _mix64(self.stream, int(index)))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def standard_normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float, high: float, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, shape)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream})"


class SpdMatrix:
    """Symmetric positive-definite matrix with cached factorizations.

    Validates symmetry to 1e-12 (absolute-relative mix) and positive
    definiteness at construction; caches the lower Cholesky factor, the
    inverse, and the eigenvalues.
    """

    def __init__(self, matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("covariance must be square")
        scale = max(1.0, float(np.max(np.abs(matrix))))
        if np.max(np.abs(matrix - matrix.T)) > 1e-12 * scale:
            raise ValueError("covariance not symmetric")
        self.matrix = 0.5 * (matrix + matrix.T)
        self.dim = matrix.shape[0]
        try:
            self.chol = np.linalg.cholesky(self.matrix)
        except np.linalg.LinAlgError:
            raise ValueError("covariance not positive definite") from None
        self.eigenvalues = np.linalg.eigvalsh(self.matrix)
        if self.eigenvalues[0] <= 0:
            raise ValueError("covariance not positive definite")
        self.inverse = cho_solve((self.chol, True), np.eye(self.dim))
        self.inverse = 0.5 * (self.inverse + self.inverse.T)

    def trace(self) -> float:
        return float(np.trace(self.matrix))

    def op_norm(self) -> float:
        return float(self.eigenvalues[-1])

    def inv_op_norm(self) -> float:
        return float(1.0 / self.eigenvalues[0])

    def sqrt(self) -> np.ndarray:
        vals, vecs = np.linalg.eigh(self.matrix)
        return (vecs * np.sqrt(vals)) @ vecs.T

    def __repr__(self) -> str:
        return f"SpdMatrix(dim={self.dim})"


def identity_spd(d: int) -> SpdMatrix:
    return SpdMatrix(np.eye(d))


def gaussian_vector(rng: Rng, cov: SpdMatrix) -> np.ndarray:
    """One draw from N(0, cov) via the cached Cholesky factor."""
    return cov.chol @ rng.standard_normal(cov.dim)


def gaussian_sample(rng: Rng, cov: SpdMatrix, count: int) -> np.ndarray:
    """(count, d) array of independent N(0, cov) draws."""
    return rng.standard_normal((count, cov.dim)) @ cov.chol.T


def haar_orthogonal(rng: Rng, d: int) -> np.ndarray:
    """Haar-distributed orthogonal matrix from sign-fixed QR.

    Raw QR of a Gaussian matrix is not Haar; forcing diag(R) > 0 makes the
    decomposition unique and restores the Haar law.
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    g = rng.standard_normal((d, d))
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def empirical_covariance(xs: np.ndarray) -> np.ndarray:
    """(1/n) sum of outer products x_i x_i^T over the rows of xs."""
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 1:
        xs = xs[None, :]
    if xs.shape[0] == 0:
        raise ValueError("empty sample")
    return xs.T @ xs / xs.shape[0]


def spectral_norm(m: np.ndarray) -> float:
    return float(np.linalg.norm(m, ord=2))


def eig_sym(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix, ascending eigenvalues.

    Returns (values, vectors) with vectors in columns.  Rejects inputs that
    are not symmetric to 1e-10 relative.
    """
    m = np.asarray(m, dtype=float)
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m - m.T)) > 1e-10 * scale:
        raise ValueError("matrix not symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    return vals, vecs


def solve_spd(a: SpdMatrix, b: np.ndarray) -> np.ndarray:
    """Solve a x = b using the cached Cholesky factor of a."""
    return cho_solve((a.chol, True), np.asarray(b, dtype=float))


def nullspace(m: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Orthonormal basis (columns) of the numerical nullspace of m.

    Keeps right-singular vectors whose singular values are at most
    tol times the largest singular value.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    _, s, vt = np.linalg.svd(m)
    smax = s[0] if s.size else 0.0
    ncols = m.shape[1]
    nkeep = int(np.sum(s <= tol * smax)) + (ncols - s.size)
    if nkeep == 0:
        return np.zeros((ncols, 0))
    return vt[ncols - nkeep:].T
