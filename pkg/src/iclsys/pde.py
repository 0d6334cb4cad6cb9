"""Operator learning for -(a u')' + V u = f on [0,1] with zero boundary.

Everything lives in the orthonormal sine basis sqrt(2) sin(k pi x): the mass
matrix is the identity, white noise has identity covariance, and the H1 norm
of a coefficient vector is a diagonal quadratic form.  Stiffness matrices
assembled here are the tasks of the in-context learning problem; a finer
assembly of the same coefficient fields provides the reference solution that
exposes the discretization gap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .numerics import Rng, SpdMatrix
from .tasks import CovariateDistribution, TaskDistribution

_MIN_PANELS = 128
_PANELS_PER_MODE = 8
_FIELD_MODE_FACTOR = 4  # GRF series truncation relative to learner modes


@dataclass(frozen=True)
class SineBasis:
    """First d modes of the L2-orthonormal Dirichlet sine basis."""

    d: int

    def eval(self, points: np.ndarray) -> np.ndarray:
        """(len(points), d) matrix of sqrt(2) sin(k pi x)."""
        k = np.arange(1, self.d + 1)
        return np.sqrt(2.0) * np.sin(np.pi * np.outer(points, k))

    def eval_deriv(self, points: np.ndarray) -> np.ndarray:
        k = np.arange(1, self.d + 1)
        return np.sqrt(2.0) * (k * np.pi) * np.cos(np.pi * np.outer(points, k))


def h1_weights(modes: int) -> np.ndarray:
    """Diagonal of the H1 Gram matrix: 1 + (k pi)^2 per mode."""
    k = np.arange(1, modes + 1)
    return 1.0 + (k * np.pi) ** 2


def h1_norm_sq(coeffs: np.ndarray) -> float:
    coeffs = np.asarray(coeffs, dtype=float)
    return float(np.sum(coeffs ** 2 * h1_weights(coeffs.shape[-1])))


@dataclass(frozen=True)
class GrfSpec:
    """Gaussian field N(0, amplitude (-Laplacian + alpha I)^{-beta}) in the
    sine eigenbasis; mode variances amplitude (k^2 pi^2 + alpha)^{-beta}."""

    amplitude: float = 1.0
    alpha: float = 2.0
    beta: float = 2.0

    def mode_std(self, modes: int) -> np.ndarray:
        k = np.arange(1, modes + 1)
        var = self.amplitude * (k ** 2 * np.pi ** 2 + self.alpha) ** (-self.beta)
        return np.sqrt(var)

    @classmethod
    def white_noise(cls) -> "GrfSpec":
        """Unit variance in every mode (beta = 0)."""
        return cls(amplitude=1.0, alpha=0.0, beta=0.0)


def sample_grf(spec: GrfSpec, modes: int, rng: Rng) -> np.ndarray:
    if modes < 1:
        raise ValueError("need at least one mode")
    return spec.mode_std(modes) * rng.standard_normal(modes)


def sample_grf_batch(spec: GrfSpec, modes: int, count: int, rng: Rng) -> np.ndarray:
    return spec.mode_std(modes) * rng.standard_normal((count, modes))


def quadrature_rule(panels: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite 4-point Gauss-Legendre rule on [0,1]."""
    nodes, weights = np.polynomial.legendre.leggauss(4)
    edges = np.linspace(0.0, 1.0, panels + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1:] - edges[:-1])
    points = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    w = (half[:, None] * weights[None, :]).ravel()
    return points, w


def default_panels(modes: int) -> int:
    return max(_MIN_PANELS, _PANELS_PER_MODE * modes)


def _field_on_grid(field, points: np.ndarray) -> np.ndarray:
    if callable(field):
        return np.asarray(field(points), dtype=float)
    arr = np.asarray(field, dtype=float)
    if arr.ndim == 0:
        return np.full_like(points, float(arr))
    if arr.shape != points.shape:
        raise ValueError("grid field does not match the quadrature grid")
    return arr


def assemble_stiffness(a, V, basis: SineBasis, panels: int | None = None) -> np.ndarray:
    """Galerkin matrix of -(a u')' + V u in the sine basis.

    A_jk = int a phi_j' phi_k' + int V phi_j phi_k by composite quadrature,
    symmetrized after assembly.  Coefficients may be callables, scalars, or
    arrays on the quadrature grid.
    """
    panels = default_panels(basis.d) if panels is None else panels
    points, w = quadrature_rule(panels)
    a_vals = _field_on_grid(a, points)
    v_vals = _field_on_grid(V, points)
    if np.min(a_vals) <= 0:
        raise ValueError("coefficient not uniformly elliptic")
    phi = basis.eval(points)
    dphi = basis.eval_deriv(points)
    mat = dphi.T @ (dphi * (w * a_vals)[:, None]) + phi.T @ (phi * (w * v_vals)[:, None])
    return 0.5 * (mat + mat.T)


def _assemble_batch(a_vals: np.ndarray, v_vals: np.ndarray, basis: SineBasis,
                    points: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Stiffness matrices for stacked coefficient fields on a shared grid.

    Chunked so the (chunk, quad, modes) weighted tensor stays within a fixed
    memory budget while the contraction runs through BLAS.
    """
    phi = basis.eval(points)
    dphi = basis.eval_deriv(points)
    count, nq = a_vals.shape
    d = basis.d
    chunk = max(1, (1 << 24) // (nq * d))
    stiff = np.empty((count, d, d))
    for start in range(0, count, chunk):
        stop = min(start + chunk, count)
        weighted = (a_vals[start:stop] * w)[:, :, None] * dphi[None, :, :]
        block = np.matmul(dphi.T[None], weighted)
        weighted = (v_vals[start:stop] * w)[:, :, None] * phi[None, :, :]
        block += np.matmul(phi.T[None], weighted)
        stiff[start:stop] = block
    return 0.5 * (stiff + stiff.transpose(0, 2, 1))


def encode(f, basis: SineBasis, panels: int | None = None) -> np.ndarray:
    """Project a function onto the basis span by quadrature inner products.

    Coefficient vectors shorter or longer than the basis are truncated or
    zero-padded instead of re-integrated.
    """
    arr = np.asarray(f, dtype=float) if not callable(f) else None
    if arr is not None and arr.ndim == 1:
        out = np.zeros(basis.d)
        keep = min(basis.d, arr.shape[0])
        out[:keep] = arr[:keep]
        return out
    panels = default_panels(basis.d) if panels is None else panels
    points, w = quadrature_rule(panels)
    vals = _field_on_grid(f, points)
    return basis.eval(points).T @ (w * vals)


def decode(coeffs: np.ndarray, basis: SineBasis | None = None):
    """Function evaluator for sum_k c_k phi_k."""
    coeffs = np.asarray(coeffs, dtype=float)
    basis = SineBasis(coeffs.shape[0]) if basis is None else basis

    def evaluator(points):
        pts = np.atleast_1d(np.asarray(points, dtype=float))
        out = basis.eval(pts)[:, :coeffs.shape[0]] @ coeffs
        return out if np.ndim(points) else float(out[0])

    return evaluator


def reference_solution(a, V, f_coeffs: np.ndarray, ref_modes: int,
                       panels: int | None = None) -> np.ndarray:
    """Galerkin solve at the reference resolution.

    The source is given by sine coefficients (zero-padded to ref_modes); the
    system must be SPD, which holds for a > 0, V >= 0.
    """
    basis = SineBasis(ref_modes)
    mat = assemble_stiffness(a, V, basis, panels)
    rhs = np.zeros(ref_modes)
    keep = min(ref_modes, len(f_coeffs))
    rhs[:keep] = np.asarray(f_coeffs, dtype=float)[:keep]
    try:
        factor = cho_factor(mat)
    except np.linalg.LinAlgError:
        raise ValueError("assembled system is not positive definite") from None
    return cho_solve(factor, rhs)


@dataclass(frozen=True)
class EllipticTask:
    """One sampled operator: coefficient fields on the quadrature grid plus
    the learner-resolution stiffness matrix."""

    a_vals: np.ndarray
    v_vals: np.ndarray
    stiffness: np.ndarray


class PdeStiffnessTasks(TaskDistribution):
    """Task distribution of stiffness matrices with random coefficients.

    a(x) = a_base exp(h(x)) with h a Gaussian field (or a_base when no field
    is given); V(x) = exp(g(x)) for a field g, or a constant c ~ U[lo, hi].
    Fields are realized by truncated sine series on a fixed quadrature grid.
    """

    def __init__(self, d: int, a_base: float = 0.1, a_grf: GrfSpec | None = None,
                 v_grf: GrfSpec | None = None,
                 v_uniform: tuple[float, float] | None = None,
                 panels: int | None = None):
        if (v_grf is None) == (v_uniform is None):
            raise ValueError("exactly one of v_grf and v_uniform is required")
        if a_base <= 0:
            raise ValueError("coefficient not uniformly elliptic")
        self.d = int(d)
        self.a_base = float(a_base)
        self.a_grf = a_grf
        self.v_grf = v_grf
        self.v_uniform = v_uniform
        self.field_modes = _FIELD_MODE_FACTOR * self.d
        # the shared grid must resolve assemblies up to the reference
        # resolution, a _FIELD_MODE_FACTOR multiple of the learner's
        self.panels = default_panels(self.field_modes) if panels is None else panels
        self.basis = SineBasis(self.d)
        self.points, self.weights = quadrature_rule(self.panels)
        self._field_basis = SineBasis(self.field_modes).eval(self.points)
        self.exact_expectation = False
        bounds_rng = Rng(0x9DE, 0)
        tasks = self.sample_batch(bounds_rng, 1000)
        vals = np.linalg.eigvalsh(tasks)
        self.norm_bound = float(np.max(vals)) * 1.5
        self.inv_norm_bound = 1.5 / float(np.min(vals))
        if np.min(vals) <= 0:
            raise ValueError("assembled system is not positive definite")

    def sample_fields(self, rng: Rng, count: int) -> tuple[np.ndarray, np.ndarray]:
        """(a, V) values on the quadrature grid for `count` draws."""
        if self.a_grf is not None:
            h = sample_grf_batch(self.a_grf, self.field_modes, count, rng)
            a_vals = self.a_base * np.exp(h @ self._field_basis.T)
        else:
            a_vals = np.full((count, len(self.points)), self.a_base)
        if self.v_grf is not None:
            g = sample_grf_batch(self.v_grf, self.field_modes, count, rng)
            v_vals = np.exp(g @ self._field_basis.T)
        else:
            lo, hi = self.v_uniform
            c = rng.uniform(lo, hi, count)
            v_vals = np.broadcast_to(c[:, None], (count, len(self.points))).copy()
        return a_vals, v_vals

    def sample_batch(self, rng: Rng, count: int) -> np.ndarray:
        a_vals, v_vals = self.sample_fields(rng, count)
        return _assemble_batch(a_vals, v_vals, self.basis, self.points, self.weights)

    def assemble_at(self, a_vals: np.ndarray, v_vals: np.ndarray, modes: int) -> np.ndarray:
        """Stiffness of the same fields at a different resolution (shared grid)."""
        return _assemble_batch(np.atleast_2d(a_vals), np.atleast_2d(v_vals),
                               SineBasis(modes), self.points, self.weights)

    def sample_task_pairs(self, rng: Rng, count: int, ref_modes: int):
        """(learner stiffness, reference stiffness) for shared field draws."""
        a_vals, v_vals = self.sample_fields(rng, count)
        fine = _assemble_batch(a_vals, v_vals, SineBasis(ref_modes),
                               self.points, self.weights)
        coarse = fine[:, :self.d, :self.d]
        return coarse, fine


def pde_task_distribution(d: int, a_base: float = 0.1, a_grf: GrfSpec | None = None,
                          v_grf: GrfSpec | None = None,
                          v_uniform: tuple[float, float] | None = None,
                          panels: int | None = None) -> PdeStiffnessTasks:
    """Factory mirroring the experiment configurations: fixed or log-Gaussian
    diffusion, log-Gaussian or constant-uniform potential."""
    return PdeStiffnessTasks(d=d, a_base=a_base, a_grf=a_grf,
                             v_grf=v_grf, v_uniform=v_uniform, panels=panels)


def source_covariance(spec: GrfSpec, d: int) -> CovariateDistribution:
    """Covariate law of encoded sources: diagonal with the GRF mode variances."""
    std = spec.mode_std(d)
    return CovariateDistribution(SpdMatrix(np.diag(std ** 2)))
