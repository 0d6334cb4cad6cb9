"""Task and covariate distributions, prompt sampling, and the embedding matrix.

A task is an invertible matrix A; a prompt is a batch of covariate/label
pairs (x_i, A^{-1} x_i) plus an unlabeled query.  Every family certifies
uniform bounds on the operator norms of its draws and their inverses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import Rng, SpdMatrix, gaussian_sample, haar_orthogonal

_CERTIFY_DRAWS = 1000
_PROMPT_CHUNK = 1 << 22  # scalars per sampling chunk


def equal_correlated_cov(d: int, rho: float) -> SpdMatrix:
    """Equal-correlated covariance (1-rho) I + rho * (all ones)."""
    if not 0.0 <= rho < 1.0:
        raise ValueError("covariance not positive definite")
    return SpdMatrix((1.0 - rho) * np.eye(d) + rho * np.ones((d, d)))


class TaskDistribution:
    """Law of a random invertible matrix with certified norm bounds.

    Subclasses provide ``sample_batch``; ``expect`` integrates a per-task
    functional exactly where the family allows it and by Monte-Carlo
    otherwise.  ``inv_norm_bound`` bounds every ||A^{-1}||, ``norm_bound``
    every ||A||.
    """

    d: int
    inv_norm_bound: float
    norm_bound: float
    exact_expectation: bool = False

    def sample_batch(self, rng: Rng, count: int) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng: Rng) -> np.ndarray:
        return self.sample_batch(rng, 1)[0]

    def expect(self, fn, task_samples: int, rng: Rng | None):
        """(mean, std_err) of fn over the task law.

        fn maps a (T, d, d) stack to a (T, ...) array of per-task values.
        Exact families return std_err 0.
        """
        tasks, weights = self._quadrature(task_samples, rng)
        values = np.asarray(fn(tasks), dtype=float)
        w = weights.reshape((-1,) + (1,) * (values.ndim - 1))
        mean = np.sum(w * values, axis=0)
        if self.exact_expectation:
            return mean, np.zeros_like(mean)
        dev = values - mean
        var = np.sum(w * dev * dev, axis=0)
        return mean, np.sqrt(var / len(tasks))

    def _quadrature(self, task_samples: int, rng: Rng | None):
        if rng is None:
            raise ValueError("Monte-Carlo task expectation needs an Rng")
        tasks = self.sample_batch(rng, task_samples)
        return tasks, np.full(task_samples, 1.0 / task_samples)

    def _certify(self, rng: Rng, tol: float = 1e-9):
        """Empirically check the declared bounds on a fixed batch of draws."""
        tasks = self.sample_batch(rng, _CERTIFY_DRAWS)
        norms = np.linalg.norm(tasks, ord=2, axis=(1, 2))
        inv_norms = np.linalg.norm(np.linalg.inv(tasks), ord=2, axis=(1, 2))
        if np.max(norms) > self.norm_bound * (1 + tol) or np.max(inv_norms) > self.inv_norm_bound * (1 + tol):
            raise ValueError("task family violates its certified bounds")


def _check_interval(a: float, b: float):
    if a > b:
        raise ValueError("empty eigenvalue interval")
    if a <= 0.0 <= b:
        raise ValueError("task family not uniformly invertible")


class ConstantMultipleTasks(TaskDistribution):
    """A = c I with c uniform on [a, b]; expectations via Gauss-Legendre."""

    def __init__(self, a: float, b: float, d: int):
        _check_interval(a, b)
        self.a, self.b, self.d = float(a), float(b), int(d)
        self.inv_norm_bound = 1.0 / min(abs(a), abs(b))
        self.norm_bound = max(abs(a), abs(b))
        self.exact_expectation = True
        nodes, weights = np.polynomial.legendre.leggauss(64)
        self._nodes = 0.5 * (b - a) * nodes + 0.5 * (a + b)
        self._weights = 0.5 * weights  # normalized to the uniform density

    def sample_batch(self, rng: Rng, count: int) -> np.ndarray:
        c = rng.uniform(self.a, self.b, count)
        return c[:, None, None] * np.eye(self.d)

    def _quadrature(self, task_samples, rng):
        tasks = self._nodes[:, None, None] * np.eye(self.d)
        return tasks, self._weights


class RotatedDiagonalTasks(TaskDistribution):
    """A = U diag(lambda) U^T with lambda_i iid uniform on [a, b].

    With ``rotation=None`` a fresh Haar rotation is drawn per task; passing a
    fixed orthogonal matrix yields a simultaneously diagonalizable family.
    """

    def __init__(self, a: float, b: float, d: int, rotation: np.ndarray | None = None,
                 certify_rng: Rng | None = None):
        _check_interval(a, b)
        self.a, self.b, self.d = float(a), float(b), int(d)
        lo, hi = sorted((abs(a), abs(b)))
        self.inv_norm_bound = 1.0 / lo
        self.norm_bound = hi
        self.rotation = None if rotation is None else np.asarray(rotation, dtype=float)
        if self.rotation is not None:
            if np.max(np.abs(self.rotation.T @ self.rotation - np.eye(d))) > 1e-10:
                raise ValueError("rotation must be orthogonal")
        self._certify(certify_rng if certify_rng is not None else Rng(0x1C3, 0))

    def sample_batch(self, rng: Rng, count: int) -> np.ndarray:
        lam = rng.uniform(self.a, self.b, (count, self.d))
        if self.rotation is not None:
            u = np.broadcast_to(self.rotation, (count, self.d, self.d))
        else:
            g = rng.standard_normal((count, self.d, self.d))
            q, r = np.linalg.qr(g)
            signs = np.sign(np.einsum("tii->ti", r))
            signs[signs == 0] = 1.0
            u = q * signs[:, None, :]
        return np.einsum("tik,tk,tjk->tij", u, lam, u)


class AtomicTasks(TaskDistribution):
    """Uniform distribution over a finite list of invertible matrices."""

    def __init__(self, matrices):
        stack = np.asarray(matrices, dtype=float)
        if stack.ndim == 2:
            stack = stack[None]
        if stack.ndim != 3 or stack.shape[1] != stack.shape[2] or len(stack) == 0:
            raise ValueError("need a nonempty list of square matrices")
        self.atoms = stack
        self.d = stack.shape[1]
        self.exact_expectation = True
        try:
            invs = np.linalg.inv(stack)
        except np.linalg.LinAlgError:
            raise ValueError("task family not uniformly invertible") from None
        self.norm_bound = float(np.max(np.linalg.norm(stack, ord=2, axis=(1, 2))))
        self.inv_norm_bound = float(np.max(np.linalg.norm(invs, ord=2, axis=(1, 2))))

    def sample_batch(self, rng: Rng, count: int) -> np.ndarray:
        picks = rng.integers(0, len(self.atoms), count)
        return self.atoms[picks]

    def _quadrature(self, task_samples, rng):
        k = len(self.atoms)
        return self.atoms, np.full(k, 1.0 / k)


@dataclass(frozen=True)
class CovariateDistribution:
    """Zero-mean Gaussian covariate law N(0, cov)."""

    cov: SpdMatrix

    @property
    def d(self) -> int:
        return self.cov.dim

    def sample(self, rng: Rng, count: int) -> np.ndarray:
        return gaussian_sample(rng, self.cov, count)


@dataclass(frozen=True)
class Prompt:
    """One in-context episode: n labeled pairs, a query, and its target."""

    xs: np.ndarray      # (n, d)
    ys: np.ndarray      # (n, d)
    query: np.ndarray   # (d,)
    target: np.ndarray  # (d,)
    task: np.ndarray    # (d, d)

    @property
    def n(self) -> int:
        return self.xs.shape[0]

    @property
    def d(self) -> int:
        return self.xs.shape[1]

    def cross_moment(self) -> np.ndarray:
        """(1/n) sum of y_i x_i^T, the matrix the prediction contracts with."""
        return self.ys.T @ self.xs / self.n


def sample_task(dist: TaskDistribution, rng: Rng) -> np.ndarray:
    return dist.sample(rng)


def sample_prompt(task_dist: TaskDistribution, cov_dist: CovariateDistribution,
                  n: int, rng: Rng) -> Prompt:
    """One prompt: a single task, n+1 iid covariates, labels by direct solve."""
    if n < 1:
        raise ValueError("prompt length must be >= 1")
    task = task_dist.sample(rng)
    data = cov_dist.sample(rng, n + 1)
    xs, query = data[:n], data[n]
    ys = np.linalg.solve(task, xs.T).T
    target = np.linalg.solve(task, query)
    return Prompt(xs=xs, ys=ys, query=query, target=target, task=task)


def embed(prompt: Prompt) -> np.ndarray:
    """Stacked 2d x (n+1) embedding: covariates on top, labels below,
    query in the last column with a zero label slot."""
    d, n = prompt.d, prompt.n
    z = np.zeros((2 * d, n + 1))
    z[:d, :n] = prompt.xs.T
    z[d:, :n] = prompt.ys.T
    z[:d, n] = prompt.query
    return z


def unembed(z: np.ndarray, task: np.ndarray) -> Prompt:
    """Inverse of ``embed`` given the task that produced the labels."""
    two_d, t = z.shape
    d, n = two_d // 2, t - 1
    query = z[:d, n]
    return Prompt(xs=z[:d, :n].T, ys=z[d:, :n].T, query=query,
                  target=np.linalg.solve(task, query), task=task)


@dataclass
class PromptSet:
    """Batch of prompts reduced to the sufficient statistics of the loss.

    The prediction and its gradient depend on a prompt only through
    (cross_moment, query, target), so large sets store (N, d, d) + 2 (N, d)
    arrays instead of full episodes.
    """

    cross_moments: np.ndarray  # (N, d, d)
    queries: np.ndarray        # (N, d)
    targets: np.ndarray        # (N, d)
    n: int
    tasks: np.ndarray | None = field(default=None)

    def __len__(self) -> int:
        return len(self.queries)

    @property
    def d(self) -> int:
        return self.queries.shape[1]

    @classmethod
    def from_prompts(cls, prompts) -> "PromptSet":
        prompts = list(prompts)
        if not prompts:
            raise ValueError("empty sample")
        return cls(
            cross_moments=np.stack([p.cross_moment() for p in prompts]),
            queries=np.stack([p.query for p in prompts]),
            targets=np.stack([p.target for p in prompts]),
            n=prompts[0].n,
            tasks=np.stack([p.task for p in prompts]),
        )


def sample_prompt_set(task_dist: TaskDistribution, cov_dist: CovariateDistribution,
                      n: int, count: int, rng: Rng, keep_tasks: bool = False) -> PromptSet:
    """Sample ``count`` independent prompts of length n, memory-bounded.

    Draws are consumed in fixed-size chunks so the result depends only on
    the rng key, not on available memory or thread count.
    """
    if n < 1 or count < 1:
        raise ValueError("need n >= 1 and count >= 1")
    d = cov_dist.d
    chunk = max(1, _PROMPT_CHUNK // ((n + 1) * d))
    cms = np.empty((count, d, d))
    queries = np.empty((count, d))
    targets = np.empty((count, d))
    tasks = np.empty((count, d, d)) if keep_tasks else None
    start = 0
    piece = 0
    while start < count:
        stop = min(start + chunk, count)
        sub = rng.child(piece)
        batch_tasks = task_dist.sample_batch(sub, stop - start)
        data = cov_dist.sample(sub, (stop - start) * (n + 1)).reshape(stop - start, n + 1, d)
        xs, q = data[:, :n, :], data[:, n, :]
        emp = np.einsum("bni,bnj->bij", xs, xs) / n
        cms[start:stop] = np.linalg.solve(batch_tasks, emp)
        queries[start:stop] = q
        targets[start:stop] = np.linalg.solve(batch_tasks, q[..., None])[..., 0]
        if keep_tasks:
            tasks[start:stop] = batch_tasks
        start = stop
        piece += 1
    return PromptSet(cross_moments=cms, queries=queries, targets=targets, n=n, tasks=tasks)
