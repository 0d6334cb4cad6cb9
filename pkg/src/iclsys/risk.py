"""Risk functionals for in-context linear-system solving.

Provides the empirical risk over sampled prompts, the Monte-Carlo and
closed-form population risks, the infinite-prompt limiting risk, truncated
variants, analytic gradients, and the analytic near-optimal key-query
matrix.  The closed forms rest on the Gaussian fourth-moment identity
E[X K X] = ((n+1)/n) S K S + (Tr(S K)/n) S for the length-n empirical
covariance X of N(0, S) samples and symmetric K.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .numerics import Rng, SpdMatrix
from .tasks import CovariateDistribution, PromptSet, TaskDistribution
from .transformer import Theta, predict_batch

_MC_CHUNK = 4096
DEFAULT_TASK_SAMPLES = 10_000


@dataclass(frozen=True)
class RiskContext:
    """Everything a population risk depends on: task law, covariates, length."""

    task_dist: TaskDistribution
    cov_dist: CovariateDistribution
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("prompt length must be >= 1")

    @property
    def d(self) -> int:
        return self.cov_dist.d


@dataclass(frozen=True)
class RiskReport:
    value: float
    std_error: float
    method: str
    episodes: int = 0
    event_frequency: float | None = None

    def to_json(self) -> str:
        obj = {"value": self.value, "std_error": self.std_error,
               "method": self.method, "episodes": self.episodes}
        if self.event_frequency is not None:
            obj["event_frequency"] = self.event_frequency
        return json.dumps(obj)


@dataclass(frozen=True)
class TruncationEvent:
    """Bounded-data event: the query norm and the empirical-covariance
    operator norm both stay under thresholds determined by (cov, d, n, t)."""

    t: float
    query_bound: float
    cov_op_bound: float

    @classmethod
    def from_context(cls, cov: SpdMatrix, n: int, t: float) -> "TruncationEvent":
        if t <= 0:
            raise ValueError("truncation parameter must be positive")
        return cls(
            t=t,
            query_bound=np.sqrt(cov.trace()) + t,
            cov_op_bound=cov.op_norm() * (1.0 + t + np.sqrt(cov.dim / n)),
        )


def trace_sigma(cov: SpdMatrix, K: np.ndarray) -> float:
    """Covariance-weighted trace: sum of eigval_l(cov) <K phi_l, phi_l>.

    Equals Tr(cov K) for symmetric K; non-symmetric inputs are symmetrized
    since only the symmetric part contributes.
    """
    k = np.asarray(K, dtype=float)
    k = 0.5 * (k + k.T)
    return float(np.sum(cov.matrix * k))


def expected_cov_product(cov: SpdMatrix, K: np.ndarray, n: int) -> np.ndarray:
    """E[X_n K X_n] for the empirical covariance X_n of n Gaussian samples."""
    if n < 1:
        raise ValueError("sample count must be >= 1")
    k = np.asarray(K, dtype=float)
    k = 0.5 * (k + k.T)
    s = cov.matrix
    return (n + 1) / n * (s @ k @ s) + (trace_sigma(cov, k) / n) * s


def _as_prompt_set(prompts) -> PromptSet:
    if isinstance(prompts, PromptSet):
        return prompts
    return PromptSet.from_prompts(prompts)


def _losses(theta: Theta, ps: PromptSet) -> np.ndarray:
    residual = predict_batch(theta, ps.cross_moments, ps.queries) - ps.targets
    return np.einsum("bi,bi->b", residual, residual)


def empirical_risk_value(theta: Theta, prompts) -> float:
    """Mean squared prediction error only; cheaper than ``empirical_risk``."""
    return float(np.mean(_losses(theta, _as_prompt_set(prompts))))


def empirical_risk(theta: Theta, prompts) -> RiskReport:
    """Mean squared prediction error over a fixed set of prompts."""
    ps = _as_prompt_set(prompts)
    losses = _losses(theta, ps)
    n = len(losses)
    se = float(np.std(losses, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return RiskReport(value=float(np.mean(losses)), std_error=se,
                      method="empirical", episodes=n)


def risk_gradient(theta: Theta, prompts) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradient of the empirical risk in (P, Q).

    With C_i the prompt cross moment and r_i the residual:
      dP = (2/N) sum r_i (C_i Q x_i)^T,   dQ = (2/N) sum C_i^T P^T r_i x_i^T.
    """
    ps = _as_prompt_set(prompts)
    n = len(ps)
    cqx = np.einsum("bij,bj->bi", ps.cross_moments, ps.queries @ theta.Q.T)
    residual = cqx @ theta.P.T - ps.targets
    grad_p = 2.0 / n * np.einsum("bi,bj->ij", residual, cqx)
    ptr = residual @ theta.P
    ctptr = np.einsum("bji,bj->bi", ps.cross_moments, ptr)
    grad_q = 2.0 / n * np.einsum("bi,bj->ij", ctptr, ps.queries)
    return grad_p, grad_q


def _closed_form_pieces(tasks: np.ndarray, P: np.ndarray, Q: np.ndarray,
                        cov: SpdMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-task (limiting value, fluctuation coefficient, truth magnitude).

    limiting value: || (P A^{-1} S Q - A^{-1}) S^{1/2} ||_F^2
    fluctuation:    Tr(P A^{-1} S Q S Q^T S A^{-1} P^T)
                    + Tr_S(Q S Q^T) Tr(P A^{-1} S A^{-1} P^T)
    truth:          Tr(A^{-1} S A^{-T}) = E ||A^{-1} x||^2
    """
    s = cov.matrix
    eye = np.broadcast_to(np.eye(tasks.shape[1]), tasks.shape)
    f = np.linalg.solve(tasks, eye)
    pf = np.einsum("ij,tjk->tik", P, f)
    sqs = s @ Q @ s
    w = sqs @ Q.T @ s
    truth = np.einsum("tij,jk,tik->t", f, s, f)
    cross = np.einsum("tij,tij->t", pf @ sqs, f)
    quad = np.einsum("tij,tij->t", pf @ w, pf)
    p_energy = np.einsum("tij,jk,tik->t", pf, s, pf)
    limiting = truth - 2.0 * cross + quad
    fluct = quad + trace_sigma(cov, Q @ s @ Q.T) * p_energy
    return limiting, fluct, truth


def population_risk_closed_form(theta: Theta, ctx: RiskContext,
                                task_samples: int = DEFAULT_TASK_SAMPLES,
                                rng: Rng | None = None) -> RiskReport:
    """Population risk with the Gaussian expectation integrated exactly.

    The remaining expectation over the task law is exact for atomic and
    constant-multiple families and Monte-Carlo (with reported standard
    error) otherwise.
    """
    def fn(tasks):
        limiting, fluct, _ = _closed_form_pieces(tasks, theta.P, theta.Q, ctx.cov_dist.cov)
        return limiting + fluct / ctx.n

    mean, se = ctx.task_dist.expect(fn, task_samples, rng)
    return RiskReport(value=max(float(mean), 0.0), std_error=float(se),
                      method="closed_form", episodes=0)


def limiting_risk(theta: Theta, ctx: RiskContext,
                  task_samples: int = DEFAULT_TASK_SAMPLES,
                  rng: Rng | None = None) -> RiskReport:
    """Infinite-prompt-length limit of the population risk."""
    def fn(tasks):
        limiting, _, _ = _closed_form_pieces(tasks, theta.P, theta.Q, ctx.cov_dist.cov)
        return limiting

    mean, se = ctx.task_dist.expect(fn, task_samples, rng)
    return RiskReport(value=max(float(mean), 0.0), std_error=float(se),
                      method="limiting", episodes=0)


def fluctuation_term(theta: Theta, task_dist: TaskDistribution, cov: SpdMatrix,
                     task_samples: int = DEFAULT_TASK_SAMPLES,
                     rng: Rng | None = None) -> tuple[float, float]:
    """(mean, std_err) of the finite-length risk excess coefficient:
    n (R_n - R_inf) for any n, evaluated over the task law."""
    def fn(tasks):
        _, fluct, _ = _closed_form_pieces(tasks, theta.P, theta.Q, cov)
        return fluct

    mean, se = task_dist.expect(fn, task_samples, rng)
    return float(mean), float(se)


def ground_truth_magnitude(ctx: RiskContext,
                           task_samples: int = DEFAULT_TASK_SAMPLES,
                           rng: Rng | None = None) -> float:
    """E ||A^{-1} x||^2, the normalizer of shifted relative errors."""
    s = ctx.cov_dist.cov.matrix

    def fn(tasks):
        eye = np.broadcast_to(np.eye(tasks.shape[1]), tasks.shape)
        f = np.linalg.solve(tasks, eye)
        return np.einsum("tij,jk,tik->t", f, s, f)

    mean, _ = ctx.task_dist.expect(fn, task_samples, rng)
    return float(mean)


def monte_carlo_risk(theta: Theta, ctx: RiskContext, episodes: int,
                     rng: Rng) -> RiskReport:
    """Unbiased population-risk estimate over freshly sampled prompts.

    Episodes are drawn in fixed-size chunks with per-chunk child streams, so
    the value depends only on the rng key.
    """
    if episodes < 1:
        raise ValueError("need at least one episode")
    total = 0.0
    total_sq = 0.0
    done = 0
    piece = 0
    while done < episodes:
        count = min(_MC_CHUNK, episodes - done)
        ps = _sample_episode_stats(ctx, count, rng.child(piece))
        losses = _losses(theta, ps)
        total += float(np.sum(losses))
        total_sq += float(np.sum(losses * losses))
        done += count
        piece += 1
    mean = total / episodes
    var = max(total_sq / episodes - mean * mean, 0.0)
    se = np.sqrt(var / episodes) if episodes > 1 else 0.0
    return RiskReport(value=mean, std_error=float(se),
                      method="monte_carlo", episodes=episodes)


def _sample_episode_stats(ctx: RiskContext, count: int, rng: Rng,
                          keep_emp_cov: bool = False):
    """Sample episode sufficient statistics; optionally keep X_n stacks."""
    d, n = ctx.d, ctx.n
    tasks = ctx.task_dist.sample_batch(rng, count)
    data = ctx.cov_dist.sample(rng, count * (n + 1)).reshape(count, n + 1, d)
    xs, queries = data[:, :n, :], data[:, n, :]
    emp = np.einsum("bni,bnj->bij", xs, xs) / n
    cms = np.linalg.solve(tasks, emp)
    targets = np.linalg.solve(tasks, queries[..., None])[..., 0]
    ps = PromptSet(cross_moments=cms, queries=queries, targets=targets, n=n, tasks=tasks)
    if keep_emp_cov:
        return ps, emp
    return ps


def truncated_monte_carlo_risk(theta: Theta, ctx: RiskContext, t: float,
                               episodes: int, rng: Rng) -> RiskReport:
    """Monte-Carlo risk with each loss gated by the bounded-data event.

    Also reports the empirical frequency of the event.
    """
    event = TruncationEvent.from_context(ctx.cov_dist.cov, ctx.n, t)
    total = 0.0
    total_sq = 0.0
    hits = 0
    done = 0
    piece = 0
    while done < episodes:
        count = min(_MC_CHUNK, episodes - done)
        ps, emp = _sample_episode_stats(ctx, count, rng.child(piece), keep_emp_cov=True)
        losses = _losses(theta, ps)
        qnorm = np.linalg.norm(ps.queries, axis=1)
        opnorm = np.linalg.norm(emp, ord=2, axis=(1, 2))
        inside = (qnorm <= event.query_bound) & (opnorm <= event.cov_op_bound)
        gated = losses * inside
        total += float(np.sum(gated))
        total_sq += float(np.sum(gated * gated))
        hits += int(np.sum(inside))
        done += count
        piece += 1
    mean = total / episodes
    var = max(total_sq / episodes - mean * mean, 0.0)
    se = np.sqrt(var / episodes) if episodes > 1 else 0.0
    return RiskReport(value=mean, std_error=float(se), method="truncated_monte_carlo",
                      episodes=episodes, event_frequency=hits / episodes)


@dataclass(frozen=True)
class OptimalQ:
    """Analytic minimizer of Q -> R_n(I, Q) plus the moment behind it."""

    matrix: np.ndarray
    mean_inverse_square: np.ndarray
    moment_std_error: float


def mean_inverse_square(task_dist: TaskDistribution,
                        task_samples: int = DEFAULT_TASK_SAMPLES,
                        rng: Rng | None = None) -> tuple[np.ndarray, float]:
    """E[A^{-T} A^{-1}]; equals E[A^{-2}] on the symmetric families used here."""
    def fn(tasks):
        eye = np.broadcast_to(np.eye(tasks.shape[1]), tasks.shape)
        f = np.linalg.solve(tasks, eye)
        return np.einsum("tji,tjk->tik", f, f)

    mean, se = task_dist.expect(fn, task_samples, rng)
    b = 0.5 * (mean + mean.T)
    return b, float(np.max(se))


def optimal_Q(ctx: RiskContext, task_samples: int = DEFAULT_TASK_SAMPLES,
              rng: Rng | None = None) -> OptimalQ:
    """Solve the critical-point equation of Q -> R_n(I, Q).

    With B = E[A^{-T}A^{-1}] and S the covariate covariance, the stationarity
    condition E[X_n B X_n] Q S = S B S reduces to
        ((n+1)/n B S + Tr_S(B)/n I) Q = B,
    whose solution tends to S^{-1} at rate 1/n.
    """
    b, b_se = mean_inverse_square(ctx.task_dist, task_samples, rng)
    s = ctx.cov_dist.cov.matrix
    d = ctx.d
    lhs = (ctx.n + 1) / ctx.n * (b @ s) + (trace_sigma(ctx.cov_dist.cov, b) / ctx.n) * np.eye(d)
    try:
        q = np.linalg.solve(lhs, b)
    except np.linalg.LinAlgError:
        raise ValueError("degenerate task second moment") from None
    if not np.all(np.isfinite(q)):
        raise ValueError("degenerate task second moment")
    return OptimalQ(matrix=q, mean_inverse_square=b, moment_std_error=b_se)


def closed_form_q_gradient(theta: Theta, ctx: RiskContext,
                           task_samples: int = DEFAULT_TASK_SAMPLES,
                           rng: Rng | None = None) -> np.ndarray:
    """Gradient in Q of the closed-form population risk at (P, Q).

    Assembled from the fourth-moment identity:
      2 E[X_n G_P X_n] Q S - 2 S G_x S,
    with G_P = E[A^{-T} P^T P A^{-1}] and G_x = E[A^{-T} P^T A^{-1}].
    """
    p = theta.P

    def fn(tasks):
        eye = np.broadcast_to(np.eye(tasks.shape[1]), tasks.shape)
        f = np.linalg.solve(tasks, eye)
        pf = np.einsum("ij,tjk->tik", p, f)
        gp = np.einsum("tji,tjk->tik", pf, pf)
        gx = np.einsum("tji,tjk->tik", pf, f)
        return np.stack([gp, gx], axis=1)

    mean, _ = ctx.task_dist.expect(fn, task_samples, rng)
    gp, gx = mean[0], mean[1]
    s = ctx.cov_dist.cov.matrix
    exx = expected_cov_product(ctx.cov_dist.cov, gp, ctx.n)
    return 2.0 * (exx @ theta.Q @ s) - 2.0 * (s @ gx @ s)
