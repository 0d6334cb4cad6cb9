"""Empirical-risk minimization over the reduced transformer parameters.

Full-batch projected gradient descent with Armijo backtracking on a prompt
set that is sampled once and then fixed.  Deterministic given the rng key,
which keeps experiment sweeps replayable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import Rng, spectral_norm
from .risk import RiskContext, empirical_risk_value, risk_gradient
from .tasks import PromptSet, sample_prompt_set
from .transformer import Theta, project_to_budget

ARMIJO_C = 1e-4
MAX_HALVINGS = 40


@dataclass(frozen=True)
class GaussianInit:
    """iid Gaussian entries; default scale 0.1/sqrt(d) biases training toward
    the scalar solution family."""

    scale: float | None = None


@dataclass(frozen=True)
class NearInit:
    """Start at (P0, Q0) plus iid Gaussian noise of the given scale."""

    P0: np.ndarray
    Q0: np.ndarray
    noise: float = 0.0


@dataclass(frozen=True)
class TrainConfig:
    num_prompts: int                      # N, sampled once and reused
    prompt_length: int                    # n
    budget: float = 10.0                  # operator-norm ball radius M
    step_size: float = 0.5
    max_iterations: int = 50_000
    grad_tol: float = 1e-8
    init: GaussianInit | NearInit = GaussianInit()
    batch: int | None = None              # None = full batch
    bb_steps: bool = True                 # secant-seeded trial steps
    max_step: float | None = None         # cap on the trial step


@dataclass
class TrainTrace:
    iterations: list = field(default_factory=list)
    risks: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    p_norms: list = field(default_factory=list)
    q_norms: list = field(default_factory=list)

    def record(self, it: int, risk: float, grad_norm: float, theta: Theta):
        self.iterations.append(it)
        self.risks.append(risk)
        self.grad_norms.append(grad_norm)
        self.p_norms.append(spectral_norm(theta.P))
        self.q_norms.append(spectral_norm(theta.Q))

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("iteration,risk,grad_norm,p_norm,q_norm\n")
            for row in zip(self.iterations, self.risks, self.grad_norms,
                           self.p_norms, self.q_norms):
                fh.write("%d,%.17g,%.17g,%.17g,%.17g\n" % row)


def init_theta(cfg: TrainConfig, d: int, rng: Rng) -> Theta:
    if isinstance(cfg.init, NearInit):
        p = np.asarray(cfg.init.P0, dtype=float).copy()
        q = np.asarray(cfg.init.Q0, dtype=float).copy()
        if cfg.init.noise > 0:
            p += cfg.init.noise * rng.standard_normal((d, d))
            q += cfg.init.noise * rng.standard_normal((d, d))
    else:
        scale = cfg.init.scale if cfg.init.scale is not None else 0.1 / np.sqrt(d)
        p = scale * rng.standard_normal((d, d))
        q = scale * rng.standard_normal((d, d))
    return project_to_budget(Theta(P=p, Q=q, budget=cfg.budget))


def backtracking_step(theta: Theta, grads: tuple[np.ndarray, np.ndarray],
                      risk_fn, step: float) -> tuple[Theta, float]:
    """Halve the step until the projected point satisfies Armijo decrease."""
    if step <= 0:
        raise ValueError("step size must be positive")
    grad_p, grad_q = grads
    base = risk_fn(theta)
    grad_sq = float(np.sum(grad_p * grad_p) + np.sum(grad_q * grad_q))
    for _ in range(MAX_HALVINGS + 1):
        trial = project_to_budget(Theta(P=theta.P - step * grad_p,
                                        Q=theta.Q - step * grad_q,
                                        budget=theta.budget))
        if risk_fn(trial) <= base - ARMIJO_C * step * grad_sq:
            return trial, step
        step *= 0.5
    raise RuntimeError("no descent direction")


def train(cfg: TrainConfig, ctx: RiskContext, rng: Rng,
          prompt_set: PromptSet | None = None) -> tuple[Theta, TrainTrace]:
    """Minimize the empirical risk on a fixed sampled training set.

    Returns the final parameters (within the operator-norm budget) and the
    per-iteration trace.  A pre-sampled prompt set may be supplied to share
    data across configurations.
    """
    if cfg.budget < max(1.0, ctx.cov_dist.cov.inv_op_norm()) - 1e-12:
        raise ValueError("budget below max(1, ||Sigma^-1||)")
    if prompt_set is None:
        prompt_set = sample_prompt_set(ctx.task_dist, ctx.cov_dist,
                                       cfg.prompt_length, cfg.num_prompts,
                                       rng.child(0))
    theta = init_theta(cfg, ctx.d, rng.child(1))
    trace = TrainTrace()
    full = cfg.batch is None or cfg.batch >= len(prompt_set)
    initial_risk = empirical_risk_value(theta, prompt_set)
    step = cfg.step_size
    offset = 0
    prev: tuple[Theta, tuple[np.ndarray, np.ndarray]] | None = None
    for it in range(cfg.max_iterations):
        if full:
            batch = prompt_set
        else:
            idx = (offset + np.arange(cfg.batch)) % len(prompt_set)
            batch = PromptSet(cross_moments=prompt_set.cross_moments[idx],
                              queries=prompt_set.queries[idx],
                              targets=prompt_set.targets[idx],
                              n=prompt_set.n)
            offset = (offset + cfg.batch) % len(prompt_set)
        grads = risk_gradient(theta, batch)
        grad_norm = float(np.sqrt(np.sum(grads[0] ** 2) + np.sum(grads[1] ** 2)))
        risk_now = empirical_risk_value(theta, batch)
        trace.record(it, risk_now, grad_norm, theta)
        if risk_now > 1e6 * max(initial_risk, 1e-300):
            raise RuntimeError("step size too large")
        if grad_norm <= cfg.grad_tol:
            break
        # Barzilai-Borwein step seed; the quartic valley is too
        # ill-conditioned for plain step doubling (full batch only, secant
        # pairs are meaningless across minibatches)
        if cfg.bb_steps and full and prev is not None:
            sp, sq = theta.P - prev[0].P, theta.Q - prev[0].Q
            yp, yq = grads[0] - prev[1][0], grads[1] - prev[1][1]
            sy = float(np.sum(sp * yp) + np.sum(sq * yq))
            if sy > 1e-300:
                step = float(np.sum(sp * sp) + np.sum(sq * sq)) / sy
        if cfg.max_step is not None:
            step = min(step, cfg.max_step)
        prev = (theta, grads)
        theta, accepted = backtracking_step(
            theta, grads, lambda th: empirical_risk_value(th, batch), step)
        step = accepted * 2.0
        if cfg.max_step is not None:
            step = min(step, cfg.max_step)
    return theta, trace
