"""Oracle suite pitting closed forms against simulation.

Four families of checks: Monte-Carlo population risk against the closed
form, the Gaussian fourth-moment identity against sampled empirical
covariances, analytic risk gradients against central finite differences,
and stationarity plus 1/n-perturbation behavior of the analytic key-query
matrix.  Each check returns a record with the worst deviation observed so
callers can assert their own tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Rng, SpdMatrix, haar_orthogonal
from .risk import (RiskContext, closed_form_q_gradient, empirical_risk_value,
                   expected_cov_product, monte_carlo_risk, optimal_Q,
                   population_risk_closed_form, risk_gradient, trace_sigma)
from .tasks import (AtomicTasks, ConstantMultipleTasks, CovariateDistribution,
                    RotatedDiagonalTasks, sample_prompt_set)
from .transformer import Theta


@dataclass(frozen=True)
class CheckRecord:
    name: str
    worst: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.worst <= self.threshold


def _random_spd(rng: Rng, d: int, lo: float = 0.5, hi: float = 2.0) -> SpdMatrix:
    u = haar_orthogonal(rng, d)
    vals = rng.uniform(lo, hi, d)
    return SpdMatrix((u * vals) @ u.T)


def _random_theta(rng: Rng, d: int, gauge: float = 1.0) -> Theta:
    scale = 0.6 / np.sqrt(d)
    p = gauge * scale * rng.standard_normal((d, d))
    q = (scale / gauge) * rng.standard_normal((d, d))
    return Theta(P=p, Q=q)


def _random_task_dist(rng: Rng, d: int, index: int):
    kind = index % 3
    if kind == 0:
        u = haar_orthogonal(rng, d)
        atoms = [(u * rng.uniform(0.5, 2.0, d)) @ u.T for _ in range(3)]
        return AtomicTasks(atoms), True
    if kind == 1:
        a = rng.uniform(0.5, 1.5)
        return ConstantMultipleTasks(a, a + rng.uniform(0.2, 1.5), d), True
    return RotatedDiagonalTasks(1.0, 2.0, d), False


def check_closed_form_vs_monte_carlo(configs: int = 20, d: int = 5, n: int = 16,
                                     episodes: int = 100_000,
                                     seed: int = 2024) -> CheckRecord:
    """Largest |z| between the Monte-Carlo estimate and the closed form,
    in combined standard errors, over random (theta, Sigma, task family)."""
    root = Rng(seed, 101)
    worst = 0.0
    for i in range(configs):
        sub = root.child(i)
        dist, exact = _random_task_dist(sub.child(0), d, i)
        cov = CovariateDistribution(_random_spd(sub.child(1), d))
        gauge = [1.0, 0.4, 2.5][i % 3]
        theta = _random_theta(sub.child(2), d, gauge)
        ctx = RiskContext(dist, cov, n)
        cf = population_risk_closed_form(theta, ctx, task_samples=20_000,
                                         rng=None if exact else sub.child(3))
        mc = monte_carlo_risk(theta, ctx, episodes, sub.child(4))
        se = np.sqrt(cf.std_error ** 2 + mc.std_error ** 2)
        worst = max(worst, abs(mc.value - cf.value) / se)
    return CheckRecord("closed_form_vs_monte_carlo", worst, 4.0)


def check_moment_identity(configs: int = 20, samples: int = 200_000,
                          seed: int = 2025) -> CheckRecord:
    """Entrywise |z| between sampled E[X_n K X_n] and the formula."""
    root = Rng(seed, 202)
    worst = 0.0
    for i in range(configs):
        sub = root.child(i)
        d = 2 + i % 5            # dimensions 2..6
        n = 1 + (3 * i) % 16     # lengths 1..16
        cov = _random_spd(sub.child(0), d)
        k = sub.child(1).standard_normal((d, d))
        k = 0.5 * (k + k.T)
        formula = expected_cov_product(cov, k, n)
        xs = sub.child(2).standard_normal((samples, n, d)) @ cov.chol.T
        x_emp = np.einsum("bni,bnj->bij", xs, xs) / n
        prods = np.einsum("bij,jk,bkl->bil", x_emp, k, x_emp)
        mean = prods.mean(axis=0)
        se = prods.std(axis=0, ddof=1) / np.sqrt(samples)
        worst = max(worst, float(np.max(np.abs(mean - formula) / se)))
    return CheckRecord("moment_identity", worst, 4.0)


def check_gradient(configs: int = 50, step: float = 1e-5,
                   seed: int = 2026) -> CheckRecord:
    """Relative Frobenius gap between analytic gradients and central
    finite differences of the empirical risk."""
    root = Rng(seed, 303)
    worst = 0.0
    for i in range(configs):
        sub = root.child(i)
        d = 2 + i % 5
        n = 1 + i % 8
        count = 2 + i % 6
        dist, _ = _random_task_dist(sub.child(0), d, i)
        cov = CovariateDistribution(_random_spd(sub.child(1), d))
        ps = sample_prompt_set(dist, cov, n, count, sub.child(2))
        theta = _random_theta(sub.child(3), d)
        grad_p, grad_q = risk_gradient(theta, ps)

        def fd(matrix_name):
            base = getattr(theta, matrix_name)
            out = np.zeros_like(base)
            for r in range(d):
                for c in range(d):
                    for sign in (1.0, -1.0):
                        bumped = base.copy()
                        bumped[r, c] += sign * step
                        kwargs = {"P": theta.P, "Q": theta.Q}
                        kwargs[matrix_name] = bumped
                        out[r, c] += sign * empirical_risk_value(Theta(**kwargs), ps)
            return out / (2 * step)

        analytic = np.concatenate([grad_p.ravel(), grad_q.ravel()])
        numeric = np.concatenate([fd("P").ravel(), fd("Q").ravel()])
        rel = np.linalg.norm(numeric - analytic) / max(np.linalg.norm(analytic), 1e-12)
        worst = max(worst, float(rel))
    return CheckRecord("gradient_vs_finite_differences", worst, 1e-6)


def check_optimal_q_stationarity(configs: int = 10, seed: int = 2027) -> CheckRecord:
    """Norm of the closed-form Q-gradient at (I, Q_n) for exact atomic laws."""
    root = Rng(seed, 404)
    worst = 0.0
    for i in range(configs):
        sub = root.child(i)
        d = 2 + i % 5
        n = [3, 10, 64][i % 3]
        u = haar_orthogonal(sub.child(0), d)
        atoms = [(u * sub.child(1).uniform(0.5, 2.0, d)) @ u.T for _ in range(4)]
        dist = AtomicTasks(atoms)
        cov = CovariateDistribution(_random_spd(sub.child(2), d))
        ctx = RiskContext(dist, cov, n)
        qn = optimal_Q(ctx).matrix
        grad = closed_form_q_gradient(Theta(P=np.eye(d), Q=qn), ctx)
        worst = max(worst, float(np.linalg.norm(grad)))
    return CheckRecord("optimal_q_stationarity", worst, 1e-8)


def check_optimal_q_perturbation(seed: int = 2028,
                                 lengths=(100, 1000, 10_000)) -> CheckRecord:
    """Stability of n ||Q_n - Sigma^{-1}||_op across prompt lengths: the
    scaled deviation should vary by less than 20 percent."""
    root = Rng(seed, 505)
    worst = 0.0
    for i in range(6):
        sub = root.child(i)
        d = 2 + i % 4
        u = haar_orthogonal(sub.child(0), d)
        atoms = [(u * sub.child(1).uniform(0.5, 2.0, d)) @ u.T for _ in range(4)]
        dist = AtomicTasks(atoms)
        cov = _random_spd(sub.child(2), d)
        scaled = []
        for n in lengths:
            qn = optimal_Q(RiskContext(dist, CovariateDistribution(cov), n)).matrix
            scaled.append(n * np.linalg.norm(qn - cov.inverse, ord=2))
        spread = (max(scaled) - min(scaled)) / max(scaled)
        worst = max(worst, float(spread))
    return CheckRecord("optimal_q_perturbation", worst, 0.2)


def run_all(verbose: bool = True) -> list[CheckRecord]:
    records = [
        check_closed_form_vs_monte_carlo(),
        check_moment_identity(),
        check_gradient(),
        check_optimal_q_stationarity(),
        check_optimal_q_perturbation(),
    ]
    if verbose:
        for rec in records:
            status = "PASS" if rec.passed else "FAIL"
            print(f"[{status}] {rec.name}: worst {rec.worst:.3e} "
                  f"(threshold {rec.threshold:.3e})")
    return records
