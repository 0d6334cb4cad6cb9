"""Task-diversity analysis.

A pre-training task law generalizes under task shift when every minimizer
of its infinite-prompt risk also minimizes the downstream one.  Two
checkable sufficient conditions are implemented: support containment
(decided symbolically per family) and triviality of the centralizer of the
task ratios A1 A2^{-1}.  Simultaneously diagonalizable families are flagged
as non-diverse together with an explicit witness parameter that is optimal
in-domain yet bad downstream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .numerics import Rng, SpdMatrix, identity_spd, nullspace
from .risk import fluctuation_term
from .tasks import (AtomicTasks, ConstantMultipleTasks, RotatedDiagonalTasks,
                    TaskDistribution)
from .transformer import Theta

_TRACE_CHECKPOINTS = (1, 2, 4, 8, 16, 32, 64)


@dataclass(frozen=True)
class CentralizerReport:
    generators_used: int
    dimension: int
    basis: np.ndarray           # (d, d, dimension)
    trivial: bool
    dimension_trace: list = field(default_factory=list)  # (count, dim) pairs


@dataclass(frozen=True)
class DiversityVerdict:
    verdict: str  # diverse_by_support | diverse_by_centralizer | not_diverse | undetermined
    centralizer_report: CentralizerReport | None = None
    witness: Theta | None = None
    witness_generator: np.ndarray | None = None

    def to_json(self) -> str:
        obj = {"verdict": self.verdict}
        if self.centralizer_report is not None:
            rep = self.centralizer_report
            obj["centralizer"] = {
                "generators_used": rep.generators_used,
                "dimension": rep.dimension,
                "trivial": rep.trivial,
                "dimension_trace": [list(p) for p in rep.dimension_trace],
                "basis": [m.ravel().tolist() for m in np.moveaxis(rep.basis, -1, 0)],
            }
        if self.witness is not None:
            obj["witness"] = {"P": self.witness.P.ravel().tolist(),
                              "Q": self.witness.Q.ravel().tolist()}
        if self.witness_generator is not None:
            obj["witness_generator"] = self.witness_generator.ravel().tolist()
        return json.dumps(obj)


def _commutant_rows(generator: np.ndarray) -> np.ndarray:
    """Linear constraints on vec(M) equivalent to S M = M S."""
    d = generator.shape[0]
    eye = np.eye(d)
    return np.kron(eye, generator) - np.kron(generator.T, eye)


def centralizer(generators, tol: float = 1e-9) -> CentralizerReport:
    """Joint commutant of the generators via stacked Kronecker constraints.

    The nullspace dimension is recorded at growing generator counts so that
    stagnation (and hence sampling sufficiency) is visible in the report.
    """
    gens = [np.asarray(g, dtype=float) for g in generators]
    if not gens:
        raise ValueError("need at least one generator")
    d = gens[0].shape[0]
    rows = np.concatenate([_commutant_rows(g) for g in gens], axis=0)
    trace = []
    for count in _TRACE_CHECKPOINTS:
        if count >= len(gens):
            break
        trace.append((count, nullspace(rows[:count * d * d], tol).shape[1]))
    basis = nullspace(rows, tol)
    dim = basis.shape[1]
    trace.append((len(gens), dim))
    trivial = False
    if dim == 1:
        m = basis[:, 0].reshape(d, d)
        scalar_part = (np.trace(m) / d) * np.eye(d)
        trivial = bool(np.linalg.norm(m - scalar_part) <= max(tol, 1e-12) * np.linalg.norm(m))
    return CentralizerReport(generators_used=len(gens), dimension=dim,
                             basis=basis.reshape(d, d, dim), trivial=trivial,
                             dimension_trace=trace)


def sample_generators(dist: TaskDistribution, pairs: int, rng: Rng) -> list[np.ndarray]:
    """Ratios A1 A2^{-1} of independently drawn task pairs."""
    if pairs < 1:
        raise ValueError("need at least one pair")
    tasks = dist.sample_batch(rng, 2 * pairs)
    a1, a2 = tasks[:pairs], tasks[pairs:]
    gens = np.linalg.solve(a2.transpose(0, 2, 1), a1.transpose(0, 2, 1)).transpose(0, 2, 1)
    return list(gens)


def simultaneously_diagonalizable(tasks, tol: float = 1e-8) -> np.ndarray | None:
    """Common orthogonal eigenbasis of a family of symmetric matrices, if any.

    The candidate basis comes from the member with the widest eigenvalue
    gaps; acceptance requires every conjugated member to be diagonal up to
    tol times its operator norm.
    """
    stack = np.asarray(list(tasks), dtype=float)
    if np.max(np.abs(stack - stack.transpose(0, 2, 1))) > 1e-10 * max(1.0, np.max(np.abs(stack))):
        raise ValueError("matrix not symmetric")
    vals = np.linalg.eigvalsh(stack)
    gaps = np.min(np.diff(vals, axis=1), axis=1) if vals.shape[1] > 1 else np.ones(len(stack))
    candidate = int(np.argmax(gaps))
    _, u = np.linalg.eigh(stack[candidate])
    conj = np.einsum("ji,tjk,kl->til", u, stack, u)
    off = conj - np.einsum("tii,ij->tij", conj, np.eye(stack.shape[1]))
    norms = np.linalg.norm(stack, ord=2, axis=(1, 2))
    if np.all(np.max(np.abs(off), axis=(1, 2)) <= tol * norms):
        return u
    return None


def is_limiting_minimizer(theta: Theta, tasks, cov: SpdMatrix,
                          tol: float = 1e-8) -> bool:
    """True when P A^{-1} S Q = A^{-1} holds on every supplied task."""
    stack = np.asarray(list(tasks), dtype=float)
    eye = np.broadcast_to(np.eye(stack.shape[1]), stack.shape)
    f = np.linalg.solve(stack, eye)
    lhs = np.einsum("ij,tjk,kl->til", theta.P, f, cov.matrix @ theta.Q)
    num = np.linalg.norm(lhs - f, axis=(1, 2))
    den = np.linalg.norm(f, axis=(1, 2))
    return bool(np.max(num / den) <= tol)


def _interval(dist: TaskDistribution):
    if isinstance(dist, (ConstantMultipleTasks, RotatedDiagonalTasks)):
        return dist.a, dist.b
    return None


def support_contains(train: TaskDistribution, test: TaskDistribution) -> bool | None:
    """Symbolic support containment supp(test) within supp(train).

    Only containments that are certain from the family parameters are
    reported; anything else returns None (unknown), never a sampled guess.
    """
    ti = _interval(train)
    si = _interval(test)
    fresh_train = isinstance(train, RotatedDiagonalTasks) and train.rotation is None
    if fresh_train and si is not None:
        if isinstance(test, ConstantMultipleTasks) or isinstance(test, RotatedDiagonalTasks):
            return ti[0] <= si[0] and si[1] <= ti[1]
    if fresh_train and isinstance(test, AtomicTasks):
        sym = np.max(np.abs(test.atoms - test.atoms.transpose(0, 2, 1))) < 1e-12
        if not sym:
            return None
        vals = np.linalg.eigvalsh(test.atoms)
        return bool(ti[0] - 1e-12 <= vals.min() and vals.max() <= ti[1] + 1e-12)
    if isinstance(train, ConstantMultipleTasks) and isinstance(test, ConstantMultipleTasks):
        return ti[0] <= si[0] and si[1] <= ti[1]
    if isinstance(train, RotatedDiagonalTasks) and isinstance(test, RotatedDiagonalTasks):
        if train.rotation is not None and test.rotation is not None:
            same_u = np.max(np.abs(train.rotation - test.rotation)) < 1e-12
            if same_u:
                return ti[0] <= si[0] and si[1] <= ti[1]
    if isinstance(train, RotatedDiagonalTasks) and train.rotation is not None \
            and isinstance(test, ConstantMultipleTasks):
        return ti[0] <= si[0] and si[1] <= ti[1]
    if isinstance(train, AtomicTasks) and isinstance(test, AtomicTasks):
        ok = all(any(np.max(np.abs(a - b)) < 1e-12 for b in train.atoms) for a in test.atoms)
        return bool(ok)
    return None


def _witness_from_basis(u: np.ndarray, cov: SpdMatrix) -> Theta:
    """Parameters that memorize the common eigenbasis: P = U D U^T with
    distinct diagonal, Q = S^{-1} P^{-1}."""
    d = u.shape[0]
    diag = 1.0 + np.arange(d) / d
    p = (u * diag) @ u.T
    p_inv = (u / diag) @ u.T
    return Theta(P=p, Q=cov.inverse @ p_inv)


def diversity_verdict(train_dist: TaskDistribution, test_dist: TaskDistribution,
                      pairs: int = 32, tol: float = 1e-9, rng: Rng | None = None,
                      cov: SpdMatrix | None = None) -> DiversityVerdict:
    """Classify the train law's diversity relative to the test law.

    Order of decision: trivial centralizer of sampled ratios (strongest,
    distribution-free), then symbolic support containment, then the
    simultaneous-diagonalizability obstruction with an explicit witness.
    """
    if train_dist.d != test_dist.d:
        raise ValueError("distributions must share the dimension")
    rng = rng if rng is not None else Rng(0xD17E, 0)
    cov = cov if cov is not None else identity_spd(train_dist.d)
    gens = sample_generators(train_dist, pairs, rng.child(0))
    report = centralizer(gens, tol)
    if report.trivial:
        return DiversityVerdict(verdict="diverse_by_centralizer", centralizer_report=report)
    contained = support_contains(train_dist, test_dist)
    if contained:
        return DiversityVerdict(verdict="diverse_by_support", centralizer_report=report)
    train_tasks = train_dist.sample_batch(rng.child(1), 16)
    sym_ok = np.max(np.abs(train_tasks - train_tasks.transpose(0, 2, 1))) \
        <= 1e-10 * max(1.0, np.max(np.abs(train_tasks)))
    if sym_ok:
        u = simultaneously_diagonalizable(train_tasks, tol=1e-8)
        if u is not None:
            test_gens = sample_generators(test_dist, pairs, rng.child(2))
            for g in test_gens:
                conj = u.T @ g @ u
                off = conj - np.diag(np.diag(conj))
                if np.max(np.abs(off)) > 1e-6 * np.linalg.norm(g, ord=2):
                    return DiversityVerdict(verdict="not_diverse",
                                            centralizer_report=report,
                                            witness=_witness_from_basis(u, cov),
                                            witness_generator=g)
    return DiversityVerdict(verdict="undetermined", centralizer_report=report)


def distance_surrogate(train_dist: TaskDistribution, test_dist: TaskDistribution,
                       theta: Theta, cov: SpdMatrix,
                       task_samples: int = 10_000, rng: Rng | None = None) -> float:
    """Gap of the finite-length fluctuation coefficient between the two laws.

    Evaluates |E_train f(A; theta) - E_test f(A; theta)| at the supplied
    parameters; an upper-bound diagnostic for the distribution distance, not
    the sup-inf quantity itself.
    """
    rng = rng if rng is not None else Rng(0xD157, 0)
    f_train, _ = fluctuation_term(theta, train_dist, cov, task_samples, rng.child(0))
    f_test, _ = fluctuation_term(theta, test_dist, cov, task_samples, rng.child(1))
    return abs(f_train - f_test)
