"""Single-layer linear attention in full and reduced parameterizations.

The reduced form keeps only the two d x d blocks that the in-context
prediction actually depends on; the full 2d x 2d form exists to validate
that equivalence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .numerics import spectral_norm
from .tasks import Prompt


@dataclass(frozen=True)
class Theta:
    """Reduced parameters: value block P, key-query block Q, norm budget M."""

    P: np.ndarray
    Q: np.ndarray
    budget: float = np.inf

    @property
    def d(self) -> int:
        return self.P.shape[0]

    def norm(self) -> float:
        return max(spectral_norm(self.P), spectral_norm(self.Q))

    def within_budget(self, slack: float = 1e-12) -> bool:
        return self.norm() <= self.budget + slack

    def to_json(self) -> str:
        return json.dumps({
            "d": self.d,
            "M": None if np.isinf(self.budget) else self.budget,
            "P": self.P.ravel().tolist(),
            "Q": self.Q.ravel().tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "Theta":
        obj = json.loads(text)
        d = int(obj["d"])
        budget = obj.get("M")
        return cls(
            P=np.asarray(obj["P"], dtype=float).reshape(d, d),
            Q=np.asarray(obj["Q"], dtype=float).reshape(d, d),
            budget=np.inf if budget is None else float(budget),
        )


@dataclass(frozen=True)
class FullTheta:
    """Unrestricted 2d x 2d attention parameters."""

    Pfull: np.ndarray
    Qfull: np.ndarray

    @classmethod
    def from_reduced(cls, theta: Theta) -> "FullTheta":
        d = theta.d
        pf = np.zeros((2 * d, 2 * d))
        qf = np.zeros((2 * d, 2 * d))
        pf[d:, d:] = theta.P
        qf[:d, :d] = theta.Q
        return cls(Pfull=pf, Qfull=qf)


def forward_full(theta: FullTheta, Z: np.ndarray) -> np.ndarray:
    """One attention layer: Z + P Z (Z^T Q Z) / (T - 1) on a length-T sequence."""
    t = Z.shape[1]
    if t < 2:
        raise ValueError("normalization undefined")
    return Z + theta.Pfull @ Z @ (Z.T @ theta.Qfull @ Z) / (t - 1)


def predict(theta: Theta, prompt: Prompt) -> np.ndarray:
    """In-context prediction P (1/n sum y_i x_i^T) Q x_query.

    Equals the label slot of the query column of ``forward_full`` applied to
    the embedded prompt with the reduced blocks placed at (2,2) and (1,1).
    """
    return theta.P @ prompt.cross_moment() @ (theta.Q @ prompt.query)


def predict_batch(theta: Theta, cross_moments: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Vectorized prediction over stacked (N, d, d) moments and (N, d) queries."""
    qx = queries @ theta.Q.T
    return np.einsum("bij,bj->bi", cross_moments, qx) @ theta.P.T


def project_to_budget(theta: Theta) -> Theta:
    """Rescale P and Q independently onto the operator-norm ball of radius M."""
    if theta.budget <= 0:
        raise ValueError("budget must be positive")
    if np.isinf(theta.budget):
        return theta
    p, q = theta.P, theta.Q
    np_norm = spectral_norm(p)
    if np_norm > theta.budget:
        p = p * (theta.budget / np_norm)
    nq_norm = spectral_norm(q)
    if nq_norm > theta.budget:
        q = q * (theta.budget / nq_norm)
    if p is theta.P and q is theta.Q:
        return theta
    return Theta(P=p, Q=q, budget=theta.budget)
