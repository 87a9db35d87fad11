"""Non-agentic comparison strategies: random expert, random solution, MLP router."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .experts import ExpertProfile, preferred_family
from .fusion import Solution, single
from .scenes import Sample

log = logging.getLogger(__name__)


def _eligible_ids(sample: Sample, pool: list[ExpertProfile]) -> set[str]:
    fam = preferred_family(sample.domain)
    return {e.expert_id for e in pool if e.family is fam}


def rand_model(sample: Sample, pool: list[ExpertProfile], rng: np.random.Generator) -> Solution:
    """A uniformly drawn single expert from the family preferred for the sample's true domain."""
    if not pool:
        raise ValueError("empty expert pool")
    ids = [e.expert_id for e in pool if e.expert_id in _eligible_ids(sample, pool)]
    if not ids:
        ids = [e.expert_id for e in pool]
    return single(ids[int(rng.integers(len(ids)))])


def restricted_candidates(sample: Sample, candidates: list[Solution], pool: list[ExpertProfile]) -> list[Solution]:
    eligible = _eligible_ids(sample, pool)
    return [c for c in candidates if all(e in eligible for e in c.experts)]


def rand_sol(sample: Sample, candidates: list[Solution], pool: list[ExpertProfile],
             rng: np.random.Generator) -> Solution:
    """A uniformly drawn candidate among those built only from the preferred family.

    Falls back to the whole list when no candidate satisfies the restriction.
    """
    if not candidates:
        raise ValueError("empty candidate list")
    pick_from = restricted_candidates(sample, candidates, pool) or candidates
    return pick_from[int(rng.integers(len(pick_from)))]


# --- MLP router --------------------------------------------------------------

@dataclass
class RouterParams:
    W1: np.ndarray  # (H, D)
    b1: np.ndarray
    W2: np.ndarray  # (K, H)
    b2: np.ndarray
    solutions: list

    @classmethod
    def init(cls, feature_dim: int, solutions: list[Solution], rng: np.random.Generator,
             hidden: int = 64) -> "RouterParams":
        return cls(
            rng.normal(0.0, 1.0 / np.sqrt(feature_dim), (hidden, feature_dim)),
            np.zeros(hidden),
            rng.normal(0.0, 1.0 / np.sqrt(hidden), (len(solutions), hidden)),
            np.zeros(len(solutions)),
            list(solutions),
        )

    def arrays(self) -> tuple:
        return (self.W1, self.b1, self.W2, self.b2)

    def to_json(self) -> dict:
        return {
            "W1": self.W1.tolist(), "b1": self.b1.tolist(), "W2": self.W2.tolist(), "b2": self.b2.tolist(),
            "solutions": [s.to_json() for s in self.solutions],
        }

    @classmethod
    def from_json(cls, d: dict) -> "RouterParams":
        return cls(np.asarray(d["W1"]), np.asarray(d["b1"]), np.asarray(d["W2"]), np.asarray(d["b2"]),
                   [Solution.from_json(s) for s in d["solutions"]])


def _forward(params: RouterParams, X: np.ndarray):
    h = np.tanh(X @ params.W1.T + params.b1)
    z = h @ params.W2.T + params.b2
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return h, logp


def router_loss(params: RouterParams, X: np.ndarray, y: np.ndarray) -> float:
    """Mean cross-entropy of the oracle labels ``y`` (indices into ``params.solutions``)."""
    _, logp = _forward(params, X)
    return float(-np.mean(logp[np.arange(len(y)), y]))


def router_grad(params: RouterParams, X: np.ndarray, y: np.ndarray) -> tuple:
    """Analytic gradient of :func:`router_loss` as ``(dW1, db1, dW2, db2)``."""
    h, logp = _forward(params, X)
    n = len(y)
    dz = np.exp(logp)
    dz[np.arange(n), y] -= 1.0
    dz /= n
    dW2 = dz.T @ h
    db2 = dz.sum(axis=0)
    da = (dz @ params.W2) * (1.0 - h * h)
    return da.T @ X, da.sum(axis=0), dW2, db2


def train_router(X: np.ndarray, y: np.ndarray, solutions: list[Solution], rng: np.random.Generator,
                 hidden: int = 64, learning_rate: float = 0.01, epochs: int = 200):
    """Full-batch gradient descent on cross-entropy; returns ``(params, loss_history)``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    params = RouterParams.init(X.shape[1], solutions, rng, hidden)
    with np.errstate(all="ignore"):
        losses = [router_loss(params, X, y)]
    for _ in range(epochs):
        with np.errstate(all="ignore"):
            grads = router_grad(params, X, y)
        if not all(np.isfinite(g).all() for g in grads):
            raise FloatingPointError("non-finite router gradient")
        for arr, g in zip(params.arrays(), grads):
            arr -= learning_rate * g
        loss = router_loss(params, X, y)
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite router loss")
        losses.append(loss)
    return params, losses


def route(params: RouterParams, features: np.ndarray) -> Solution:
    _, logp = _forward(params, np.atleast_2d(features))
    return params.solutions[int(np.argmax(logp[0]))]
