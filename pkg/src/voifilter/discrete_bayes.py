"""Finite-state Bayes filtering with VoI-censored log-linear pooling.

This is the desk-scale counterpart of the Gaussian filter: every density is a
probability vector, so pooling optimality and network consensus can be
checked against brute force.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import IncompatibleMeasurementError

NORM_TOL = 1e-12


def _as_probs(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probability vector must be 1-D and nonempty")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("probabilities must be finite and nonnegative")
    return p


@dataclass(frozen=True, eq=False)
class DiscreteDist:
    probs: np.ndarray

    def __post_init__(self):
        p = _as_probs(self.probs)
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {p.sum()}, not 1")
        p = p / p.sum()
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    @classmethod
    def normalized(cls, weights) -> "DiscreteDist":
        w = _as_probs(weights)
        total = w.sum()
        if not total > 0:
            raise ValueError("weights have zero total mass")
        return cls(w / total)

    @classmethod
    def uniform(cls, n: int) -> "DiscreteDist":
        return cls(np.full(n, 1.0 / n))

    @property
    def size(self) -> int:
        return self.probs.size


@dataclass(frozen=True, eq=False)
class DiscreteModel:
    """Row-stochastic transition matrix and per-observation likelihood vectors."""

    transition: np.ndarray
    likelihoods: Mapping[object, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        T = np.asarray(self.transition, dtype=float)
        if T.ndim != 2 or T.shape[0] != T.shape[1]:
            raise ValueError(f"transition must be square, got {T.shape}")
        if np.any(T < 0) or np.any(np.abs(T.sum(axis=1) - 1.0) > NORM_TOL):
            raise ValueError("transition rows must be nonnegative and sum to 1")
        liks = {}
        for z, lik in dict(self.likelihoods).items():
            lik = _as_probs(lik)
            if lik.size != T.shape[0] or not np.any(lik > 0):
                raise ValueError(f"likelihood for observation {z!r} is invalid")
            liks[z] = lik
        object.__setattr__(self, "transition", T)
        object.__setattr__(self, "likelihoods", liks)

    @property
    def size(self) -> int:
        return self.transition.shape[0]


def bayes_predict(d: DiscreteDist, m: DiscreteModel) -> DiscreteDist:
    if d.size != m.size:
        raise ValueError(f"dimension mismatch: {d.size} vs {m.size}")
    return DiscreteDist.normalized(m.transition.T @ d.probs)


def bayes_update(d: DiscreteDist, likelihood) -> DiscreteDist:
    lik = _as_probs(likelihood)
    if lik.size != d.size:
        raise ValueError(f"dimension mismatch: {lik.size} vs {d.size}")
    unnorm = lik * d.probs
    if not unnorm.sum() > 0:
        raise IncompatibleMeasurementError("measurement incompatible with support")
    return DiscreteDist.normalized(unnorm)


def logop_pool(dists: Sequence[DiscreteDist]) -> DiscreteDist:
    """Normalized geometric mean with equal weights 1/m."""
    if not dists:
        raise ValueError("logop_pool needs at least one distribution")
    sizes = {d.size for d in dists}
    if len(sizes) != 1:
        raise ValueError(f"distributions have different lengths: {sorted(sizes)}")
    P = np.stack([d.probs for d in dists])
    support = np.all(P > 0, axis=0)
    if not np.any(support):
        raise ValueError("pooled distribution has zero total mass")
    logs = np.zeros(P.shape[1])
    logs[support] = np.log(P[:, support]).mean(axis=0)
    out = np.zeros(P.shape[1])
    out[support] = np.exp(logs[support] - logs[support].max())
    return DiscreteDist.normalized(out)


def kl_discrete(p: DiscreteDist, q: DiscreteDist) -> float:
    """KL(p || q); returns ``math.inf`` when p puts mass outside supp(q)."""
    if p.size != q.size:
        raise ValueError(f"dimension mismatch: {p.size} vs {q.size}")
    mask = p.probs > 0
    if np.any(q.probs[mask] == 0):
        return math.inf
    return max(float(np.sum(p.probs[mask] * np.log(p.probs[mask] / q.probs[mask]))), 0.0)


def pooling_objective(p, dists: Sequence[DiscreteDist]) -> float:
    """sum_j KL(p || d_j) for a candidate probability vector ``p``."""
    cand = DiscreteDist.normalized(p)
    return sum(kl_discrete(cand, d) for d in dists)


@dataclass(frozen=True, eq=False)
class DiscreteNode:
    """Dual-track node state: ``fused`` and ``shadow`` are both predictions."""

    node_id: int
    fused: DiscreteDist
    shadow: DiscreteDist
    model: DiscreteModel


@dataclass(frozen=True, eq=False)
class DiscreteNodeStep:
    node: DiscreteNode
    posterior: DiscreteDist
    transmitted: bool
    voi: float


def discrete_voi_step(
    nodes: Sequence[DiscreteNode],
    observations: Mapping[int, object],
    neighbors: Mapping[int, Sequence[int]],
    gamma: float,
) -> list[DiscreteNodeStep]:
    """One synchronous round over a network of discrete nodes.

    ``observations`` maps node_id to an observation key of that node's model
    (missing key: no measurement).  ``neighbors[i]`` lists the nodes whose
    broadcasts can reach node ``i`` this step.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    posteriors: dict[int, DiscreteDist] = {}
    transmitted: dict[int, bool] = {}
    vois: dict[int, float] = {}
    for node in nodes:
        z = observations.get(node.node_id)
        post = node.fused
        if z is not None:
            post = bayes_update(post, node.model.likelihoods[z])
        voi = kl_discrete(post, node.shadow)
        posteriors[node.node_id] = post
        vois[node.node_id] = voi
        transmitted[node.node_id] = voi >= gamma

    out = []
    for node in nodes:
        i = node.node_id
        received = [
            posteriors[j] for j in neighbors.get(i, ()) if j != i and transmitted.get(j, False)
        ]
        pooled = logop_pool([posteriors[i], *received]) if received else posteriors[i]
        nxt = DiscreteNode(
            i,
            fused=bayes_predict(pooled, node.model),
            shadow=bayes_predict(posteriors[i], node.model),
            model=node.model,
        )
        out.append(DiscreteNodeStep(nxt, posteriors[i], transmitted[i], vois[i]))
    return out


def run_discrete_network(
    nodes: Sequence[DiscreteNode],
    observation_stream: Sequence[Mapping[int, object]],
    neighbors: Mapping[int, Sequence[int]],
    gamma: float,
    on_step: Optional[callable] = None,
) -> list[list[DiscreteNodeStep]]:
    history = []
    current = list(nodes)
    for k, obs in enumerate(observation_stream):
        steps = discrete_voi_step(current, obs, neighbors, gamma)
        history.append(steps)
        current = [s.node for s in steps]
        if on_step is not None:
            on_step(k, steps)
    return history


def max_pairwise_kl(dists: Sequence[DiscreteDist]) -> float:
    return max(
        (kl_discrete(p, q) for a, p in enumerate(dists) for b, q in enumerate(dists) if a != b),
        default=0.0,
    )
