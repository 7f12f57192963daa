"""Stochastic broadcast network over node positions.

Link success decays with distance (power law) and is perturbed by log-normal
shadowing drawn independently per directed link and per step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class LinkModel:
    reference_distance: float = 500.0
    success_at_reference: float = 0.9
    path_loss_exponent: float = 2.0
    shadowing_std_db: float = 4.0
    connectivity_floor: float = 0.0

    def __post_init__(self):
        for name in ("success_at_reference", "connectivity_floor"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if not self.path_loss_exponent > 0:
            raise ValueError("path_loss_exponent must be positive")
        if not self.reference_distance > 0:
            raise ValueError("reference_distance must be positive")
        if self.shadowing_std_db < 0:
            raise ValueError("shadowing_std_db must be nonnegative")

    def success_probability(self, distance, shadowing_db=0.0) -> np.ndarray:
        d = np.asarray(distance, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(d > 0, self.reference_distance / np.where(d > 0, d, 1.0), np.inf)
            p = self.success_at_reference * ratio**self.path_loss_exponent
            p = p * 10.0 ** (np.asarray(shadowing_db, dtype=float) / 10.0)
        p = np.where(np.isnan(p), 0.0, p)  # 0 * inf: zero-success model
        return np.clip(p, self.connectivity_floor, 1.0)


@dataclass(frozen=True, eq=False)
class NetworkSnapshot:
    delivered: Mapping[int, frozenset]
    positions: np.ndarray

    def received_by(self, node: int) -> list[int]:
        return sorted(s for s, rx in self.delivered.items() if node in rx)

    def adjacency(self) -> np.ndarray:
        """Boolean matrix R[receiver, sender]."""
        n = len(self.positions)
        R = np.zeros((n, n), dtype=bool)
        for s, rx in self.delivered.items():
            for r in rx:
                R[r, s] = True
        return R


def pairwise_distances(positions: np.ndarray) -> np.ndarray:
    pos = np.asarray(positions, dtype=float)
    diff = pos[:, None, :] - pos[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def draw_link_success(positions, model: LinkModel, rng: np.random.Generator) -> np.ndarray:
    """Success matrix S[sender, receiver] for every directed pair.

    Always consumes exactly 2*N*N variates so the stream stays aligned no
    matter which nodes transmit.
    """
    pos = np.asarray(positions, dtype=float)
    n = len(pos)
    shadow = rng.standard_normal((n, n)) * model.shadowing_std_db
    u = rng.random((n, n))
    p = model.success_probability(pairwise_distances(pos), shadow)
    ok = u < p
    np.fill_diagonal(ok, False)
    return ok


def evaluate_links(
    positions, transmitters: Iterable[int], model: LinkModel, rng: np.random.Generator
) -> NetworkSnapshot:
    ok = draw_link_success(positions, model, rng)
    delivered = {
        int(t): frozenset(int(r) for r in np.flatnonzero(ok[t])) for t in sorted(set(transmitters))
    }
    return NetworkSnapshot(delivered, np.asarray(positions, dtype=float))


@dataclass
class ConnectivityStats:
    in_degree: np.ndarray  # (steps, N)
    isolation_fraction: np.ndarray  # (steps,) fraction of nodes with no in- or out-link
    union_strongly_connected: bool


def strongly_connected(adj: np.ndarray) -> bool:
    """adj[i, j] True means an edge i -> j."""
    n = adj.shape[0]
    if n <= 1:
        return True

    def reach(a):
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        frontier = seen.copy()
        while frontier.any():
            nxt = a[frontier].any(axis=0) & ~seen
            seen |= nxt
            frontier = nxt
        return seen.all()

    return reach(adj) and reach(adj.T)


def neighborhood_trace(snapshots: Sequence[NetworkSnapshot]) -> ConnectivityStats:
    if not snapshots:
        raise ValueError("neighborhood_trace needs a nonempty window")
    n = len(snapshots[0].positions)
    union = np.zeros((n, n), dtype=bool)
    in_deg = np.zeros((len(snapshots), n), dtype=int)
    iso = np.zeros(len(snapshots))
    for k, snap in enumerate(snapshots):
        R = snap.adjacency()
        union |= R.T
        in_deg[k] = R.sum(axis=1)
        linked = R.any(axis=0) | R.any(axis=1)
        iso[k] = 1.0 - linked.mean()
    return ConnectivityStats(in_deg, iso, strongly_connected(union))


def full_broadcast_trace(positions, model: LinkModel, rng, steps: int) -> list[NetworkSnapshot]:
    """Snapshots with every node transmitting; used to characterise a topology."""
    n = len(positions)
    return [evaluate_links(positions, range(n), model, rng) for _ in range(steps)]
