"""Per-agent VoI-censored information filter.

Each node keeps two prediction tracks:

* ``fused``: the prediction of its LogOP-aggregated posterior,
* ``shadow``: the prediction of its own posterior without aggregation.

A step is split in two halves so that a synchronous simulator can collect
every node's broadcast decision before delivering messages:

1. :func:`node_update_and_decide` applies the local measurement to the fused
   prediction and compares the result against the shadow track.
2. :func:`node_fuse_and_predict` pools whatever arrived and predicts both
   tracks forward.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .gaussian_info import (
    InfoEstimate,
    MeasurementContribution,
    MomentEstimate,
    check_dynamics,
    info_predict,
    info_update,
    kl_information,
    logop_fuse,
    to_moment,
)

HEADER_BYTES = 12
SCALAR_BYTES = 8


def message_size_bytes(n: int) -> int:
    """Wire size of an information pair: n + n(n+1)/2 doubles plus header."""
    return (n + n * (n + 1) // 2) * SCALAR_BYTES + HEADER_BYTES


@dataclass(frozen=True, eq=False)
class BroadcastMessage:
    sender_id: int
    info_vec: np.ndarray
    info_mat: np.ndarray
    step: int

    def as_estimate(self) -> InfoEstimate:
        return InfoEstimate(self.info_vec, self.info_mat)

    @property
    def size_bytes(self) -> int:
        return message_size_bytes(len(self.info_vec))

    def to_bytes(self) -> bytes:
        """Pack as header (int32 sender, int64 step) + vector + upper triangle."""
        n = len(self.info_vec)
        iu = np.triu_indices(n)
        header = np.array([self.sender_id], dtype="<i4").tobytes()
        header += np.array([self.step], dtype="<i8").tobytes()
        body = np.concatenate([self.info_vec, self.info_mat[iu]]).astype("<f8").tobytes()
        return header + body

    @classmethod
    def from_bytes(cls, data: bytes, n: int) -> "BroadcastMessage":
        if len(data) != message_size_bytes(n):
            raise ValueError(f"expected {message_size_bytes(n)} bytes, got {len(data)}")
        sender = int(np.frombuffer(data[:4], dtype="<i4")[0])
        step = int(np.frombuffer(data[4:12], dtype="<i8")[0])
        body = np.frombuffer(data[12:], dtype="<f8")
        Y = np.zeros((n, n))
        Y[np.triu_indices(n)] = body[n:]
        Y = Y + np.triu(Y, 1).T
        return cls(sender, body[:n].copy(), Y, step)


@dataclass(frozen=True, eq=False)
class NodeStepOutput:
    transmitted: bool
    message: Optional[BroadcastMessage]
    voi_value: float
    posterior: MomentEstimate


@dataclass(frozen=True, eq=False)
class NodeState:
    node_id: int
    fused: InfoEstimate
    shadow: InfoEstimate
    gamma: float
    A: np.ndarray
    Q: np.ndarray
    clock: int = 0
    # Step-3 posterior, set between update_and_decide and fuse_and_predict.
    posterior: Optional[InfoEstimate] = None

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")


def node_init(node_id: int, x0_guess, eps: float, gamma: float, A, Q) -> NodeState:
    """Both tracks start from the same diffuse prior Y = eps*I."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if not gamma >= 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    A = np.asarray(A, dtype=float)
    check_dynamics(A)
    prior = InfoEstimate.diffuse(x0_guess, eps)
    return NodeState(node_id, prior, prior, float(gamma), A, np.asarray(Q, dtype=float))


def node_update_and_decide(
    s: NodeState, c: Optional[MeasurementContribution] = None
) -> tuple[NodeState, NodeStepOutput]:
    posterior = s.fused if c is None else info_update(s.fused, c)
    voi = kl_information(posterior, s.shadow)
    transmitted = voi >= s.gamma
    msg = None
    if transmitted:
        msg = BroadcastMessage(s.node_id, posterior.info_vec, posterior.info_mat, s.clock)
    out = NodeStepOutput(transmitted, msg, voi, to_moment(posterior))
    return replace(s, posterior=posterior), out


def node_fuse_and_predict(s: NodeState, received: Sequence[BroadcastMessage]) -> NodeState:
    if s.posterior is None:
        raise RuntimeError("node_update_and_decide must run before node_fuse_and_predict")
    senders = [m.sender_id for m in received]
    if len(set(senders)) != len(senders):
        raise ValueError(f"duplicate sender in step {s.clock}: {senders}")
    if s.node_id in senders:
        raise ValueError(f"node {s.node_id} received its own message")
    stale = [m.sender_id for m in received if m.step != s.clock]
    if stale:
        raise ValueError(f"messages from senders {stale} are not from step {s.clock}")
    fused = logop_fuse(s.posterior, [m.as_estimate() for m in received])
    return replace(
        s,
        fused=info_predict(fused, s.A, s.Q),
        shadow=info_predict(s.posterior, s.A, s.Q),
        clock=s.clock + 1,
        posterior=None,
    )
