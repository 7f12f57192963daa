"""Comparison filters.

* VoI censoring without covariance: same LogOP information filter, but the
  broadcast rule ignores the beliefs and looks only at the mean shift
  (the Gaussian KL with both covariances set to identity).
* Censored diffusion Kalman filter: adapt-then-combine, sharing means only.
  Each node keeps its own covariance, which the combination step does not
  adjust, so reported covariances are not guaranteed to be consistent.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .gaussian_info import (
    MeasurementContribution,
    MomentEstimate,
    info_update,
    pd_inverse,
    symmetrize,
    to_moment,
)
from .voi_node import (
    HEADER_BYTES,
    SCALAR_BYTES,
    BroadcastMessage,
    NodeState,
    NodeStepOutput,
)


def norm_censor_decide(posterior_mean, shadow_mean, gamma: float) -> bool:
    """Broadcast iff 0.5*||x - x_shadow||^2 >= gamma."""
    d = np.asarray(posterior_mean, dtype=float) - np.asarray(shadow_mean, dtype=float)
    if d.ndim != 1:
        raise ValueError("means must be 1-D")
    return bool(0.5 * float(d @ d) >= gamma)


def nocov_update_and_decide(
    s: NodeState, c: Optional[MeasurementContribution] = None
) -> tuple[NodeState, NodeStepOutput]:
    """Like :func:`voi_node.node_update_and_decide` with the mean-only rule.

    ``voi_value`` reports the statistic actually thresholded.
    """
    posterior = s.fused if c is None else info_update(s.fused, c)
    post_m = to_moment(posterior)
    shadow_m = to_moment(s.shadow)
    d = post_m.mean - shadow_m.mean
    stat = 0.5 * float(d @ d)
    transmitted = stat >= s.gamma
    msg = None
    if transmitted:
        msg = BroadcastMessage(s.node_id, posterior.info_vec, posterior.info_mat, s.clock)
    return replace(s, posterior=posterior), NodeStepOutput(transmitted, msg, stat, post_m)


def diffusion_message_bytes(n: int) -> int:
    return n * SCALAR_BYTES + HEADER_BYTES


@dataclass(frozen=True, eq=False)
class DiffusionNodeState:
    node_id: int
    mean: np.ndarray
    cov: np.ndarray
    shadow_mean: np.ndarray
    gamma: float
    A: np.ndarray
    Q: np.ndarray
    clock: int = 0

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        cov = symmetrize(np.asarray(self.cov, dtype=float))
        np.linalg.cholesky(cov)
        object.__setattr__(self, "cov", cov)


@dataclass(frozen=True, eq=False)
class DiffusionAdapted:
    """Result of the adapt half-step."""

    state: DiffusionNodeState
    mean: np.ndarray
    cov: np.ndarray
    transmitted: bool
    statistic: float

    @property
    def estimate(self) -> MomentEstimate:
        return MomentEstimate(self.mean, self.cov)


def diffusion_init(node_id: int, x0_guess, eps: float, gamma: float, A, Q) -> DiffusionNodeState:
    """Same diffuse prior as the information filter: P = I / eps."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x0 = np.asarray(x0_guess, dtype=float)
    return DiffusionNodeState(
        node_id, x0, np.eye(x0.size) / eps, x0, float(gamma),
        np.asarray(A, dtype=float), np.asarray(Q, dtype=float),
    )


def diffusion_adapt(
    s: DiffusionNodeState, c: Optional[MeasurementContribution]
) -> DiffusionAdapted:
    """Local measurement update, then the mean-shift censoring decision."""
    if c is None:
        mean, cov = s.mean, s.cov
    else:
        Y = pd_inverse(s.cov, "diffusion covariance")
        Y_post = Y + c.imat
        cov = pd_inverse(Y_post, "diffusion posterior information")
        mean = cov @ (Y @ s.mean + c.ivec)
    d = mean - s.shadow_mean
    stat = 0.5 * float(d @ d)
    return DiffusionAdapted(s, mean, cov, stat >= s.gamma, stat)


def diffusion_combine_predict(
    a: DiffusionAdapted, received_means: Sequence[np.ndarray]
) -> DiffusionNodeState:
    """Uniform average of own and received means; covariance left as is."""
    s = a.state
    combined = (a.mean + sum(np.asarray(m, dtype=float) for m in received_means)) / (
        len(received_means) + 1
    )
    return replace(
        s,
        mean=s.A @ combined,
        cov=symmetrize(s.A @ a.cov @ s.A.T + s.Q),
        shadow_mean=s.A @ a.mean,
        clock=s.clock + 1,
    )


def diffusion_step(
    s: DiffusionNodeState,
    c: Optional[MeasurementContribution],
    received_means: Sequence[np.ndarray],
) -> tuple[DiffusionNodeState, bool]:
    a = diffusion_adapt(s, c)
    return diffusion_combine_predict(a, received_means), a.transmitted
