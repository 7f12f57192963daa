"""Gaussian beliefs in moment and information form.

Conversions, closed-form Gaussian KL divergence, log-linear (LogOP) fusion of
information pairs, and information-form predict/update steps.  All functions
are pure and return new objects.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DynamicsNotInvertibleError, NotPositiveDefiniteError, NumericalError

SYM_TOL = 1e-9
MAX_DYNAMICS_COND = 1e12
KL_NEGATIVE_TOL = 1e-9


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def _cholesky(m: np.ndarray, name: str):
    try:
        return cho_factor(m, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NotPositiveDefiniteError(f"{name} is not positive definite") from exc


def pd_inverse(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Inverse of a symmetric PD matrix; a failed factorization is the PD check."""
    c = _cholesky(m, name)
    return symmetrize(cho_solve(c, np.eye(m.shape[0])))


def _logdet_chol(c) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(c[0]))))


@dataclass(frozen=True, eq=False)
class MomentEstimate:
    """Gaussian belief N(mean, cov)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError(f"cov shape {cov.shape} does not match mean length {mean.size}")
        cov = symmetrize(cov)
        _cholesky(cov, "covariance")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "cov", _frozen(cov))

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True, eq=False)
class InfoEstimate:
    """Gaussian belief in information form: info_vec = P^-1 x, info_mat = P^-1."""

    info_vec: np.ndarray
    info_mat: np.ndarray

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.info_vec, dtype=float))
        Y = np.atleast_2d(np.asarray(self.info_mat, dtype=float))
        if y.ndim != 1 or Y.shape != (y.size, y.size):
            raise ValueError(f"info_mat shape {Y.shape} does not match info_vec length {y.size}")
        Y = symmetrize(Y)
        _cholesky(Y, "information matrix")
        object.__setattr__(self, "info_vec", _frozen(y))
        object.__setattr__(self, "info_mat", _frozen(Y))

    @property
    def dim(self) -> int:
        return self.info_vec.size

    @classmethod
    def diffuse(cls, guess, eps: float = 1e-6) -> "InfoEstimate":
        """Near-uninformative prior Y = eps*I centred on ``guess``."""
        if not eps > 0:
            raise ValueError(f"eps must be positive, got {eps}")
        guess = np.atleast_1d(np.asarray(guess, dtype=float))
        return cls(eps * guess, eps * np.eye(guess.size))


@dataclass(frozen=True, eq=False)
class MeasurementContribution:
    """Additive information from one measurement (i, I)."""

    ivec: np.ndarray
    imat: np.ndarray

    def __post_init__(self):
        i = np.atleast_1d(np.asarray(self.ivec, dtype=float))
        I = np.atleast_2d(np.asarray(self.imat, dtype=float))
        if i.ndim != 1 or I.shape != (i.size, i.size):
            raise ValueError(f"imat shape {I.shape} does not match ivec length {i.size}")
        object.__setattr__(self, "ivec", _frozen(i))
        object.__setattr__(self, "imat", _frozen(symmetrize(I)))

    @property
    def dim(self) -> int:
        return self.ivec.size

    @classmethod
    def zero(cls, n: int) -> "MeasurementContribution":
        return cls(np.zeros(n), np.zeros((n, n)))


def to_information(m: MomentEstimate) -> InfoEstimate:
    Y = pd_inverse(m.cov, "covariance")
    return InfoEstimate(Y @ m.mean, Y)


def to_moment(e: InfoEstimate) -> MomentEstimate:
    c = _cholesky(e.info_mat, "information matrix")
    cov = symmetrize(cho_solve(c, np.eye(e.dim)))
    return MomentEstimate(cho_solve(c, e.info_vec), cov)


def kl_gaussian(p: MomentEstimate, q: MomentEstimate) -> float:
    """KL(p || q) in nats for two Gaussians of equal dimension."""
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    if np.array_equal(p.mean, q.mean) and np.array_equal(p.cov, q.cov):
        return 0.0
    cq = _cholesky(q.cov, "q covariance")
    cp = _cholesky(p.cov, "p covariance")
    d = q.mean - p.mean
    maha = float(d @ cho_solve(cq, d))
    trace = float(np.trace(cho_solve(cq, p.cov)))
    kl = 0.5 * (maha + trace - p.dim + _logdet_chol(cq) - _logdet_chol(cp))
    return _clamp_kl(kl)


def _clamp_kl(kl: float) -> float:
    if kl < -KL_NEGATIVE_TOL:
        raise NumericalError(f"negative KL divergence {kl:.3e}; inputs are inconsistent")
    return max(kl, 0.0)


def kl_information(p: InfoEstimate, q: InfoEstimate) -> float:
    """KL(p || q) computed directly from information pairs."""
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    if np.array_equal(p.info_vec, q.info_vec) and np.array_equal(p.info_mat, q.info_mat):
        return 0.0
    cp = _cholesky(p.info_mat, "p information matrix")
    cq = _cholesky(q.info_mat, "q information matrix")
    d = cho_solve(cq, q.info_vec) - cho_solve(cp, p.info_vec)
    maha = float(d @ q.info_mat @ d)
    trace = float(np.trace(cho_solve(cp, q.info_mat)))
    kl = 0.5 * (maha + trace - p.dim + _logdet_chol(cp) - _logdet_chol(cq))
    return _clamp_kl(kl)


def logop_fuse(own: InfoEstimate, received: Sequence[InfoEstimate]) -> InfoEstimate:
    """Equal-weight LogOP of ``own`` and every received estimate.

    Weights are 1/(m+1) where m = len(received), so the fused information
    matrix is a convex combination of the inputs.
    """
    if not received:
        return own
    for r in received:
        if r.dim != own.dim:
            raise ValueError(f"dimension mismatch: {r.dim} vs {own.dim}")
    w = 1.0 / (len(received) + 1)
    y = (own.info_vec + sum(r.info_vec for r in received)) * w
    Y = (own.info_mat + sum(r.info_mat for r in received)) * w
    return InfoEstimate(y, Y)


def check_dynamics(A: np.ndarray) -> np.ndarray:
    """Validate A and return its inverse."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > MAX_DYNAMICS_COND:
        raise DynamicsNotInvertibleError(
            "dynamics not invertible, information-form prediction undefined "
            f"(cond(A)={cond:.3e})"
        )
    return np.linalg.inv(A)


def _check_q(Q: np.ndarray, n: int) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (n, n):
        raise ValueError(f"Q shape {Q.shape} does not match state dimension {n}")
    if np.min(np.linalg.eigvalsh(symmetrize(Q))) < -SYM_TOL * max(1.0, np.abs(Q).max()):
        raise ValueError("Q must be positive semidefinite")
    return symmetrize(Q)


def info_predict(e: InfoEstimate, A, Q) -> InfoEstimate:
    """Information-form time update for x' = A x + w, w ~ N(0, Q)."""
    A_inv = check_dynamics(A)
    Q = _check_q(Q, e.dim)
    M = symmetrize(A_inv.T @ e.info_mat @ A_inv)
    G = np.eye(e.dim) + M @ Q
    Y_new = symmetrize(np.linalg.solve(G, M))
    y_new = np.linalg.solve(G, A_inv.T @ e.info_vec)
    return InfoEstimate(y_new, Y_new)


def info_update(e: InfoEstimate, c: MeasurementContribution) -> InfoEstimate:
    if c.dim != e.dim:
        raise ValueError(f"dimension mismatch: contribution {c.dim} vs estimate {e.dim}")
    return InfoEstimate(e.info_vec + c.ivec, e.info_mat + c.imat)


def f_map(Y, A, Q) -> np.ndarray:
    """Information matrix after one prediction step, written as a map of Y.

    For PD Q this is A^-T Y A^-1 - A^-T Y (Y + A^T Q^-1 A)^-1 Y A^-1, which is
    monotone in the PSD order.
    """
    Y = symmetrize(np.asarray(Y, dtype=float))
    A_inv = check_dynamics(A)
    n = Y.shape[0]
    Q = _check_q(Q, n)
    M = symmetrize(A_inv.T @ Y @ A_inv)
    if not np.any(Q):
        return M
    try:
        cq = cho_factor(Q, lower=True)
    except np.linalg.LinAlgError:
        G = np.eye(n) + M @ Q
        return symmetrize(np.linalg.solve(G, M))
    A = np.asarray(A, dtype=float)
    S = Y + A.T @ cho_solve(cq, A)
    inner = Y @ np.linalg.solve(S, Y)
    return symmetrize(M - A_inv.T @ inner @ A_inv)


# Batched helpers used by the vectorised harness engine.  Leading axis = node.


def batch_moments(y: np.ndarray, Y: np.ndarray):
    """Means and covariances for stacked information pairs (N,n), (N,n,n)."""
    L = np.linalg.cholesky(Y)
    eye = np.broadcast_to(np.eye(Y.shape[-1]), Y.shape)
    L_inv = np.linalg.solve(L, eye)
    P = symmetrize(np.swapaxes(L_inv, -1, -2) @ L_inv)
    x = np.einsum("nij,nj->ni", P, y)
    return x, P, L


def batch_logdet_from_chol(L: np.ndarray) -> np.ndarray:
    return 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)


def batch_kl(x_p, P_p, logdet_Yp, x_q, Y_q, logdet_Yq) -> np.ndarray:
    """KL(p || q) for stacks, with q given in information form."""
    n = x_p.shape[-1]
    d = x_q - x_p
    maha = np.einsum("ni,nij,nj->n", d, Y_q, d)
    trace = np.einsum("nij,nji->n", Y_q, P_p)
    kl = 0.5 * (maha + trace - n + logdet_Yp - logdet_Yq)
    if np.any(kl < -KL_NEGATIVE_TOL):
        raise NumericalError(f"negative KL divergence {kl.min():.3e}")
    return np.maximum(kl, 0.0)


def batch_info_predict(y: np.ndarray, Y: np.ndarray, A_inv: np.ndarray, Q: np.ndarray):
    M = symmetrize(A_inv.T @ Y @ A_inv)
    G = np.eye(Y.shape[-1]) + M @ Q
    Y_new = symmetrize(np.linalg.solve(G, M))
    y_new = np.linalg.solve(G, np.einsum("ji,nj->ni", A_inv, y)[..., None])[..., 0]
    return y_new, Y_new
