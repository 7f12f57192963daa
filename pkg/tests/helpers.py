import numpy as np


def random_pd(rng, n, scale=1.0, cond=50.0):
    """Random SPD matrix with eigenvalues in [scale, scale*cond]."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    ev = scale * np.exp(rng.uniform(0.0, np.log(cond), n))
    return (q * ev) @ q.T


def random_psd_rank(rng, n, rank, scale=1.0):
    B = rng.standard_normal((n, rank)) * np.sqrt(scale)
    return B @ B.T


def nees_upper_bound(dim, trials, prob=0.99):
    """Upper edge of the chi-square acceptance region for the average NEES."""
    from scipy import stats

    return stats.chi2.ppf(prob, dim * trials) / trials


def logop_nees_trials(rng, trials=5000, n=4, inputs=3, rho=0.5):
    """Average NEES of LogOP-fused estimates with unknown cross-correlation.

    Each input error is exactly N(0, P_j) marginally; inputs share a common
    error component with weight ``rho``.
    """
    from voifilter.gaussian_info import InfoEstimate, logop_fuse, to_moment

    total = 0.0
    for _ in range(trials):
        x = rng.normal(0, 100, n)
        common = rng.standard_normal(n)
        ests = []
        for _ in range(inputs):
            P = random_pd(rng, n, scale=0.5, cond=20.0)
            u = np.sqrt(rho) * common + np.sqrt(1 - rho) * rng.standard_normal(n)
            mean = x + np.linalg.cholesky(P) @ u
            Y = np.linalg.inv(P)
            ests.append(InfoEstimate(Y @ mean, Y))
        fused = logop_fuse(ests[0], ests[1:])
        m = to_moment(fused)
        e = m.mean - x
        total += float(e @ fused.info_mat @ e)
    return total / trials


def diffusion_nees_trials(rng, trials=5000, n=4, bias_sigmas=3.0):
    """Two-node diffusion combine: node 0 consistent, node 1 biased.

    Both report the same covariance; node 0 averages the received mean into
    its own and keeps its covariance, as the diffusion baseline does.
    """
    from voifilter.baselines import DiffusionAdapted, DiffusionNodeState, diffusion_combine_predict

    P = np.diag([4.0, 1.0, 4.0, 1.0])[:n, :n]
    L = np.linalg.cholesky(P)
    Y = np.linalg.inv(P)
    bias = L @ np.full(n, bias_sigmas)
    total = 0.0
    for _ in range(trials):
        x = rng.normal(0, 100, n)
        m0 = x + L @ rng.standard_normal(n)
        m1 = x + bias + L @ rng.standard_normal(n)
        s = DiffusionNodeState(0, m0, P, m0, 0.0, np.eye(n), np.zeros((n, n)))
        out = diffusion_combine_predict(DiffusionAdapted(s, m0, P, True, 0.0), [m1])
        e = out.mean - x
        total += float(e @ np.linalg.solve(out.cov, e))
    return total / trials
