"""Closed-loop experiments: truth -> sensing -> censor -> network -> fuse/predict.

Two engines run the same loop.  ``"reference"`` steps every node through the
per-node functions in :mod:`voi_node` / :mod:`baselines`; ``"batched"`` holds
all nodes in stacked arrays and is what sweeps use.  Both consume the random
streams identically, and the test suite checks that they agree.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import baselines
from .errors import NumericalError
from .gaussian_info import (
    MeasurementContribution,
    batch_info_predict,
    batch_kl,
    batch_logdet_from_chol,
    batch_moments,
    check_dynamics,
    pd_inverse,
    symmetrize,
)
from .netsim import draw_link_success
from .scenario import (
    LINK_STREAM,
    SENSOR_STREAM,
    TRUTH_STREAM,
    ScenarioConfig,
    simulate_truth,
    stream_rng,
)
from .sensing import SensorKind, contribution_at, measure
from .voi_node import (
    node_fuse_and_predict,
    node_init,
    node_update_and_decide,
    message_size_bytes,
)

log = logging.getLogger(__name__)

BURN_IN_FRACTION = 0.2
STEP_FIELDS = (
    "step", "node_id", "transmitted", "voi_value", "bytes_sent", "position_error", "cov_trace",
)


@dataclass(frozen=True)
class StepRecord:
    step: int
    node_id: int
    transmitted: bool
    voi_value: float
    bytes_sent: int
    position_error: float
    cov_trace: float  # trace of the posterior position covariance (m^2)


@dataclass
class Summary:
    network_rmse: np.ndarray  # per step
    running_rmse: np.ndarray
    medium_access: np.ndarray
    best_error: np.ndarray  # per step, lowest node position error
    worst_error: np.ndarray
    node_rmse: np.ndarray  # per node, post burn-in
    asymptotic_rmse: float
    mean_medium_access: float
    total_bytes: int
    kbps: float
    burn_in: int

    def scalars(self) -> dict:
        return {
            "asymptotic_rmse": self.asymptotic_rmse,
            "best_node_rmse": float(self.node_rmse.min()),
            "worst_node_rmse": float(self.node_rmse.max()),
            "mean_medium_access": self.mean_medium_access,
            "total_bytes": self.total_bytes,
            "kbps": self.kbps,
        }


@dataclass
class ExperimentResult:
    config: ScenarioConfig
    truth: np.ndarray  # (H, 4)
    transmitted: np.ndarray  # (H, N) bool
    voi: np.ndarray  # (H, N)
    bytes_sent: np.ndarray  # (H, N) int
    position_error: np.ndarray  # (H, N)
    cov_trace: np.ndarray  # (H, N)
    estimates: np.ndarray  # (H, N, 4) posterior means
    prior_means: np.ndarray  # (H, N, 4) fused prediction entering step k
    summary: Summary = field(init=False)

    def __post_init__(self):
        self.summary = summarize(
            self.position_error, self.transmitted, self.bytes_sent, self.config.delta
        )

    @property
    def records(self) -> list[StepRecord]:
        H, N = self.transmitted.shape
        return [
            StepRecord(
                k, i, bool(self.transmitted[k, i]), float(self.voi[k, i]),
                int(self.bytes_sent[k, i]), float(self.position_error[k, i]),
                float(self.cov_trace[k, i]),
            )
            for k in range(H)
            for i in range(N)
        ]


def summarize(position_error, transmitted, bytes_sent, delta: float = 1.0) -> Summary:
    err = np.asarray(position_error, dtype=float)
    tx = np.asarray(transmitted, dtype=bool)
    H = err.shape[0]
    rmse = np.sqrt(np.mean(err**2, axis=1))
    running = np.cumsum(rmse) / np.arange(1, H + 1)
    burn = int(math.floor(BURN_IN_FRACTION * H))
    if burn >= H:
        burn = 0
    total = int(np.sum(bytes_sent))
    return Summary(
        network_rmse=rmse,
        running_rmse=running,
        medium_access=tx.mean(axis=1),
        best_error=err.min(axis=1),
        worst_error=err.max(axis=1),
        node_rmse=np.sqrt(np.mean(err[burn:] ** 2, axis=0)),
        asymptotic_rmse=float(rmse[burn:].mean()),
        mean_medium_access=float(tx.mean()),
        total_bytes=total,
        kbps=total * 8.0 / (H * delta) / 1000.0,
        burn_in=burn,
    )


def compute_metrics(records: Sequence[StepRecord], delta: float = 1.0) -> Summary:
    """Aggregate per-node step records into network-level metrics."""
    if not records:
        raise ValueError("compute_metrics needs at least one record")
    steps = sorted({r.step for r in records})
    nodes = sorted({r.node_id for r in records})
    si = {s: a for a, s in enumerate(steps)}
    ni = {n: a for a, n in enumerate(nodes)}
    err = np.full((len(steps), len(nodes)), np.nan)
    tx = np.zeros_like(err, dtype=bool)
    b = np.zeros_like(err, dtype=np.int64)
    for r in records:
        err[si[r.step], ni[r.node_id]] = r.position_error
        tx[si[r.step], ni[r.node_id]] = r.transmitted
        b[si[r.step], ni[r.node_id]] = r.bytes_sent
    if np.isnan(err).any():
        raise ValueError("records do not cover every (step, node) pair")
    return summarize(err, tx, b, delta)


# Per-step measurement gathering shared by all engines.


class _Sensors:
    def __init__(self, config: ScenarioConfig):
        self.specs = config.sensors
        self.rngs = [stream_rng(config.seed, SENSOR_STREAM + i) for i in range(len(self.specs))]

    def measurements(self, state):
        return [measure(s, state, rng) for s, rng in zip(self.specs, self.rngs)]


def _contrib(spec, z, x_lin):
    if z is None:
        return None
    return contribution_at(spec, z.value, x_lin)


def _position_error(x, truth_k):
    return np.hypot(x[..., 0] - truth_k[0], x[..., 2] - truth_k[2])


class _Recorder:
    def __init__(self, H, N):
        self.transmitted = np.zeros((H, N), dtype=bool)
        self.voi = np.zeros((H, N))
        self.bytes_sent = np.zeros((H, N), dtype=np.int64)
        self.position_error = np.zeros((H, N))
        self.cov_trace = np.zeros((H, N))
        self.estimates = np.zeros((H, N, 4))
        self.prior_means = np.zeros((H, N, 4))

    def store(self, k, tx, voi, msg_bytes, x, P, truth_k, prior):
        self.prior_means[k] = prior
        self.transmitted[k] = tx
        self.voi[k] = voi
        self.bytes_sent[k] = np.where(tx, msg_bytes, 0)
        self.estimates[k] = x
        self.position_error[k] = _position_error(x, truth_k)
        self.cov_trace[k] = P[..., 0, 0] + P[..., 2, 2]

    def result(self, config, truth):
        return ExperimentResult(
            config, truth, self.transmitted, self.voi, self.bytes_sent,
            self.position_error, self.cov_trace, self.estimates, self.prior_means,
        )


def _locate_bad_node(Y: np.ndarray) -> int:
    for i, m in enumerate(Y):
        try:
            np.linalg.cholesky(m)
        except np.linalg.LinAlgError:
            return i
    return -1


def _moments_checked(y, Y, k, what):
    try:
        return batch_moments(y, Y)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"step {k}, node {_locate_bad_node(Y)}: {what} information matrix not positive definite"
        ) from exc


def _run_batched_info(config: ScenarioConfig, truth: np.ndarray) -> ExperimentResult:
    H, N = config.horizon, config.num_nodes
    model = config.filter_model()
    A_inv = check_dynamics(model.A)
    Q = model.Q
    sensors = _Sensors(config)
    link_rng = stream_rng(config.seed, LINK_STREAM)
    positions = config.positions
    gamma = config.gamma
    nocov = config.filter == "voi-nocov"
    msg_bytes = message_size_bytes(4)

    Y0 = config.prior_eps * np.eye(4)
    fY = np.repeat(Y0[None], N, axis=0)
    fy = np.repeat((Y0 @ config.guess())[None], N, axis=0)
    sY, sy = fY.copy(), fy.copy()
    rec = _Recorder(H, N)

    for k in range(H):
        xk = truth[k]
        zs = sensors.measurements(xk)
        x_lin, _, _ = _moments_checked(fy, fY, k, "fused prediction")
        py, pY = fy.copy(), fY.copy()
        for i, z in enumerate(zs):
            if z is not None:
                c = contribution_at(config.sensors[i], z.value, x_lin[i])
                py[i] += c.ivec
                pY[i] += c.imat
        x_p, P_p, L_p = _moments_checked(py, pY, k, "posterior")
        x_q, _, L_q = _moments_checked(sy, sY, k, "shadow")
        if nocov:
            d = x_p - x_q
            stat = 0.5 * np.einsum("ni,ni->n", d, d)
        else:
            stat = batch_kl(
                x_p, P_p, batch_logdet_from_chol(L_p), x_q, sY, batch_logdet_from_chol(L_q)
            )
        tx = stat >= gamma
        rec.store(k, tx, stat, msg_bytes, x_p, P_p, xk, x_lin)

        ok = draw_link_success(positions, config.link, link_rng)  # [sender, receiver]
        R = (ok.T & tx[None, :]).astype(float)  # [receiver, sender]
        w = 1.0 / (1.0 + R.sum(axis=1))
        gy = (py + R @ py) * w[:, None]
        gY = symmetrize((pY + np.einsum("rs,sij->rij", R, pY)) * w[:, None, None])
        fy, fY = batch_info_predict(gy, gY, A_inv, Q)
        sy, sY = batch_info_predict(py, pY, A_inv, Q)
    return rec.result(config, truth)


def _run_batched_diffusion(config: ScenarioConfig, truth: np.ndarray) -> ExperimentResult:
    H, N = config.horizon, config.num_nodes
    model = config.filter_model()
    A, Q = model.A, model.Q
    sensors = _Sensors(config)
    link_rng = stream_rng(config.seed, LINK_STREAM)
    positions = config.positions
    gamma = config.gamma
    msg_bytes = baselines.diffusion_message_bytes(4)

    mean = np.repeat(config.guess()[None], N, axis=0)
    cov = np.repeat((np.eye(4) / config.prior_eps)[None], N, axis=0)
    shadow = mean.copy()
    rec = _Recorder(H, N)

    for k in range(H):
        xk = truth[k]
        zs = sensors.measurements(xk)
        m_a, P_a = mean.copy(), cov.copy()
        for i, z in enumerate(zs):
            if z is not None:
                c = contribution_at(config.sensors[i], z.value, mean[i])
                try:
                    Y = pd_inverse(cov[i], "diffusion covariance")
                    P_a[i] = pd_inverse(Y + c.imat, "diffusion posterior information")
                except NumericalError as exc:
                    raise NumericalError(f"step {k}, node {i}: {exc}") from exc
                m_a[i] = P_a[i] @ (Y @ mean[i] + c.ivec)
        d = m_a - shadow
        stat = 0.5 * np.einsum("ni,ni->n", d, d)
        tx = stat >= gamma
        rec.store(k, tx, stat, msg_bytes, m_a, P_a, xk, mean)

        ok = draw_link_success(positions, config.link, link_rng)
        R = (ok.T & tx[None, :]).astype(float)
        w = 1.0 / (1.0 + R.sum(axis=1))
        combined = (m_a + R @ m_a) * w[:, None]
        mean = combined @ A.T
        cov = symmetrize(A @ P_a @ A.T + Q)
        shadow = m_a @ A.T
    return rec.result(config, truth)


def _run_reference(config: ScenarioConfig, truth: np.ndarray) -> ExperimentResult:
    H, N = config.horizon, config.num_nodes
    model = config.filter_model()
    sensors = _Sensors(config)
    link_rng = stream_rng(config.seed, LINK_STREAM)
    positions = config.positions
    rec = _Recorder(H, N)
    guess = config.guess()
    diffusion = config.filter == "diffusion"

    if diffusion:
        nodes = [
            baselines.diffusion_init(i, guess, config.prior_eps, config.gamma, model.A, model.Q)
            for i in range(N)
        ]
        msg_bytes = baselines.diffusion_message_bytes(4)
    else:
        nodes = [
            node_init(i, guess, config.prior_eps, config.gamma, model.A, model.Q)
            for i in range(N)
        ]
        msg_bytes = message_size_bytes(4)
        decide = (
            baselines.nocov_update_and_decide
            if config.filter == "voi-nocov"
            else node_update_and_decide
        )

    for k in range(H):
        xk = truth[k]
        zs = sensors.measurements(xk)
        tx = np.zeros(N, dtype=bool)
        stat = np.zeros(N)
        xs = np.zeros((N, 4))
        Ps = np.zeros((N, 4, 4))
        prior = np.zeros((N, 4))
        if diffusion:
            adapted = []
            for i, (node, z) in enumerate(zip(nodes, zs)):
                prior[i] = node.mean
                c = _contrib(config.sensors[i], z, node.mean)
                a = baselines.diffusion_adapt(node, c)
                adapted.append(a)
                tx[i], stat[i], xs[i], Ps[i] = a.transmitted, a.statistic, a.mean, a.cov
        else:
            outputs = []
            for i, (node, z) in enumerate(zip(nodes, zs)):
                prior[i] = np.linalg.solve(node.fused.info_mat, node.fused.info_vec)
                c = _contrib(config.sensors[i], z, prior[i])
                nodes[i], out = decide(node, c)
                outputs.append(out)
                tx[i], stat[i] = out.transmitted, out.voi_value
                xs[i], Ps[i] = out.posterior.mean, out.posterior.cov
        rec.store(k, tx, stat, msg_bytes, xs, Ps, xk, prior)

        ok = draw_link_success(positions, config.link, link_rng)
        for r in range(N):
            senders = [s for s in range(N) if tx[s] and ok[s, r]]
            if diffusion:
                nodes[r] = baselines.diffusion_combine_predict(
                    adapted[r], [adapted[s].mean for s in senders]
                )
            else:
                nodes[r] = node_fuse_and_predict(nodes[r], [outputs[s].message for s in senders])
    return rec.result(config, truth)


ENGINES = ("batched", "reference")


def run_experiment(config: ScenarioConfig, engine: str = "batched") -> ExperimentResult:
    """Run one closed-loop simulation; deterministic in ``config.seed``."""
    if engine not in ENGINES:
        raise ValueError(f"engine must be one of {ENGINES}")
    truth = simulate_truth(config.truth_model(), config, stream_rng(config.seed, TRUTH_STREAM))
    if engine == "reference":
        return _run_reference(config, truth)
    if config.filter == "diffusion":
        return _run_batched_diffusion(config, truth)
    return _run_batched_info(config, truth)


@dataclass
class SweepResult:
    gamma: float
    asymptotic_rmse: float
    rmse_best: float
    rmse_worst: float
    mean_medium_access: float
    total_kbps: float
    seeds: int
    error: Optional[str] = None


def _sweep_point(args) -> tuple:
    config, gamma, seeds, engine = args
    out = []
    for s in seeds:
        try:
            res = run_experiment(config.with_(gamma=float(gamma), seed=int(s)), engine)
        except (NumericalError, np.linalg.LinAlgError) as exc:
            return None, f"seed {s}: {exc}"
        out.append(res.summary.scalars())
    return out, None


def run_sweep(
    config: ScenarioConfig,
    gammas: Iterable[float],
    seeds: int | Sequence[int] = 1,
    n_jobs: int = 1,
    engine: str = "batched",
) -> list[SweepResult]:
    """One averaged result per gamma, in input order."""
    gammas = [float(g) for g in gammas]
    if not gammas:
        raise ValueError("gamma list is empty")
    seed_list = (
        [config.seed + i for i in range(seeds)] if isinstance(seeds, int) else list(seeds)
    )
    if not seed_list:
        raise ValueError("need at least one seed")
    tasks = [(config, g, seed_list, engine) for g in gammas]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            raw = list(pool.map(_sweep_point, tasks))
    else:
        raw = [_sweep_point(t) for t in tasks]

    results = []
    for g, (runs, err) in zip(gammas, raw):
        if err is not None:
            log.warning("sweep point gamma=%g failed: %s", g, err)
            nan = float("nan")
            results.append(SweepResult(g, nan, nan, nan, nan, nan, len(seed_list), err))
            continue
        mean = {key: float(np.mean([r[key] for r in runs])) for key in runs[0]}
        results.append(
            SweepResult(
                g, mean["asymptotic_rmse"], mean["best_node_rmse"], mean["worst_node_rmse"],
                mean["mean_medium_access"], mean["kbps"], len(seed_list),
            )
        )
    return results


def calibrate_gamma(
    config: ScenarioConfig,
    target_access: float,
    seeds: Sequence[int],
    lo: float = 1e-4,
    hi: float = 1e4,
    iters: int = 12,
) -> tuple[float, float]:
    """Bisect log(gamma) so mean medium access matches ``target_access``.

    Returns (gamma, achieved access).  Assumes access is non-increasing in gamma.
    """
    def access(g):
        return run_sweep(config, [g], seeds)[0].mean_medium_access

    a_lo, a_hi = access(lo), access(hi)
    if not a_hi <= target_access <= a_lo:
        best = lo if abs(a_lo - target_access) < abs(a_hi - target_access) else hi
        return best, (a_lo if best == lo else a_hi)
    best = (lo, a_lo)
    for _ in range(iters):
        mid = math.sqrt(lo * hi)
        a = access(mid)
        if abs(a - target_access) < abs(best[1] - target_access):
            best = (mid, a)
        if a > target_access:
            lo = mid
        else:
            hi = mid
    return best


# CSV output.


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_steps_csv(result: ExperimentResult, path) -> None:
    H, N = result.transmitted.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STEP_FIELDS)
        for k in range(H):
            for i in range(N):
                w.writerow([
                    str(k), str(i), _fmt(bool(result.transmitted[k, i])),
                    _fmt(result.voi[k, i]), _fmt(int(result.bytes_sent[k, i])),
                    _fmt(result.position_error[k, i]), _fmt(result.cov_trace[k, i]),
                ])


TIMELINE_FIELDS = (
    "step", "network_rmse", "running_rmse", "medium_access", "best_error", "worst_error",
)


def write_timeline_csv(result: ExperimentResult, path) -> None:
    s = result.summary
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIMELINE_FIELDS)
        for k in range(len(s.network_rmse)):
            w.writerow([
                str(k), _fmt(s.network_rmse[k]), _fmt(s.running_rmse[k]),
                _fmt(s.medium_access[k]), _fmt(s.best_error[k]), _fmt(s.worst_error[k]),
            ])


SUMMARY_FIELDS = (
    "filter", "gamma", "seed", "asymptotic_rmse", "best_node_rmse", "worst_node_rmse",
    "mean_medium_access", "total_bytes", "kbps",
)


def write_summary_csv(result: ExperimentResult, path) -> None:
    c = result.config
    row = {"filter": c.filter, "gamma": _fmt(c.gamma), "seed": str(c.seed)}
    row.update({k: _fmt(v) for k, v in result.summary.scalars().items()})
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerow(row)


SWEEP_FIELDS = tuple(SweepResult.__dataclass_fields__)


def write_sweep_csv(results: Sequence[SweepResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, SWEEP_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in results:
            row = asdict(r)
            w.writerow({
                k: ("" if v is None else v if isinstance(v, str) else _fmt(v))
                for k, v in row.items()
            })


def write_outputs(result: ExperimentResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_steps_csv(result, out / "steps.csv")
    write_summary_csv(result, out / "summary.csv")
    write_timeline_csv(result, out / "timeline.csv")
    return out
