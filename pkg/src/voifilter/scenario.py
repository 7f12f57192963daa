"""Target ground truth, sensor deployment and scenario configuration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .errors import ConfigError
from .netsim import LinkModel
from .sensing import SensorKind, SensorSpec

FILTERS = ("voi", "voi-nocov", "diffusion")

# Named random streams; sensor i uses SENSOR_STREAM + i.
TRUTH_STREAM = 0
LINK_STREAM = 1
SENSOR_STREAM = 1000


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(stream),)))


@dataclass(frozen=True, eq=False)
class NcvModel:
    """Nearly-constant-velocity dynamics for state [x, vx, y, vy]."""

    delta: float
    A: np.ndarray
    Q: np.ndarray
    q_scale: float = 1.0


def build_ncv(delta: float, q_scale: float = 1.0) -> NcvModel:
    if not delta > 0:
        raise ValueError(f"sampling interval must be positive, got {delta}")
    if q_scale < 0:
        raise ValueError(f"q_scale must be nonnegative, got {q_scale}")
    F = np.array([[1.0, delta], [0.0, 1.0]])
    Qb = np.array([[delta**3 / 3.0, delta**2 / 2.0], [delta**2 / 2.0, delta]])
    A = np.kron(np.eye(2), F)
    Q = q_scale * np.kron(np.eye(2), Qb)
    if q_scale > 0:
        np.linalg.cholesky(Q)
    return NcvModel(float(delta), A, Q, float(q_scale))


@dataclass(frozen=True)
class Maneuver:
    step: int
    velocity: tuple[float, float]


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    sensors: tuple[SensorSpec, ...]
    initial_state: tuple[float, ...] = (1500.0, 8.0, 1000.0, 12.0)
    maneuvers: tuple[Maneuver, ...] = ()
    horizon: int = 3000
    delta: float = 1.0
    q_scale: float = 1.0
    filter_q_scale: Optional[float] = None
    gamma: float = 0.4
    filter: str = "voi"
    link: LinkModel = field(default_factory=LinkModel)
    seed: int = 0
    prior_eps: float = 1e-6
    prior_guess: Optional[tuple[float, ...]] = None
    name: str = "scenario"

    def __post_init__(self):
        if not self.sensors:
            raise ConfigError("scenario needs at least one node")
        if not any(s.kind is not SensorKind.NONE for s in self.sensors):
            raise ConfigError("scenario needs at least one sensing node")
        if len(self.initial_state) != 4:
            raise ConfigError("initial_state must have 4 entries [x, vx, y, vy]")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        for m in self.maneuvers:
            if not 0 <= m.step < self.horizon:
                raise ConfigError(f"maneuver step {m.step} outside horizon {self.horizon}")
        if not self.delta > 0:
            raise ConfigError("delta must be positive")
        if self.q_scale < 0 or (self.filter_q_scale is not None and self.filter_q_scale <= 0):
            raise ConfigError("process noise scales must be positive")
        if not self.gamma >= 0:
            raise ConfigError("gamma must be >= 0")
        if self.filter not in FILTERS:
            raise ConfigError(f"filter must be one of {FILTERS}, got {self.filter!r}")
        if not self.prior_eps > 0:
            raise ConfigError("prior eps must be positive")
        if self.prior_guess is not None and len(self.prior_guess) != 4:
            raise ConfigError("prior guess must have 4 entries")

    @property
    def num_nodes(self) -> int:
        return len(self.sensors)

    @property
    def positions(self) -> np.ndarray:
        return np.array([s.position for s in self.sensors])

    def truth_model(self) -> NcvModel:
        return build_ncv(self.delta, self.q_scale)

    def filter_model(self) -> NcvModel:
        q = self.q_scale if self.filter_q_scale is None else self.filter_q_scale
        return build_ncv(self.delta, q)

    def guess(self) -> np.ndarray:
        g = self.initial_state if self.prior_guess is None else self.prior_guess
        return np.array(g, dtype=float)

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)


def simulate_truth(model: NcvModel, config: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """Trajectory of shape (horizon, 4); row k is the state at step k."""
    H = config.horizon
    noise = rng.standard_normal((H, 4))
    if model.q_scale > 0:
        noise = noise @ np.linalg.cholesky(model.Q).T
    else:
        noise = np.zeros_like(noise)
    maneuvers = {m.step: m.velocity for m in config.maneuvers}
    traj = np.empty((H, 4))
    x = np.array(config.initial_state, dtype=float)
    for k in range(H):
        if k in maneuvers:
            x[1], x[3] = maneuvers[k]
        traj[k] = x
        x = model.A @ x + noise[k]
    return traj


def deploy_uniform(
    count: int,
    bounds,
    seed: int,
    toa_fraction: float = 0.5,
    toa_noise_std: float = 1.5,
    doa_noise_std: float = math.radians(2.0),
    sensing_radius: float = 1000.0,
    non_sensing: int = 0,
) -> tuple[SensorSpec, ...]:
    """Seeded uniform placement over a rectangle ((xmin, xmax), (ymin, ymax))."""
    rng = np.random.default_rng(seed)
    (x0, x1), (y0, y1) = bounds
    pos = np.column_stack([rng.uniform(x0, x1, count), rng.uniform(y0, y1, count)])
    n_sensing = count - non_sensing
    n_toa = int(round(toa_fraction * n_sensing))
    kinds = [SensorKind.TOA] * n_toa + [SensorKind.DOA] * (n_sensing - n_toa)
    kinds += [SensorKind.NONE] * non_sensing
    kinds = [kinds[i] for i in rng.permutation(count)]
    specs = []
    for p, kind in zip(pos, kinds):
        std = {SensorKind.TOA: toa_noise_std, SensorKind.DOA: doa_noise_std}.get(kind, 1.0)
        specs.append(SensorSpec(kind, (float(p[0]), float(p[1])), std, sensing_radius))
    return tuple(specs)


# Config file handling.


def _sensor_from_dict(d: dict, default_radius: float) -> SensorSpec:
    kind = SensorKind(str(d.get("kind", "NONE")).upper())
    if "noise_std_deg" in d:
        std = math.radians(float(d["noise_std_deg"]))
    else:
        std = float(d.get("noise_std", 1.0))
    return SensorSpec(kind, tuple(d["position"]), std, float(d.get("sensing_radius", default_radius)))


def config_from_dict(raw: dict[str, Any]) -> ScenarioConfig:
    try:
        target = raw.get("target", {})
        nodes = raw["nodes"]
        radius = float(nodes.get("sensing_radius", 1000.0))
        if "list" in nodes:
            sensors = tuple(_sensor_from_dict(d, radius) for d in nodes["list"])
        else:
            sensors = deploy_uniform(
                int(nodes["count"]),
                nodes["bounds"],
                int(nodes.get("placement_seed", 0)),
                toa_fraction=float(nodes.get("toa_fraction", 0.5)),
                toa_noise_std=float(nodes.get("toa_noise_std", 1.5)),
                doa_noise_std=math.radians(float(nodes.get("doa_noise_std_deg", 2.0))),
                sensing_radius=radius,
                non_sensing=int(nodes.get("non_sensing", 0)),
            )
        maneuvers = tuple(
            Maneuver(int(m["step"]), tuple(float(v) for v in m["velocity"]))
            for m in target.get("maneuvers", [])
        )
        prior = raw.get("prior", {})
        guess = prior.get("guess")
        fq = raw.get("filter_q_scale")
        return ScenarioConfig(
            sensors=sensors,
            initial_state=tuple(float(v) for v in target.get("initial_state", (1500, 8, 1000, 12))),
            maneuvers=maneuvers,
            horizon=int(raw.get("horizon", 3000)),
            delta=float(raw.get("delta", 1.0)),
            q_scale=float(raw.get("q_scale", 1.0)),
            filter_q_scale=None if fq is None else float(fq),
            gamma=float(raw.get("gamma", 0.4)),
            filter=str(raw.get("filter", "voi")),
            link=LinkModel(**raw.get("link", {})),
            seed=int(raw.get("seed", 0)),
            prior_eps=float(prior.get("eps", 1e-6)),
            prior_guess=None if guess is None else tuple(float(v) for v in guess),
            name=str(raw.get("name", "scenario")),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario config: {exc}") from exc


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping at top level")
    return config_from_dict(raw)
