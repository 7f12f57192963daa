"""Range (TOA) and bearing (DOA) sensors with EKF linearisation.

State layout is ``[x, vx, y, vy]``.  Bearings follow the convention
``atan2(x - x_s, y - y_s)``: the angle is measured from the +y axis towards
+x (compass style), evaluated with the full-circle arctangent.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .gaussian_info import MeasurementContribution, MomentEstimate

DEGENERATE_RADIUS = 1e-6


class SensorKind(str, enum.Enum):
    TOA = "TOA"
    DOA = "DOA"
    NONE = "NONE"


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class SensorSpec:
    kind: SensorKind
    position: tuple[float, float]
    noise_std: float = 1.0
    sensing_radius: float = 1000.0

    def __post_init__(self):
        object.__setattr__(self, "kind", SensorKind(self.kind))
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))
        if self.kind is not SensorKind.NONE and not self.noise_std > 0:
            raise ValueError(f"noise_std must be positive, got {self.noise_std}")
        if not self.sensing_radius > 0:
            raise ValueError(f"sensing_radius must be positive, got {self.sensing_radius}")

    @property
    def variance(self) -> float:
        return self.noise_std**2


@dataclass(frozen=True)
class Measurement:
    value: float
    kind: SensorKind

    def __post_init__(self):
        kind = SensorKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is SensorKind.DOA:
            object.__setattr__(self, "value", wrap_angle(self.value))


def _offset(spec: SensorSpec, state) -> tuple[float, float]:
    return float(state[0]) - spec.position[0], float(state[2]) - spec.position[1]


def in_range(spec: SensorSpec, state) -> bool:
    if spec.kind is SensorKind.NONE:
        return False
    dx, dy = _offset(spec, state)
    r = math.hypot(dx, dy)
    return DEGENERATE_RADIUS < r <= spec.sensing_radius


def predict_measurement(spec: SensorSpec, state) -> float:
    """Noiseless h(x)."""
    dx, dy = _offset(spec, state)
    if spec.kind is SensorKind.TOA:
        return math.hypot(dx, dy)
    if spec.kind is SensorKind.DOA:
        return math.atan2(dx, dy)
    raise ValueError("sensor has no measurement model")


def measure(spec: SensorSpec, true_state, rng: Optional[np.random.Generator]) -> Optional[Measurement]:
    """Noisy measurement, or None when the target is out of range.

    One standard normal is drawn from ``rng`` on every call, in range or not,
    so a sensor's noise sequence does not depend on the target path.  Passing
    ``rng=None`` gives the noiseless value.
    """
    noise = rng.standard_normal() if rng is not None else 0.0
    if not in_range(spec, true_state):
        return None
    return Measurement(predict_measurement(spec, true_state) + spec.noise_std * noise, spec.kind)


def jacobian(spec: SensorSpec, state) -> np.ndarray:
    dx, dy = _offset(spec, state)
    r2 = dx * dx + dy * dy
    if r2 <= DEGENERATE_RADIUS**2:
        raise ValueError("linearisation point coincides with the sensor position")
    if spec.kind is SensorKind.TOA:
        r = math.sqrt(r2)
        return np.array([[dx / r, 0.0, dy / r, 0.0]])
    if spec.kind is SensorKind.DOA:
        return np.array([[dy / r2, 0.0, -dx / r2, 0.0]])
    raise ValueError("sensor has no measurement model")


def contribution(
    spec: SensorSpec, z: Measurement, linearization: MomentEstimate
) -> MeasurementContribution:
    """EKF information contribution linearised at the prior mean.

    Uses the pseudo-measurement z - h(x) + H x, with the bearing innovation
    wrapped before it is formed.
    """
    return contribution_at(spec, z.value, linearization.mean)


def contribution_at(spec: SensorSpec, z: float, x_lin) -> MeasurementContribution:
    x_lin = np.asarray(x_lin, dtype=float)
    H = jacobian(spec, x_lin)
    innov = z - predict_measurement(spec, x_lin)
    if spec.kind is SensorKind.DOA:
        innov = wrap_angle(innov)
    z_bar = innov + float(H[0] @ x_lin)
    r_inv = 1.0 / spec.variance
    return MeasurementContribution(H[0] * (r_inv * z_bar), r_inv * (H.T @ H))
