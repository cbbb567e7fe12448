"""Kinematic bicycle odometry and noisy pose propagation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

DEFAULT_WHEELBASE = 2.8


def normalize_angle(a):
    """Wrap angle(s) into (-pi, pi]. Works on scalars and arrays."""
    two_pi = 2.0 * math.pi
    if isinstance(a, np.ndarray):
        return a - two_pi * np.ceil((a - math.pi) / two_pi)
    return a - two_pi * math.ceil((a - math.pi) / two_pi)


class Pose(NamedTuple):
    e: float
    n: float
    theta: float


class ControlInput(NamedTuple):
    """Pose change expressed in the frame of the pose at the start of the interval."""

    de: float
    dn: float
    dtheta: float


class OdometrySample(NamedTuple):
    v: float
    delta: float
    dt: float


@dataclass(frozen=True)
class MotionNoise:
    sigma_pos: float = 0.1
    sigma_theta: float = math.radians(3.0)

    def __post_init__(self):
        if self.sigma_pos < 0 or self.sigma_theta < 0:
            raise ValueError("motion noise standard deviations must be non-negative")


ZERO_NOISE = MotionNoise(0.0, 0.0)


def integrate_odometry(samples: Iterable[OdometrySample], wheelbase: float = DEFAULT_WHEELBASE) -> ControlInput:
    """Forward-Euler integration of the kinematic bicycle model.

    Yaw rate is ``v * tan(delta) / wheelbase``. Each sample moves ``v * dt``
    along the current heading, then turns by ``yaw_rate * dt``. Integration
    starts at the origin with zero heading.
    """
    if not wheelbase > 0:
        raise ValueError(f"wheelbase must be positive, got {wheelbase}")
    theta = de = dn = 0.0
    for v, delta, dt in samples:
        if not dt > 0:
            raise ValueError(f"odometry dt must be positive, got {dt}")
        de += v * math.cos(theta) * dt
        dn += v * math.sin(theta) * dt
        theta += v * math.tan(delta) / wheelbase * dt
    return ControlInput(de, dn, normalize_angle(theta))


def steering_for_turn(v: float, dtheta: float, dt: float, wheelbase: float = DEFAULT_WHEELBASE) -> float:
    """Steering angle that yields heading change ``dtheta`` over ``dt`` at speed ``v``."""
    return math.atan(dtheta * wheelbase / (v * dt))


def apply_control(e, n, theta, u: ControlInput):
    """Noise-free composition of pose(s) with a control. Accepts arrays."""
    c, s = np.cos(theta), np.sin(theta)
    return e + c * u.de - s * u.dn, n + s * u.de + c * u.dn, normalize_angle(theta + u.dtheta)


def propagate(x_prev: Pose, u: ControlInput, noise: MotionNoise, rng: np.random.Generator) -> Pose:
    """Sample a successor pose: rotate the control into the map frame, add it,
    then perturb position and heading with zero-mean Gaussian noise."""
    e, n, th = apply_control(x_prev.e, x_prev.n, x_prev.theta, u)
    z = rng.standard_normal(3)
    return Pose(
        float(e + noise.sigma_pos * z[0]),
        float(n + noise.sigma_pos * z[1]),
        float(normalize_angle(th + noise.sigma_theta * z[2])),
    )


def propagate_many(poses: np.ndarray, u: ControlInput, noise: MotionNoise, rng: np.random.Generator) -> np.ndarray:
    """Vectorized :func:`propagate` over an (N, 3) pose array.

    Draws an (N, 3) block of standard normals in one call, so the result
    depends only on the generator state, never on how work is split later.
    """
    e, n, th = apply_control(poses[:, 0], poses[:, 1], poses[:, 2], u)
    z = rng.standard_normal((poses.shape[0], 3))
    out = np.empty_like(poses)
    out[:, 0] = e + noise.sigma_pos * z[:, 0]
    out[:, 1] = n + noise.sigma_pos * z[:, 1]
    out[:, 2] = normalize_angle(th + noise.sigma_theta * z[:, 2])
    return out
