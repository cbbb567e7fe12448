"""Particle filter loop: initialize, propagate, weight, resample, estimate."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from roadmcl.distance_field import DistanceField
from roadmcl.map_model import RoadGraph
from roadmcl.measurement_model import (
    DistanceFunctionSpec,
    ParticleScorer,
    SegmentedPointCloud,
    downsample_voxel,
)
from roadmcl.motion_model import ControlInput, MotionNoise, Pose, normalize_angle, propagate_many
from roadmcl.rng import substream

log = logging.getLogger(__name__)

ESTIMATORS = ("weighted_mean", "max_weight")


@dataclass(frozen=True)
class InitSpec:
    """Initial particle distribution.

    ``tracking`` spreads particles uniformly over a disk about ``center``;
    ``global`` spreads them uniformly over ``rect`` = (min_e, min_n, max_e,
    max_n). Headings are uniform unless ``heading_sigma`` (radians) is set,
    which draws them about the center heading instead. A ``None`` center or rect is
    filled in by :func:`run_scenario` (ground-truth start, map extent).
    """

    mode: str = "tracking"
    count: int = 10_000
    center: Pose | None = None
    radius: float = 200.0
    rect: tuple[float, float, float, float] | None = None
    heading_sigma: float | None = None

    def __post_init__(self):
        if self.mode not in ("tracking", "global"):
            raise ValueError(f"init mode must be 'tracking' or 'global', got {self.mode!r}")
        if self.count <= 0:
            raise ValueError("particle count must be positive")
        if self.mode == "tracking" and not self.radius > 0:
            raise ValueError("tracking radius must be positive")
        if self.rect is not None:
            e0, n0, e1, n1 = self.rect
            if not (e1 > e0 and n1 > n0):
                raise ValueError(f"degenerate init rectangle {self.rect}")

    @classmethod
    def global_(cls, rect=None, count: int = 100_000) -> "InitSpec":
        return cls(mode="global", count=count, rect=rect)


@dataclass
class ParticleSet:
    """Poses as an (N, 3) array of (e, n, theta) with cumulative log-weights."""

    poses: np.ndarray
    log_weights: np.ndarray
    rng: np.random.Generator = field(repr=False)
    step_count: int = 0
    resample_interval: int = 20
    degenerate: bool = False

    def __len__(self) -> int:
        return self.poses.shape[0]

    def normalized_weights(self) -> np.ndarray:
        lw = self.log_weights
        w = np.exp(lw - lw.max())
        return w / w.sum()


@dataclass(frozen=True)
class StepResult:
    estimate: Pose
    spread: float
    resampled: bool
    degenerate: bool


def initialize(spec: InitSpec, rng: np.random.Generator, resample_interval: int = 20) -> ParticleSet:
    n = spec.count
    poses = np.empty((n, 3))
    if spec.mode == "tracking":
        if spec.center is None:
            raise ValueError("tracking init needs a center pose")
        r = spec.radius * np.sqrt(rng.random(n))
        a = 2.0 * math.pi * rng.random(n)
        poses[:, 0] = spec.center[0] + r * np.cos(a)
        poses[:, 1] = spec.center[1] + r * np.sin(a)
    else:
        if spec.rect is None:
            raise ValueError("global init needs a rectangle")
        e0, n0, e1, n1 = spec.rect
        poses[:, 0] = e0 + (e1 - e0) * rng.random(n)
        poses[:, 1] = n0 + (n1 - n0) * rng.random(n)
    if spec.mode == "tracking" and spec.heading_sigma is not None:
        poses[:, 2] = normalize_angle(spec.center[2] + spec.heading_sigma * rng.standard_normal(n))
    else:
        # pi - 2*pi*[0, 1) covers (-pi, pi]
        poses[:, 2] = math.pi - 2.0 * math.pi * rng.random(n)
    if resample_interval < 1:
        raise ValueError("resample interval must be at least 1")
    return ParticleSet(poses, np.zeros(n), rng, 0, resample_interval)


def estimate_pose(poses: np.ndarray, log_weights: np.ndarray, estimator: str = "weighted_mean") -> Pose:
    """Weighted mean position with a weighted circular mean heading, or the
    single highest-weight particle."""
    if estimator == "max_weight":
        return Pose(*map(float, poses[int(np.argmax(log_weights))]))
    w = np.exp(log_weights - log_weights.max())
    w /= w.sum()
    e = float(w @ poses[:, 0])
    n = float(w @ poses[:, 1])
    th = math.atan2(float(w @ np.sin(poses[:, 2])), float(w @ np.cos(poses[:, 2])))
    return Pose(e, n, float(normalize_angle(th)))


def particle_spread(poses: np.ndarray, center: Pose) -> float:
    """RMS distance of particle positions about ``center``."""
    d2 = (poses[:, 0] - center.e) ** 2 + (poses[:, 1] - center.n) ** 2
    return float(math.sqrt(d2.mean()))


def systematic_resample(s: ParticleSet, rng: np.random.Generator | None = None) -> ParticleSet:
    """Low-variance resampling with one uniform draw; weights reset to zero.

    A set flagged degenerate (or with non-finite weights) is resampled as if
    uniformly weighted, i.e. every particle is kept once, and stays flagged.
    """
    rng = s.rng if rng is None else rng
    n = len(s)
    u0 = rng.random()
    lw = s.log_weights
    degenerate = s.degenerate or not np.all(np.isfinite(lw))
    if degenerate:
        idx = np.arange(n)
    else:
        c = np.cumsum(np.exp(lw - lw.max()))
        c /= c[-1]
        positions = (u0 + np.arange(n)) / n
        idx = np.minimum(np.searchsorted(c, positions, side="right"), n - 1)
    return replace(s, poses=s.poses[idx].copy(), log_weights=np.zeros(n), degenerate=degenerate)


@lru_cache(maxsize=4)
def _scorer(f: DistanceField, spec: DistanceFunctionSpec) -> ParticleScorer:
    return ParticleScorer(f, spec)


def step(
    s: ParticleSet,
    u: ControlInput,
    z: SegmentedPointCloud,
    f: DistanceField,
    spec: DistanceFunctionSpec,
    noise: MotionNoise,
    *,
    workers: int = 1,
    estimator: str = "weighted_mean",
) -> tuple[ParticleSet, StepResult]:
    """One filter cycle. Resampling happens when the incremented step count
    is a multiple of the resample interval; the estimate uses the weights
    before that resampling, the spread is measured on the returned set."""
    scorer = _scorer(f, spec)
    step_count = s.step_count + 1
    poses = propagate_many(s.poses, u, noise, s.rng)
    inc = scorer.score(poses, z, workers)
    degenerate = len(z) > 0 and float(inc.max()) <= len(z) * math.log(spec.epsilon) + 1e-9
    if degenerate:
        log.warning("step %d: every particle scored at the weight floor", step_count)
    lw = s.log_weights + inc
    # keep weights bounded; only differences matter
    lw -= lw.max()
    out = replace(s, poses=poses, log_weights=lw, step_count=step_count, degenerate=degenerate)
    est = estimate_pose(poses, lw, estimator)
    resampled = step_count % s.resample_interval == 0
    if resampled:
        out = systematic_resample(out)
        out.degenerate = degenerate
    return out, StepResult(est, particle_spread(out.poses, est), resampled, degenerate)


@dataclass(frozen=True)
class Replay:
    """Ground truth poses ``gt[0..T]`` with the control and scan observed on
    arrival at each of ``gt[1..T]``."""

    gt: np.ndarray
    controls: Sequence[ControlInput]
    clouds: Sequence[SegmentedPointCloud]

    def __post_init__(self):
        if len(self.controls) == 0:
            raise ValueError("scenario has no steps")
        if not (len(self.controls) == len(self.clouds) == self.gt.shape[0] - 1):
            raise ValueError("scenario needs T controls, T clouds and T + 1 ground-truth poses")

    def __len__(self) -> int:
        return len(self.controls)


@dataclass
class Trace:
    step: np.ndarray
    estimate: np.ndarray
    gt: np.ndarray
    error: np.ndarray
    spread: np.ndarray
    resampled: np.ndarray
    degenerate: np.ndarray
    convergence_step: int | None
    convergence_step_error_based: int | None
    mean_error_post_convergence: float | None

    def summary(self) -> dict:
        return {
            "convergence_step": self.convergence_step,
            "mean_error_post_convergence": self.mean_error_post_convergence,
            "convergence_step_error_based": self.convergence_step_error_based,
            "mean_error_all_steps": float(self.error.mean()),
            "final_error": float(self.error[-1]),
            "steps": int(self.step[-1]),
            "degenerate_steps": int(self.degenerate.sum()),
        }


def first_sustained_below(values: np.ndarray, threshold: float, hold: int) -> int | None:
    """First index from which ``hold`` consecutive values are below ``threshold``."""
    below = np.asarray(values) < threshold
    run = 0
    for i, b in enumerate(below):
        run = run + 1 if b else 0
        if run >= hold:
            return i - hold + 1
    return None


def run_scenario(
    road_map: RoadGraph | None,
    f: DistanceField,
    scenario: Replay,
    spec: DistanceFunctionSpec,
    init: InitSpec,
    *,
    noise: MotionNoise = MotionNoise(),
    resample_interval: int = 20,
    voxel: float | None = 2.0,
    seed: int = 0,
    workers: int = 1,
    estimator: str = "weighted_mean",
    spread_threshold: float = 25.0,
    hold_steps: int = 10,
) -> Trace:
    """Replay a scenario through the filter and score it against ground truth.

    Record 0 is the initial particle set before any update. The convergence
    step is the first step whose particle spread stays below
    ``spread_threshold`` for ``hold_steps`` consecutive steps; the reported
    mean error averages every step from there to the end.
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"estimator must be one of {ESTIMATORS}")
    gt = np.asarray(scenario.gt, dtype=np.float64)
    if init.mode == "tracking" and init.center is None:
        init = replace(init, center=Pose(*gt[0]))
    if init.mode == "global" and init.rect is None:
        if road_map is None:
            init = replace(init, rect=f.bounds)
        else:
            init = replace(init, rect=road_map.bounds())
    rng = substream(seed, "filter")
    s = initialize(init, rng, resample_interval)

    T = len(scenario)
    est = np.empty((T + 1, 3))
    spread = np.empty(T + 1)
    resampled = np.zeros(T + 1, dtype=bool)
    degenerate = np.zeros(T + 1, dtype=bool)
    est[0] = estimate_pose(s.poses, s.log_weights, estimator)
    spread[0] = particle_spread(s.poses, Pose(*est[0]))
    for k in range(1, T + 1):
        z = scenario.clouds[k - 1]
        if voxel:
            z = downsample_voxel(z, voxel)
        s, res = step(s, scenario.controls[k - 1], z, f, spec, noise, workers=workers, estimator=estimator)
        est[k] = res.estimate
        spread[k] = res.spread
        resampled[k] = res.resampled
        degenerate[k] = res.degenerate

    error = np.hypot(est[:, 0] - gt[:, 0], est[:, 1] - gt[:, 1])
    conv = first_sustained_below(spread, spread_threshold, hold_steps)
    conv_err = first_sustained_below(error, spread_threshold, hold_steps)
    mean_err = float(error[conv:].mean()) if conv is not None else None
    return Trace(
        step=np.arange(T + 1), estimate=est, gt=gt, error=error, spread=spread,
        resampled=resampled, degenerate=degenerate, convergence_step=conv,
        convergence_step_error_based=conv_err, mean_error_post_convergence=mean_err,
    )
