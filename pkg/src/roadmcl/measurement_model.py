"""Per-point map-agreement kernels and pose scoring.

A segmented scan point at distance ``d`` from the nearest road edge
contributes a weight ``D(d)`` if it is labelled road and ``1 - D(d)`` if
labelled non-road; the clamped weights are multiplied over the scan. The
product is accumulated as a sum of logs.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numba import njit

from roadmcl.distance_field import DistanceField, lookup_many

KINDS = ("gaussian", "quadratic", "exp_decay", "maplite_linear")
KIND_LABELS = {
    "gaussian": "Gaussian",
    "quadratic": "Quadratic",
    "exp_decay": "Exp. decay",
    "maplite_linear": "Maplite",
}


@dataclass(frozen=True)
class DistanceFunctionSpec:
    kind: str = "gaussian"
    sigma: float = 10.0
    tau: float = 0.1
    d_max: float = 30.0
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distance function kind {self.kind!r}; expected one of {KINDS}")
        if not (self.sigma > 0 and self.tau > 0 and self.d_max > 0):
            raise ValueError("sigma, tau and d_max must be positive")
        if not 0 < self.epsilon < 0.5:
            raise ValueError(f"epsilon must lie in (0, 0.5), got {self.epsilon}")

    @property
    def kind_code(self) -> int:
        return KINDS.index(self.kind)

    @property
    def param(self) -> float:
        return (self.sigma, 1.0, self.tau, self.d_max)[self.kind_code]


def road_weight(spec: DistanceFunctionSpec, d):
    """Unclamped road-point kernel ``D(d)``; vectorized over ``d``."""
    d = np.asarray(d, dtype=np.float64)
    if spec.kind == "gaussian":
        return np.exp(-(d * d) / (2.0 * spec.sigma * spec.sigma))
    if spec.kind == "quadratic":
        return 1.0 / (d * d + 1.0)
    if spec.kind == "exp_decay":
        return np.exp(-d * spec.tau)
    return np.maximum(0.0, 1.0 - d / spec.d_max)


def raw_weight(spec: DistanceFunctionSpec, d, c):
    """Unclamped weight: ``D(d)`` for road points, ``1 - D(d)`` otherwise."""
    w = road_weight(spec, d)
    return np.where(np.asarray(c) == 1, w, 1.0 - w)


def distance_weights(spec: DistanceFunctionSpec, d, c):
    """Per-point weights for distances ``d`` and labels ``c`` (1 = road),
    floored at ``spec.epsilon``."""
    return np.clip(raw_weight(spec, d, c), spec.epsilon, 1.0)


def eval_distance_fn(spec: DistanceFunctionSpec, d: float, c: int) -> float:
    if d < 0:
        raise ValueError(f"distance must be non-negative, got {d}")
    return float(distance_weights(spec, d, c))


@dataclass(frozen=True)
class SegmentedPointCloud:
    """2D sensor-frame points ``(a, b, c)``: forward, left, road label."""

    points: np.ndarray = field(repr=False)
    provenance: str = "simulated"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts[:, :2])):
            raise ValueError("segmented points must have finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def empty(cls, provenance: str = "simulated") -> "SegmentedPointCloud":
        return cls(np.empty((0, 3)), provenance)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def a(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def b(self) -> np.ndarray:
        return self.points[:, 1]

    @property
    def c(self) -> np.ndarray:
        return self.points[:, 2].astype(np.int64)


def to_map_frame(x, z: SegmentedPointCloud) -> tuple[np.ndarray, np.ndarray]:
    e, n, th = x
    ct, st = math.cos(th), math.sin(th)
    return e + z.a * ct - z.b * st, n + z.a * st + z.b * ct


def score_pose(x, z: SegmentedPointCloud, f: DistanceField, spec: DistanceFunctionSpec) -> float:
    """Log of the product of per-point weights for the scan ``z`` seen from pose ``x``."""
    if len(z) == 0:
        return 0.0
    pe, pn = to_map_frame(x, z)
    d = lookup_many(f, pe, pn)
    return float(np.sum(np.log(distance_weights(spec, d, z.c))))


def downsample_voxel(z: SegmentedPointCloud, voxel: float = 2.0) -> SegmentedPointCloud:
    """Keep at most one point per (voxel, class), the one nearest the voxel
    centre; output sorted by voxel index then class."""
    if not voxel > 0:
        raise ValueError(f"voxel size must be positive, got {voxel}")
    if len(z) == 0:
        return z
    ix = np.floor(z.a / voxel).astype(np.int64)
    iy = np.floor(z.b / voxel).astype(np.int64)
    c = z.c
    d2 = (z.a - (ix + 0.5) * voxel) ** 2 + (z.b - (iy + 0.5) * voxel) ** 2
    idx = np.arange(len(z))
    order = np.lexsort((idx, d2, c, iy, ix))
    keys = np.stack([ix[order], iy[order], c[order]], axis=1)
    first = np.ones(len(order), dtype=bool)
    first[1:] = np.any(keys[1:] != keys[:-1], axis=1)
    return SegmentedPointCloud(z.points[order[first]], z.provenance)


# --- batch scoring -----------------------------------------------------------


@njit(cache=True, nogil=True)
def _log_weight(kind, param, eps, d, label):
    if kind == 0:
        w = math.exp(-(d * d) / (2.0 * param * param))
    elif kind == 1:
        w = 1.0 / (d * d + 1.0)
    elif kind == 2:
        w = math.exp(-d * param)
    else:
        w = 1.0 - d / param
        if w < 0.0:
            w = 0.0
    if label != 1:
        w = 1.0 - w
    if w < eps:
        w = eps
    elif w > 1.0:
        w = 1.0
    return math.log(w)


@njit(cache=True, nogil=True)
def _score_block(poses, i0, i1, pa, pb, pc, tab_road, tab_non, values, ox, oy, cs, kind, param, eps, out):
    height, width = values.shape
    npts = pa.shape[0]
    for i in range(i0, i1):
        e = poses[i, 0]
        n = poses[i, 1]
        ct = math.cos(poses[i, 2])
        st = math.sin(poses[i, 2])
        acc = 0.0
        for j in range(npts):
            pe = e + pa[j] * ct - pb[j] * st
            pn = n + pa[j] * st + pb[j] * ct
            fc = np.floor((pe - ox) / cs)
            fr = np.floor((pn - oy) / cs)
            if fc >= 0.0 and fc < width and fr >= 0.0 and fr < height:
                col = int(fc)
                row = int(fr)
                if pc[j] == 1:
                    acc += tab_road[row, col]
                else:
                    acc += tab_non[row, col]
            else:
                col = int(min(max(fc, 0.0), width - 1.0))
                row = int(min(max(fr, 0.0), height - 1.0))
                ce = ox + (col + 0.5) * cs
                cn = oy + (row + 0.5) * cs
                d = values[row, col] + math.sqrt((pe - ce) ** 2 + (pn - cn) ** 2)
                acc += _log_weight(kind, param, eps, d, pc[j])
        out[i] = acc


@lru_cache(maxsize=8)
def _executor(workers: int) -> ThreadPoolExecutor:
    return ThreadPoolExecutor(workers, thread_name_prefix="roadmcl-score")


class ParticleScorer:
    """Scores many poses against one distance field with one kernel.

    Per-cell log-weights for both labels are tabulated once, so the inner
    loop is a transform and a single table read per point. Each particle's
    sum is accumulated in point order by exactly one thread, so results are
    bit-identical for any worker count.
    """

    def __init__(self, f: DistanceField, spec: DistanceFunctionSpec):
        self.field = f
        self.spec = spec
        vals = np.ascontiguousarray(f.values, dtype=np.float64)
        self._values = vals
        self._tab_road = np.log(distance_weights(spec, vals, 1))
        self._tab_non = np.log(distance_weights(spec, vals, 0))

    def score(self, poses: np.ndarray, z: SegmentedPointCloud, workers: int = 1) -> np.ndarray:
        poses = np.ascontiguousarray(poses, dtype=np.float64)
        n = poses.shape[0]
        out = np.zeros(n, dtype=np.float64)
        if len(z) == 0 or n == 0:
            return out
        pa = np.ascontiguousarray(z.a)
        pb = np.ascontiguousarray(z.b)
        pc = np.ascontiguousarray(z.c)
        f, s = self.field, self.spec
        args = (pa, pb, pc, self._tab_road, self._tab_non, self._values,
                f.origin.e, f.origin.n, f.cell_size, s.kind_code, s.param, s.epsilon, out)
        workers = max(1, min(workers, n))
        if workers == 1:
            _score_block(poses, 0, n, *args)
        else:
            bounds = np.linspace(0, n, workers + 1).astype(np.int64)
            futs = [_executor(workers).submit(_score_block, poses, int(a), int(b), *args)
                    for a, b in zip(bounds[:-1], bounds[1:])]
            for fut in futs:
                fut.result()
        return out
