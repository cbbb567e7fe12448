"""Synthetic drives on a road graph: ground truth, odometry and segmented scans.

The simulated scan stands in for a LIDAR plus road-segmentation network:
road points scatter laterally about nearby road centrelines, non-road
points fill the rest of the sensor footprint, and every label is flipped
independently with a configurable probability.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from roadmcl.errors import ConfigError, MapStructureError
from roadmcl.map_model import RoadGraph
from roadmcl.measurement_model import SegmentedPointCloud
from roadmcl.motion_model import (
    DEFAULT_WHEELBASE,
    ControlInput,
    OdometrySample,
    integrate_odometry,
    normalize_angle,
)
from roadmcl.particle_filter import Replay
from roadmcl.rng import substream

_MAX_STEER = math.pi / 2 - 1e-6


@dataclass(frozen=True)
class ScenarioConfig:
    route: tuple[int, ...] | None = None
    route_length: float = 2000.0
    speed: float = 6.0
    step_dt: float = 1.0
    odom_rate: float = 10.0
    points_per_scan: int = 200
    road_point_lateral_sigma: float = 2.5
    nonroad_fraction: float = 0.4
    label_flip_prob: float = 0.06
    nonroad_min_offset: float = 5.0
    sensor_range: float = 50.0
    fov_deg: float = 180.0
    odom_bias: float = 0.0
    odom_speed_sigma: float = 0.05
    odom_steer_sigma: float = 0.002
    wheelbase: float = DEFAULT_WHEELBASE
    seed: int = 0

    def __post_init__(self):
        if self.route is not None:
            object.__setattr__(self, "route", tuple(int(w) for w in self.route))
        for name in ("nonroad_fraction", "label_flip_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(name, "must lie in [0, 1]")
        for name in ("speed", "step_dt", "odom_rate", "sensor_range", "wheelbase", "route_length"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, "must be positive")
        if not 0 < self.fov_deg <= 360:
            raise ConfigError("fov_deg", "must lie in (0, 360]")
        if self.points_per_scan < 0:
            raise ConfigError("points_per_scan", "must be non-negative")
        if self.road_point_lateral_sigma < 0 or self.nonroad_min_offset < 0:
            raise ConfigError("road_point_lateral_sigma", "offsets must be non-negative")
        if self.odom_speed_sigma < 0 or self.odom_steer_sigma < 0:
            raise ConfigError("odom_speed_sigma", "noise must be non-negative")
        if round(self.step_dt * self.odom_rate) < 1:
            raise ConfigError("odom_rate", "need at least one odometry sample per step")

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown scenario field")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError("scenario", str(exc)) from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["route"] is not None:
            d["route"] = list(d["route"])
        return d


@dataclass
class GroundTruthTrace:
    """Poses at each step boundary plus the odometry recorded in between.

    ``odometry[k]`` holds the samples covering the move from ``poses[k]`` to
    ``poses[k + 1]``; ``odom_t`` are the end times of every sample.
    """

    poses: np.ndarray
    headings_unwrapped: np.ndarray
    odom_t: np.ndarray
    odom_v: np.ndarray
    odom_delta: np.ndarray
    samples_per_step: int
    step_dt: float
    route_nodes: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return self.poses.shape[0] - 1

    def odometry(self, k: int) -> list[OdometrySample]:
        m = self.samples_per_step
        return _samples(self.odom_t, self.odom_v, self.odom_delta, k * m, (k + 1) * m)

    def arc_length(self) -> float:
        return float(np.hypot(*np.diff(self.poses[:, :2], axis=0).T).sum())


def _samples(t, v, delta, i0, i1) -> list[OdometrySample]:
    out = []
    for i in range(i0, i1):
        dt = t[i] - (t[i - 1] if i > 0 else 0.0)
        out.append(OdometrySample(float(v[i]), float(delta[i]), float(dt)))
    return out


def _route_from_ways(g: RoadGraph, way_ids) -> list[int]:
    ways = g.way_by_id
    for wid in way_ids:
        if wid not in ways:
            raise MapStructureError(wid, "route references a way not in the map")
    seq = [list(ways[w].node_ids) for w in way_ids]
    if len(seq) == 1:
        return seq[0]
    first, second = seq[0], seq[1]
    if first[-1] not in (second[0], second[-1]):
        if first[0] in (second[0], second[-1]):
            first = first[::-1]
        else:
            raise MapStructureError(way_ids[1], f"route is disconnected after way {way_ids[0]}")
    nodes = list(first)
    for wid, nd in zip(way_ids[1:], seq[1:]):
        if nd[0] == nodes[-1]:
            nodes.extend(nd[1:])
        elif nd[-1] == nodes[-1]:
            nodes.extend(nd[::-1][1:])
        else:
            raise MapStructureError(wid, "route is disconnected at this way")
    return nodes


def _random_route(g: RoadGraph, length: float, rng: np.random.Generator) -> list[int]:
    """Random drive over the graph that avoids U-turns and dead ends where it can."""
    adj = g.adjacency()
    through = sorted(n for n, nb in adj.items() if len(nb) >= 2)
    if not through:
        raise MapStructureError(0, "map has no through-nodes to route over")
    cur = through[int(rng.integers(len(through)))]
    nodes = [cur]
    prev = None
    visited_edges: set[tuple[int, int]] = set()
    total = 0.0
    while total < length:
        options = [n for n in adj[cur] if n != prev] or list(adj[cur])
        live = [n for n in options if len(adj[n]) >= 2] or options
        fresh = [n for n in live if (min(cur, n), max(cur, n)) not in visited_edges] or live
        nxt = fresh[int(rng.integers(len(fresh)))]
        visited_edges.add((min(cur, nxt), max(cur, nxt)))
        a, b = g.nodes[cur], g.nodes[nxt]
        total += math.hypot(b.e - a.e, b.n - a.n)
        nodes.append(nxt)
        prev, cur = cur, nxt
    return nodes


class _Polyline:
    def __init__(self, pts: np.ndarray, closed: bool):
        self.pts = pts
        seg = np.hypot(*np.diff(pts, axis=0).T)
        self.cum = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(self.cum[-1])
        self.closed = closed

    def at(self, s: np.ndarray) -> np.ndarray:
        s = np.mod(s, self.length) if self.closed else np.clip(s, 0.0, self.length)
        return np.stack([np.interp(s, self.cum, self.pts[:, 0]), np.interp(s, self.cum, self.pts[:, 1])], axis=1)


def generate_trajectory(g: RoadGraph, cfg: ScenarioConfig) -> GroundTruthTrace:
    """Drive the configured route at constant speed.

    Odometry is sampled at ``odom_rate``; each sample's speed and steering
    are chosen so that Euler integration of the bicycle model reproduces the
    chord between consecutive dense positions exactly, before the configured
    bias and noise are applied.
    """
    if cfg.route:
        nodes = _route_from_ways(g, list(cfg.route))
        max_len = None
    else:
        nodes = _random_route(g, cfg.route_length, substream(cfg.seed, "route"))
        max_len = cfg.route_length
    pts = np.array([g.nodes[n] for n in nodes], dtype=np.float64)
    closed = len(nodes) > 2 and nodes[0] == nodes[-1]
    poly = _Polyline(pts, closed)
    length = poly.length if max_len is None else min(max_len, poly.length)

    m = int(round(cfg.step_dt * cfg.odom_rate))
    dt_o = cfg.step_dt / m
    ds = cfg.speed * dt_o
    K = int(math.floor(length / ds + 1e-9))
    T = K // m
    if T < 1:
        raise ConfigError("route", f"route of {length:.1f} m is shorter than one step")
    K = T * m
    s = np.arange(K + 2) * ds
    p = poly.at(s)
    chord = np.diff(p, axis=0)
    phi = np.arctan2(chord[:, 1], chord[:, 0])
    if not closed and s[K + 1] > poly.length:
        phi[K] = phi[K - 1]
    phi = np.unwrap(phi[: K + 1])

    v = np.hypot(chord[:K, 0], chord[:K, 1]) / dt_o
    dphi = np.diff(phi)
    delta = np.arctan(dphi * cfg.wheelbase / (v * dt_o))

    rng = substream(cfg.seed, "odometry")
    v_meas = v * (1.0 + cfg.odom_bias) + cfg.odom_speed_sigma * rng.standard_normal(K)
    d_meas = np.clip(delta + cfg.odom_steer_sigma * rng.standard_normal(K), -_MAX_STEER, _MAX_STEER)
    t = np.arange(1, K + 1) * dt_o

    idx = np.arange(T + 1) * m
    poses = np.column_stack([p[idx, 0], p[idx, 1], normalize_angle(phi[idx])])
    return GroundTruthTrace(poses, phi[idx], t, v_meas, d_meas, m, cfg.step_dt, nodes)


def _clip_to_disk(segs: np.ndarray, c: np.ndarray, r: float) -> np.ndarray:
    """Portions of segments inside the disk; returns (M, 4) rows."""
    p0, d = segs[:, :2] - c, segs[:, 2:] - segs[:, :2]
    a = np.einsum("ij,ij->i", d, d)
    b = 2.0 * np.einsum("ij,ij->i", p0, d)
    cc = np.einsum("ij,ij->i", p0, p0) - r * r
    disc = b * b - 4 * a * cc
    ok = disc > 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0 = np.clip((-b - sq) / (2 * a), 0.0, 1.0)
    t1 = np.clip((-b + sq) / (2 * a), 0.0, 1.0)
    ok &= t1 > t0
    s0 = segs[ok, :2] + t0[ok, None] * d[ok]
    s1 = segs[ok, :2] + t1[ok, None] * d[ok]
    return np.hstack([s0, s1])


def point_segment_distance(px: np.ndarray, py: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Exact distance from each point to the nearest of ``segs``; (P,) result."""
    x0, y0, x1, y1 = (segs[:, i][None, :] for i in range(4))
    dx, dy = x1 - x0, y1 - y0
    t = np.clip(((px[:, None] - x0) * dx + (py[:, None] - y0) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
    return np.hypot(x0 + t * dx - px[:, None], y0 + t * dy - py[:, None]).min(axis=1)


def _in_footprint(a, b, cfg) -> np.ndarray:
    half = math.radians(cfg.fov_deg) / 2
    return (a * a + b * b <= cfg.sensor_range ** 2) & (np.abs(np.arctan2(b, a)) <= half + 1e-12)


def synthesize_scan(gt, g: RoadGraph, cfg: ScenarioConfig, rng: np.random.Generator) -> SegmentedPointCloud:
    """Synthetic segmented scan seen from ground-truth pose ``gt``."""
    e, n, th = gt
    ct, st = math.cos(th), math.sin(th)
    centre = np.array([e, n])
    n_total = cfg.points_per_scan
    n_road = int(round(n_total * (1.0 - cfg.nonroad_fraction)))
    n_non = n_total - n_road
    sig = cfg.road_point_lateral_sigma
    R = cfg.sensor_range

    def to_sensor(pe, pn):
        de, dn = pe - e, pn - n
        return ct * de + st * dn, -st * de + ct * dn

    reach = R + max(3 * sig, cfg.nonroad_min_offset) + 1.0
    near = g.segments[point_segment_distance_rows(centre, g.segments) <= reach]
    road_a = np.empty(0)
    road_b = np.empty(0)
    clipped = _clip_to_disk(near, centre, R) if len(near) else np.empty((0, 4))
    if len(clipped) and n_road:
        seg_len = np.hypot(clipped[:, 2] - clipped[:, 0], clipped[:, 3] - clipped[:, 1])
        prob = seg_len / seg_len.sum()
        got_a, got_b = [], []
        have = 0
        for _ in range(50):
            k = 4 * (n_road - have) + 8
            si = rng.choice(len(clipped), size=k, p=prob)
            u = rng.random(k)
            lat = rng.standard_normal(k)
            for _ in range(20):
                bad = np.abs(lat) > 3.0
                if not bad.any():
                    break
                lat[bad] = rng.standard_normal(int(bad.sum()))
            lat = np.clip(lat, -3.0, 3.0) * sig
            s = clipped[si]
            dx, dy = s[:, 2] - s[:, 0], s[:, 3] - s[:, 1]
            L = np.hypot(dx, dy)
            pe = s[:, 0] + u * dx - lat * dy / L
            pn = s[:, 1] + u * dy + lat * dx / L
            a, b = to_sensor(pe, pn)
            keep = _in_footprint(a, b, cfg)
            got_a.append(a[keep])
            got_b.append(b[keep])
            have += int(keep.sum())
            if have >= n_road:
                break
        road_a = np.concatenate(got_a)[:n_road]
        road_b = np.concatenate(got_b)[:n_road]
    n_non += n_road - len(road_a)

    half = math.radians(cfg.fov_deg) / 2
    non_a, non_b = [], []
    have = 0
    for _ in range(50):
        if have >= n_non:
            break
        k = 4 * (n_non - have) + 8
        r = R * np.sqrt(rng.random(k))
        ang = rng.uniform(-half, half, k)
        a, b = r * np.cos(ang), r * np.sin(ang)
        pe, pn = e + a * ct - b * st, n + a * st + b * ct
        if len(near):
            keep = point_segment_distance(pe, pn, near) >= cfg.nonroad_min_offset
        else:
            keep = np.ones(k, dtype=bool)
        non_a.append(a[keep])
        non_b.append(b[keep])
        have += int(keep.sum())
    non_a = np.concatenate(non_a)[:n_non] if non_a else np.empty(0)
    non_b = np.concatenate(non_b)[:n_non] if non_b else np.empty(0)

    a = np.concatenate([road_a, non_a])
    b = np.concatenate([road_b, non_b])
    c = np.concatenate([np.ones(len(road_a)), np.zeros(len(non_a))])
    flip = rng.random(len(c)) < cfg.label_flip_prob
    c = np.where(flip, 1.0 - c, c)
    return SegmentedPointCloud(np.column_stack([a, b, c]), "simulated")


def point_segment_distance_rows(p: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Distance from a single point to each segment; (M,) result."""
    d = segs[:, 2:] - segs[:, :2]
    t = np.clip(np.einsum("ij,ij->i", p - segs[:, :2], d) / np.einsum("ij,ij->i", d, d), 0.0, 1.0)
    q = segs[:, :2] + t[:, None] * d
    return np.hypot(q[:, 0] - p[0], q[:, 1] - p[1])


def scan_rng(seed: int, step: int) -> np.random.Generator:
    return substream(seed, "scan", step)


@dataclass
class Scenario:
    """A synthetic drive: ground truth, odometry and one scan per step."""

    truth: GroundTruthTrace
    clouds: list[SegmentedPointCloud]
    config: ScenarioConfig

    def to_replay(self, wheelbase: float | None = None) -> Replay:
        L = self.config.wheelbase if wheelbase is None else wheelbase
        controls = [integrate_odometry(self.truth.odometry(k), L) for k in range(len(self.truth))]
        return Replay(self.truth.poses, controls, self.clouds)


def build_scenario(g: RoadGraph, cfg: ScenarioConfig) -> Scenario:
    truth = generate_trajectory(g, cfg)
    clouds = [synthesize_scan(truth.poses[k], g, cfg, scan_rng(cfg.seed, k)) for k in range(1, len(truth) + 1)]
    return Scenario(truth, clouds, cfg)


# --- replay directory ---------------------------------------------------------


def save_scenario(sc: Scenario, out_dir: str | Path, extra: dict | None = None) -> None:
    """Write ``scenario.json``, ``groundtruth.csv``, ``odometry.csv`` and
    ``clouds/NNNNNN.csv`` (one per step, starting at 000001)."""
    out = Path(out_dir)
    (out / "clouds").mkdir(parents=True, exist_ok=True)
    meta = {
        "config": sc.config.to_dict(),
        "steps": len(sc.truth),
        "step_dt": sc.truth.step_dt,
        "samples_per_step": sc.truth.samples_per_step,
        "wheelbase": sc.config.wheelbase,
        "seed": sc.config.seed,
    }
    if extra:
        meta.update(extra)
    (out / "scenario.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    with open(out / "groundtruth.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "e", "n", "theta"])
        for k, (e, n, th) in enumerate(sc.truth.poses):
            w.writerow([k, repr(float(e)), repr(float(n)), repr(float(th))])
    with open(out / "odometry.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "v", "delta"])
        for t, v, d in zip(sc.truth.odom_t, sc.truth.odom_v, sc.truth.odom_delta):
            w.writerow([repr(float(t)), repr(float(v)), repr(float(d))])
    for k, cloud in enumerate(sc.clouds, start=1):
        write_cloud_csv(cloud, out / "clouds" / f"{k:06d}.csv")


def write_cloud_csv(cloud: SegmentedPointCloud, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["a", "b", "c"])
        for a, b, c in cloud.points:
            w.writerow([repr(float(a)), repr(float(b)), int(c)])


def read_cloud_csv(path: str | Path, provenance: str = "simulated") -> SegmentedPointCloud:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return SegmentedPointCloud.empty(provenance)
    return SegmentedPointCloud(np.array([[float(r["a"]), float(r["b"]), float(r["c"])] for r in rows]), provenance)


def _read_csv_array(path: Path, cols: list[str]) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or any(c not in reader.fieldnames for c in cols):
            raise ConfigError(str(path), f"CSV header must contain {cols}")
        return np.array([[float(r[c]) for c in cols] for r in reader], dtype=np.float64).reshape(-1, len(cols))


def load_replay(scenario_dir: str | Path, wheelbase: float | None = None) -> Replay:
    """Load a replay directory, grouping odometry samples into steps by time.

    Step ``k`` receives the samples whose end time lies in
    ``((k - 1) * step_dt, k * step_dt]``.
    """
    d = Path(scenario_dir)
    meta = json.loads((d / "scenario.json").read_text())
    step_dt = float(meta["step_dt"])
    L = float(meta.get("wheelbase", DEFAULT_WHEELBASE)) if wheelbase is None else wheelbase
    gt = _read_csv_array(d / "groundtruth.csv", ["e", "n", "theta"])
    odo = _read_csv_array(d / "odometry.csv", ["t", "v", "delta"])
    T = gt.shape[0] - 1
    t = odo[:, 0]
    step_of = np.ceil(t / step_dt - 1e-9).astype(np.int64)
    controls = []
    for k in range(1, T + 1):
        (sel,) = np.nonzero(step_of == k)
        if len(sel):
            samples = _samples(t, odo[:, 1], odo[:, 2], int(sel[0]), int(sel[-1]) + 1)
            controls.append(integrate_odometry(samples, L))
        else:
            controls.append(ControlInput(0.0, 0.0, 0.0))
    clouds = [read_cloud_csv(d / "clouds" / f"{k:06d}.csv") for k in range(1, T + 1)]
    return Replay(gt, controls, clouds)
