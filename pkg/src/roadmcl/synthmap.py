"""Deterministic synthetic road networks written as OSM XML.

``rural_network`` lays junctions on a jittered lattice, joins neighbours
with meandering roads, thins a few links and hangs dead-end farm tracks off
the rest. The result is irregular enough that a 50 m scan window rarely
looks the same in two places, which is what global localization needs.

Run ``python -m roadmcl.synthmap OUT_DIR`` to regenerate the bundled
fixtures.
"""

from __future__ import annotations

import math
import sys
from pathlib import Path

import numpy as np

from roadmcl.map_model import GeoPoint, MapPoint, map_to_geo, write_osm
from roadmcl.rng import substream

DEFAULT_ORIGIN = GeoPoint(40.10, -88.30)


class _Builder:
    def __init__(self, origin: GeoPoint):
        self.origin = origin
        self.nodes: dict[int, GeoPoint] = {}
        self.xy: dict[int, tuple[float, float]] = {}
        self.ways: list[tuple[int, list[int], str]] = []

    def node(self, e: float, n: float) -> int:
        nid = len(self.nodes) + 1
        self.nodes[nid] = map_to_geo(MapPoint(e, n), self.origin)
        self.xy[nid] = (e, n)
        return nid

    def way(self, refs: list[int], highway: str) -> int:
        wid = len(self.ways) + 1
        self.ways.append((wid, refs, highway))
        return wid

    def write(self, path: str | Path) -> None:
        write_osm(path, self.nodes, self.ways)


def grid_network(path: str | Path, spacing: float = 100.0, origin: GeoPoint = DEFAULT_ORIGIN) -> None:
    """3x3 junction grid, one two-node way per edge (12 ways)."""
    b = _Builder(origin)
    ids = [[b.node(c * spacing, r * spacing) for c in range(3)] for r in range(3)]
    for r in range(3):
        for c in range(2):
            b.way([ids[r][c], ids[r][c + 1]], "residential")
    for c in range(3):
        for r in range(2):
            b.way([ids[r][c], ids[r + 1][c]], "residential")
    b.write(path)


def ring_network(path: str | Path, radius: float = 400.0, origin: GeoPoint = DEFAULT_ORIGIN) -> None:
    """A closed ring road with four spokes meeting at a central junction."""
    b = _Builder(origin)
    k = 72
    ring = [b.node(radius * math.cos(2 * math.pi * i / k), radius * math.sin(2 * math.pi * i / k)) for i in range(k)]
    b.way(ring + [ring[0]], "tertiary")
    hub = b.node(0.0, 0.0)
    for q in range(4):
        i = q * k // 4
        mids = [b.node(f * radius * math.cos(2 * math.pi * i / k) + 30 * math.sin(3 * f * math.pi),
                       f * radius * math.sin(2 * math.pi * i / k)) for f in (0.25, 0.5, 0.75)]
        b.way([hub, *mids, ring[i]], "unclassified")
    b.write(path)


def _meander(p0, p1, rng, step=40.0, amp=35.0, ripple=0.0):
    """Intermediate vertices of a smooth wiggly road from p0 to p1 (endpoints excluded)."""
    p0, p1 = np.asarray(p0), np.asarray(p1)
    length = float(np.hypot(*(p1 - p0)))
    k = max(2, int(length // step))
    t = np.linspace(0.0, 1.0, k + 1)[1:-1]
    normal = np.array([-(p1 - p0)[1], (p1 - p0)[0]]) / length
    phase = rng.uniform(0, 2 * math.pi, 2)
    a1, a2 = rng.uniform(-amp, amp), rng.uniform(-amp / 2, amp / 2)
    off = a1 * np.sin(math.pi * t) + a2 * np.sin(2 * math.pi * t + phase[0]) * np.sin(math.pi * t)
    if ripple:
        cycles = max(1, round(length / 250.0))
        off += ripple * rng.uniform(0.5, 1.0) * np.sin(2 * cycles * math.pi * t + phase[1]) * np.sin(math.pi * t)
    return p0 + t[:, None] * (p1 - p0) + off[:, None] * normal


def rural_network(
    path: str | Path,
    seed: int = 7,
    cols: int = 5,
    rows: int = 4,
    width: float = 1500.0,
    height: float = 1350.0,
    driveways: int = 0,
    ripple: float = 0.0,
    origin: GeoPoint = DEFAULT_ORIGIN,
) -> None:
    """Irregular rural network filling a ``width`` x ``height`` rectangle."""
    rng = substream(seed, "synthmap")
    b = _Builder(origin)
    dx, dy = width / (cols - 1), height / (rows - 1)
    jitter = 0.22 * min(dx, dy)
    junction = {}
    pos = {}
    for r in range(rows):
        for c in range(cols):
            je = c * dx + (rng.uniform(-jitter, jitter) if 0 < c < cols - 1 else 0.0)
            jn = r * dy + (rng.uniform(-jitter, jitter) if 0 < r < rows - 1 else 0.0)
            pos[r, c] = (je, jn)
            junction[r, c] = b.node(je, jn)

    links = [((r, c), (r, c + 1)) for r in range(rows) for c in range(cols - 1)]
    links += [((r, c), (r + 1, c)) for r in range(rows - 1) for c in range(cols)]
    drop = set()
    for i in rng.permutation(len(links))[: len(links) // 5]:
        (a, b_) = links[i]
        interior = lambda rc: 0 < rc[0] < rows - 1 and 0 < rc[1] < cols - 1
        if interior(a) or interior(b_):
            drop.add(int(i))
    classes = ["tertiary", "unclassified", "unclassified", "track", "residential"]
    road_vertices = []
    along = {}
    for i, (a, b_) in enumerate(links):
        if i in drop:
            continue
        mids = _meander(pos[a], pos[b_], rng, step=25.0 if ripple else 40.0, ripple=ripple)
        refs = [junction[a], *(b.node(float(e), float(n)) for e, n in mids), junction[b_]]
        road_vertices.extend(refs[1:-1])
        for prev, v, nxt in zip(refs, refs[1:-1], refs[2:]):
            along[v] = (prev, nxt)
        b.way(refs, classes[int(rng.integers(len(classes)))])

    # dead-end farm tracks
    for vid in rng.choice(road_vertices, size=10, replace=False):
        e0, n0 = b.xy[int(vid)]
        ang = rng.uniform(0, 2 * math.pi)
        ln = rng.uniform(90, 220)
        end = (e0 + ln * math.cos(ang), n0 + ln * math.sin(ang))
        if not (0 <= end[0] <= width and 0 <= end[1] <= height):
            continue
        mids = _meander((e0, n0), end, rng, step=35.0, amp=12.0)
        refs = [int(vid), *(b.node(float(e), float(n)) for e, n in mids), b.node(*end)]
        b.way(refs, "track")

    # short driveways roughly square to the road
    for vid in rng.choice(road_vertices, size=min(driveways, len(road_vertices)), replace=False):
        vid = int(vid)
        (pe, pn), (qe, qn) = b.xy[along[vid][0]], b.xy[along[vid][1]]
        e0, n0 = b.xy[vid]
        ang = math.atan2(qn - pn, qe - pe) + rng.choice([-1, 1]) * (math.pi / 2 + rng.uniform(-0.4, 0.4))
        ln = rng.uniform(25, 70)
        end = (e0 + ln * math.cos(ang), n0 + ln * math.sin(ang))
        b.way([vid, b.node(*end)], "service")
    b.write(path)


def write_fixtures(out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid_network(out / "grid4.osm")
    ring_network(out / "ring.osm")
    rural_network(out / "rural.osm", driveways=120)


if __name__ == "__main__":
    write_fixtures(sys.argv[1] if len(sys.argv) > 1 else "fixtures")
