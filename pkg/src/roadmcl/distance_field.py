"""Dense grid of exact distances to the nearest road segment.

Every cell stores the Euclidean distance from its centre to the closest
segment of the road graph. Building is exact: segments are pruned per
tile of cells using a lower bound (segment bounding box to tile rectangle)
against an upper bound (best segment distance from the tile centre plus the
tile half-diagonal), and the survivors are searched exhaustively.
"""

from __future__ import annotations

import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from roadmcl.errors import EmptyMapError, ResourceError
from roadmcl.map_model import MapPoint, RoadGraph

DEFAULT_CELL_SIZE = 2.0
DEFAULT_CELL_BUDGET = 100_000_000
TILE = 32

MCDF_MAGIC = b"MCDF"
MCDF_VERSION = 1
_HEADER = struct.Struct("<4sIdddII")


@dataclass(frozen=True, eq=False)
class DistanceField:
    """``values[row, col]`` is the distance at the centre of the cell whose
    lower-left corner is ``origin + (col, row) * cell_size``."""

    origin: MapPoint
    cell_size: float
    width: int
    height: int
    values: np.ndarray = field(repr=False)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        e0, n0 = self.origin
        return e0, n0, e0 + self.width * self.cell_size, n0 + self.height * self.cell_size

    def cell_center(self, row: int, col: int) -> MapPoint:
        return MapPoint(
            self.origin.e + (col + 0.5) * self.cell_size,
            self.origin.n + (row + 0.5) * self.cell_size,
        )

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-centre coordinate vectors (east per column, north per row)."""
        es = self.origin.e + (np.arange(self.width) + 0.5) * self.cell_size
        ns = self.origin.n + (np.arange(self.height) + 0.5) * self.cell_size
        return es, ns


@njit(cache=True, nogil=True)
def _seg_dist(px, py, x0, y0, x1, y1):
    dx = x1 - x0
    dy = y1 - y0
    t = ((px - x0) * dx + (py - y0) * dy) / (dx * dx + dy * dy)
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    qx = x0 + t * dx - px
    qy = y0 + t * dy - py
    return math.sqrt(qx * qx + qy * qy)


@njit(cache=True, nogil=True)
def _fill_tile_rows(values, ox, oy, cs, segs, tile, tr0, tr1):
    height, width = values.shape
    nseg = segs.shape[0]
    cand = np.empty(nseg, dtype=np.int64)
    n_tile_cols = (width + tile - 1) // tile
    for tr in range(tr0, tr1):
        r0 = tr * tile
        r1 = min(r0 + tile, height)
        for tc in range(n_tile_cols):
            c0 = tc * tile
            c1 = min(c0 + tile, width)
            xmin = ox + (c0 + 0.5) * cs
            xmax = ox + (c1 - 0.5) * cs
            ymin = oy + (r0 + 0.5) * cs
            ymax = oy + (r1 - 0.5) * cs
            cx = 0.5 * (xmin + xmax)
            cy = 0.5 * (ymin + ymax)
            half_diag = 0.5 * math.sqrt((xmax - xmin) ** 2 + (ymax - ymin) ** 2)
            best_ub = np.inf
            for s in range(nseg):
                d = _seg_dist(cx, cy, segs[s, 0], segs[s, 1], segs[s, 2], segs[s, 3])
                if d < best_ub:
                    best_ub = d
            best_ub += half_diag
            k = 0
            for s in range(nseg):
                sx0 = min(segs[s, 0], segs[s, 2])
                sx1 = max(segs[s, 0], segs[s, 2])
                sy0 = min(segs[s, 1], segs[s, 3])
                sy1 = max(segs[s, 1], segs[s, 3])
                gx = max(0.0, max(sx0 - xmax, xmin - sx1))
                gy = max(0.0, max(sy0 - ymax, ymin - sy1))
                if math.sqrt(gx * gx + gy * gy) <= best_ub:
                    cand[k] = s
                    k += 1
            for r in range(r0, r1):
                py = oy + (r + 0.5) * cs
                for c in range(c0, c1):
                    px = ox + (c + 0.5) * cs
                    m = np.inf
                    for i in range(k):
                        s = cand[i]
                        d = _seg_dist(px, py, segs[s, 0], segs[s, 1], segs[s, 2], segs[s, 3])
                        if d < m:
                            m = d
                    values[r, c] = m


def field_bounds(g: RoadGraph, margin: float = 100.0) -> tuple[float, float, float, float]:
    e0, n0, e1, n1 = g.bounds()
    return e0 - margin, n0 - margin, e1 + margin, n1 + margin


def build_distance_field(
    g: RoadGraph,
    bounds: tuple[float, float, float, float] | None = None,
    cell_size: float = DEFAULT_CELL_SIZE,
    cell_budget: int = DEFAULT_CELL_BUDGET,
    workers: int = 1,
) -> DistanceField:
    """Rasterize exact nearest-segment distances over ``bounds``
    ``(min_e, min_n, max_e, max_n)``; defaults to the graph extent plus 100 m."""
    if g.segments.shape[0] == 0:
        raise EmptyMapError("road graph has no segments")
    if not cell_size > 0:
        raise ValueError(f"cell_size must be positive, got {cell_size}")
    if bounds is None:
        bounds = field_bounds(g)
    e0, n0, e1, n1 = map(float, bounds)
    if not (e1 > e0 and n1 > n0):
        raise ValueError(f"degenerate bounds {bounds}")
    width = int(math.ceil((e1 - e0) / cell_size))
    height = int(math.ceil((n1 - n0) / cell_size))
    if width * height > cell_budget:
        raise ResourceError(
            f"grid of {width}x{height} = {width * height} cells exceeds budget of {cell_budget}"
        )

    values = np.empty((height, width), dtype=np.float64)
    segs = np.ascontiguousarray(g.segments, dtype=np.float64)
    n_tile_rows = (height + TILE - 1) // TILE
    workers = max(1, min(workers, n_tile_rows))
    if workers == 1:
        _fill_tile_rows(values, e0, n0, cell_size, segs, TILE, 0, n_tile_rows)
    else:
        splits = np.linspace(0, n_tile_rows, workers + 1).astype(int)
        with ThreadPoolExecutor(workers) as ex:
            futures = [
                ex.submit(_fill_tile_rows, values, e0, n0, cell_size, segs, TILE, int(a), int(b))
                for a, b in zip(splits[:-1], splits[1:])
            ]
            for fut in futures:
                fut.result()
    values.setflags(write=False)
    return DistanceField(MapPoint(e0, n0), float(cell_size), width, height, values)


def lookup(f: DistanceField, p: MapPoint) -> float:
    """Nearest-cell distance at ``p``.

    Outside the grid the clamped boundary cell's value is extended by the
    distance from ``p`` to that cell's centre, which never underestimates.
    """
    col = math.floor((p[0] - f.origin.e) / f.cell_size)
    row = math.floor((p[1] - f.origin.n) / f.cell_size)
    if 0 <= col < f.width and 0 <= row < f.height:
        return float(f.values[row, col])
    col = min(max(col, 0), f.width - 1)
    row = min(max(row, 0), f.height - 1)
    ce, cn = f.cell_center(row, col)
    return float(f.values[row, col]) + math.hypot(p[0] - ce, p[1] - cn)


def lookup_many(f: DistanceField, e: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Vectorized :func:`lookup`."""
    e = np.asarray(e, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    col = np.floor((e - f.origin.e) / f.cell_size)
    row = np.floor((n - f.origin.n) / f.cell_size)
    inside = (col >= 0) & (col < f.width) & (row >= 0) & (row < f.height)
    ci = np.clip(col, 0, f.width - 1).astype(np.int64)
    ri = np.clip(row, 0, f.height - 1).astype(np.int64)
    d = f.values[ri, ci].astype(np.float64)
    ce = f.origin.e + (ci + 0.5) * f.cell_size
    cn = f.origin.n + (ri + 0.5) * f.cell_size
    return np.where(inside, d, d + np.hypot(e - ce, n - cn))


def save_field(f: DistanceField, path: str | Path) -> None:
    """Write the little-endian MCDF format; the file appears atomically."""
    path = Path(path)
    header = _HEADER.pack(MCDF_MAGIC, MCDF_VERSION, f.origin.e, f.origin.n, f.cell_size, f.width, f.height)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(f.values, dtype="<f4").tobytes())
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def load_field(path: str | Path) -> DistanceField:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated MCDF header")
    magic, version, oe, on, cs, width, height = _HEADER.unpack_from(raw)
    if magic != MCDF_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != MCDF_VERSION:
        raise ValueError(f"{path}: unsupported MCDF version {version}")
    expected = _HEADER.size + 4 * width * height
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(height, width).astype(np.float64)
    values.setflags(write=False)
    return DistanceField(MapPoint(oe, on), cs, width, height, values)
