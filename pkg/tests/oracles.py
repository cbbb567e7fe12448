"""Slow scalar reference implementations used to check the vectorized code.

Nothing here imports from roadmcl; every formula is written out again with
plain ``math`` so that a shared bug cannot hide in both places.
"""

import math


def seg_dist(px, py, x0, y0, x1, y1):
    """Exact distance from (px, py) to the closed segment (x0, y0)-(x1, y1)."""
    dx, dy = x1 - x0, y1 - y0
    L2 = dx * dx + dy * dy
    if L2 == 0.0:
        return math.hypot(px - x0, py - y0)
    t = ((px - x0) * dx + (py - y0) * dy) / L2
    t = min(1.0, max(0.0, t))
    return math.hypot(x0 + t * dx - px, y0 + t * dy - py)


def nearest_distance(segments, px, py):
    return min(seg_dist(px, py, *map(float, s)) for s in segments)


def road_kernel(kind, d, sigma=10.0, tau=0.1, d_max=30.0):
    if kind == "gaussian":
        return math.exp(-d * d / (2 * sigma * sigma))
    if kind == "quadratic":
        return 1.0 / (d * d + 1.0)
    if kind == "exp_decay":
        return math.exp(-d * tau)
    if kind == "maplite_linear":
        return max(0.0, 1.0 - d / d_max)
    raise ValueError(kind)


def point_weight(kind, d, c, eps=1e-6, **params):
    w = road_kernel(kind, d, **params)
    if c == 0:
        w = 1.0 - w
    return min(1.0, max(eps, w))


def cell_lookup(origin_e, origin_n, cell, width, height, values, e, n):
    """Nearest-cell lookup with additive extrapolation outside the grid."""
    col = math.floor((e - origin_e) / cell)
    row = math.floor((n - origin_n) / cell)
    if 0 <= col < width and 0 <= row < height:
        return float(values[row][col])
    col = min(max(col, 0), width - 1)
    row = min(max(row, 0), height - 1)
    ce = origin_e + (col + 0.5) * cell
    cn = origin_n + (row + 0.5) * cell
    return float(values[row][col]) + math.hypot(e - ce, n - cn)


def literal_product(pose, points, dist_at, kind, eps=1e-6, **params):
    """The measurement likelihood as a plain product over points."""
    e, n, th = pose
    prod = 1.0
    for a, b, c in points:
        pe = e + a * math.cos(th) - b * math.sin(th)
        pn = n + a * math.sin(th) + b * math.cos(th)
        prod *= point_weight(kind, dist_at(pe, pn), int(c), eps, **params)
    return prod


def spherical(x, y, z):
    r = math.hypot(x, y, z)
    return r, math.acos(z / r), math.atan2(y, x)


def euler_bicycle(samples, L):
    """(de, dn, dtheta) by stepping x, y, then heading, one sample at a time."""
    x = y = th = 0.0
    for v, delta, dt in samples:
        x += v * math.cos(th) * dt
        y += v * math.sin(th) * dt
        th += v * math.tan(delta) / L * dt
    return x, y, th


def systematic_counts(weights, u0):
    """Copy counts from the textbook low-variance resampler with offset u0 in [0, 1)."""
    n = len(weights)
    total = sum(weights)
    w = [x / total for x in weights]
    counts = [0] * n
    c = w[0]
    i = 0
    for m in range(n):
        u = (u0 + m) / n
        while u >= c and i < n - 1:
            i += 1
            c += w[i]
        counts[i] += 1
    return counts


def distinct_voxel_keys(points, voxel):
    return len({(math.floor(a / voxel), math.floor(b / voxel), int(c)) for a, b, c in points})


def nearest_distance_many(segments, px, py):
    """Brute-force nearest-segment distance for arrays of points (numpy, no grid)."""
    import numpy as np

    s = np.asarray(segments, dtype=np.float64)
    px = np.asarray(px, dtype=np.float64)[:, None]
    py = np.asarray(py, dtype=np.float64)[:, None]
    x0, y0, x1, y1 = s[:, 0], s[:, 1], s[:, 2], s[:, 3]
    dx, dy = x1 - x0, y1 - y0
    t = np.clip(((px - x0) * dx + (py - y0) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
    return np.hypot(x0 + t * dx - px, y0 + t * dy - py).min(axis=1)
