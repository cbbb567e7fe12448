"""Spherical front-view projection of 3D scans and label back-projection.

A point (x forward, y left, z up) maps to range ``r``, inclination
``theta = arccos(z / r)`` and azimuth ``phi = atan2(y, x)``. Columns bin the
azimuth at a fixed angular step starting at ``phi_min``; rows bin the
inclination uniformly over the sensor's vertical span, top row first.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from roadmcl.errors import DegeneratePointError
from roadmcl.measurement_model import SegmentedPointCloud

CLOUD_COLUMNS = ("x", "y", "z", "intensity", "reflectivity")
_COUNT = struct.Struct("<I")


class SphericalCoord(NamedTuple):
    r: float
    theta: float
    phi: float


@dataclass(frozen=True)
class SensorFov:
    """Image geometry. Angles in degrees; ``phi_min`` is the azimuth at the
    left edge of column 0."""

    rows: int = 128
    cols: int = 512
    azimuth_span: float = 180.0
    azimuth_res: float = 0.35
    phi_min: float = -90.0
    min_alt: float = -22.5
    max_alt: float = 22.5

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0:
            raise ValueError("image dimensions must be positive")
        if not (self.azimuth_span > 0 and self.azimuth_res > 0):
            raise ValueError("azimuth span and resolution must be positive")
        if not self.max_alt > self.min_alt:
            raise ValueError(f"vertical span [{self.min_alt}, {self.max_alt}] is empty")

    @property
    def theta_min(self) -> float:
        """Inclination (radians) of the top edge of row 0."""
        return math.radians(90.0 - self.max_alt)

    @property
    def vertical_res(self) -> float:
        return math.radians(self.max_alt - self.min_alt) / self.rows

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RangeImage:
    """Per-pixel range, intensity and reflectivity; ``index`` holds the source
    point of each occupied pixel and -1 elsewhere."""

    fov: SensorFov
    range: np.ndarray = field(repr=False)
    intensity: np.ndarray = field(repr=False)
    reflectivity: np.ndarray = field(repr=False)
    index: np.ndarray = field(repr=False)

    @property
    def occupied(self) -> np.ndarray:
        return self.index >= 0

    @property
    def occupancy(self) -> int:
        return int(np.count_nonzero(self.index >= 0))

    @property
    def shape(self) -> tuple[int, int]:
        return self.index.shape


def to_spherical(p) -> SphericalCoord:
    """``(x, y, z, ...)`` to ``(r, theta, phi)``; a point at the pole has phi 0."""
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    r = math.hypot(x, y, z)
    if r == 0.0:
        raise DegeneratePointError("cannot take spherical coordinates of a zero-range point")
    phi = math.atan2(y, x)
    if phi == -math.pi:
        phi = math.pi
    return SphericalCoord(r, math.acos(max(-1.0, min(1.0, z / r))), phi)


def spherical_many(xyz: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized :func:`to_spherical` with no zero-range check."""
    xyz = np.asarray(xyz, dtype=np.float64)
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    r = np.hypot(np.hypot(x, y), z)
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = np.arccos(np.clip(z / r, -1.0, 1.0))
    phi = np.arctan2(y, x)
    phi = np.where(phi == -np.pi, np.pi, phi)
    return r, theta, phi


def from_spherical(r, theta, phi) -> np.ndarray:
    st = np.sin(theta)
    return np.stack([r * st * np.cos(phi), r * st * np.sin(phi), r * np.cos(theta)], axis=-1)


def pixel_of(theta, phi, fov: SensorFov = SensorFov()) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row, column and in-view mask for inclinations and azimuths (radians).

    Columns outside the azimuth span are flagged out of view; rows are
    clamped, so points above or below the vertical span land on the edge rows.
    """
    phi_min = math.radians(fov.phi_min)
    res = math.radians(fov.azimuth_res)
    rel = np.asarray(phi, dtype=np.float64) - phi_min
    in_view = (rel >= 0.0) & (rel < math.radians(fov.azimuth_span))
    col = np.clip(np.floor(rel / res), 0, fov.cols - 1).astype(np.int64)
    row = np.floor((np.asarray(theta, dtype=np.float64) - fov.theta_min) / fov.vertical_res)
    # zero-range points have no inclination; they are dropped later
    row = np.clip(np.nan_to_num(row), 0, fov.rows - 1).astype(np.int64)
    return row, col, in_view


def project(cloud: np.ndarray, fov: SensorFov = SensorFov()) -> RangeImage:
    """Project an (N, 3..5) array of ``x, y, z[, intensity, reflectivity]``.

    Zero-range and out-of-view points are skipped. When several points share
    a pixel the nearest one is kept, ties going to the lower index.
    """
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.size == 0:
        cloud = cloud.reshape(0, 5)
    if cloud.ndim != 2 or cloud.shape[1] < 3:
        raise ValueError(f"cloud must be (N, 3..5), got shape {cloud.shape}")
    n = cloud.shape[0]
    shape = (fov.rows, fov.cols)
    rng_img = np.zeros(shape)
    inten = np.zeros(shape)
    refl = np.zeros(shape)
    index = np.full(shape, -1, dtype=np.int64)
    if n:
        r, theta, phi = spherical_many(cloud[:, :3])
        row, col, in_view = pixel_of(theta, phi, fov)
        keep = np.flatnonzero(in_view & (r > 0))
        if keep.size:
            key = row[keep] * fov.cols + col[keep]
            order = np.lexsort((keep, r[keep], key))
            key, src = key[order], keep[order]
            first = np.ones(key.size, dtype=bool)
            first[1:] = key[1:] != key[:-1]
            key, src = key[first], src[first]
            flat = np.unravel_index(key, shape)
            rng_img[flat] = r[src]
            index[flat] = src
            if cloud.shape[1] >= 4:
                inten[flat] = cloud[src, 3]
            if cloud.shape[1] >= 5:
                refl[flat] = cloud[src, 4]
    for a in (rng_img, inten, refl, index):
        a.setflags(write=False)
    return RangeImage(fov, rng_img, inten, refl, index)


def backproject_labels(img: RangeImage, mask: np.ndarray, cloud_len: int) -> np.ndarray:
    """Per-point labels from a per-pixel binary mask; points that did not
    make it into the image are labelled 0."""
    mask = np.asarray(mask)
    if mask.shape != img.shape:
        raise ValueError(f"mask shape {mask.shape} does not match image shape {img.shape}")
    labels = np.zeros(cloud_len, dtype=np.int64)
    occ = img.occupied
    labels[img.index[occ]] = (mask[occ] != 0).astype(np.int64)
    return labels


def flatten(cloud: np.ndarray, labels: np.ndarray, provenance: str = "projected") -> SegmentedPointCloud:
    """Drop height: sensor-frame ``(x, y)`` become ``(a, b)`` with the labels as ``c``."""
    cloud = np.asarray(cloud, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.shape != (cloud.shape[0],):
        raise ValueError("need exactly one label per point")
    return SegmentedPointCloud(np.column_stack([cloud[:, 0], cloud[:, 1], labels]), provenance)


# --- cloud files ----------------------------------------------------------


def read_cloud_csv(path: str | Path) -> np.ndarray:
    """Read an ``x,y,z,intensity,reflectivity`` CSV into an (N, 5) array."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CLOUD_COLUMNS:
            raise ValueError(f"{path}: expected header {','.join(CLOUD_COLUMNS)}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(rec)}")
            try:
                rows.append([float(v) for v in rec])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return np.array(rows, dtype=np.float64).reshape(-1, 5)


def write_cloud_csv(path: str | Path, cloud: np.ndarray) -> None:
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 5)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CLOUD_COLUMNS)
        w.writerows([[repr(float(v)) for v in row] for row in cloud])


def read_cloud_bin(path: str | Path) -> np.ndarray:
    """Little-endian ``u32`` count followed by ``count`` records of 5 ``f32``."""
    raw = Path(path).read_bytes()
    if len(raw) < _COUNT.size:
        raise ValueError(f"{path}: truncated point count")
    (count,) = _COUNT.unpack_from(raw)
    expected = _COUNT.size + 20 * count
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for {count} points, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=_COUNT.size).reshape(count, 5).astype(np.float64)


def write_cloud_bin(path: str | Path, cloud: np.ndarray) -> None:
    cloud = np.asarray(cloud, dtype="<f4").reshape(-1, 5)
    Path(path).write_bytes(_COUNT.pack(cloud.shape[0]) + cloud.tobytes())


def read_cloud(path: str | Path) -> np.ndarray:
    """Dispatch on extension: ``.csv`` or binary otherwise."""
    return read_cloud_csv(path) if str(path).lower().endswith(".csv") else read_cloud_bin(path)


# --- PGM output -------------------------------------------------------------

RANGE_SCALE = 0.01  # metres per count in the 16-bit range image


def _channel_u16(img: RangeImage, name: str) -> np.ndarray:
    if name == "range":
        v = np.round(img.range / RANGE_SCALE)
    else:
        v = np.round(np.clip(getattr(img, name), 0.0, 1.0) * 65535.0)
    return np.clip(v, 0, 65535).astype(">u2")


def write_pgm(path: str | Path, data: np.ndarray, comments: list[str]) -> None:
    """Binary 16-bit PGM (P5, maxval 65535) with ``#`` comment lines."""
    h, w = data.shape
    head = "P5\n" + "".join(f"# {c}\n" for c in comments) + f"{w} {h}\n65535\n"
    Path(path).write_bytes(head.encode("ascii") + np.ascontiguousarray(data, dtype=">u2").tobytes())


def read_pgm(path: str | Path) -> tuple[np.ndarray, list[str]]:
    """Read a file written by :func:`write_pgm`; returns counts and comments."""
    raw = Path(path).read_bytes()
    pos = 0
    tokens: list[str] = []
    comments: list[str] = []
    while len(tokens) < 4:
        end = raw.index(b"\n", pos)
        line = raw[pos:end].decode("ascii")
        pos = end + 1
        if line.startswith("#"):
            comments.append(line[1:].strip())
        else:
            tokens.extend(line.split())
    if tokens[0] != "P5" or tokens[3] != "65535":
        raise ValueError(f"{path}: not a 16-bit binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    data = np.frombuffer(raw, dtype=">u2", offset=pos, count=w * h).reshape(h, w)
    return data.astype(np.int64), comments


def write_pgm_triplet(img: RangeImage, prefix: str | Path, meta: dict | None = None) -> list[Path]:
    """Write ``<prefix>_range.pgm``, ``_intensity.pgm`` and ``_reflectivity.pgm``.

    Each file carries the field of view and ``meta`` as JSON comments so an
    image can be traced back to the settings that produced it.
    """
    prefix = Path(prefix)
    paths = []
    for name, unit in (("range", f"scale={RANGE_SCALE} m/count"), ("intensity", "scale=1/65535"),
                       ("reflectivity", "scale=1/65535")):
        path = prefix.with_name(f"{prefix.name}_{name}.pgm")
        comments = [f"roadmcl {name} {unit}", "fov " + json.dumps(img.fov.to_dict(), sort_keys=True)]
        if meta:
            comments.append("meta " + json.dumps(meta, sort_keys=True))
        write_pgm(path, _channel_u16(img, name), comments)
        paths.append(path)
    return paths
