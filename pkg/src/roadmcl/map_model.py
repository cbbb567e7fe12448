"""OSM XML ingestion and the local metric frame.

Coordinates are converted with a local equirectangular tangent-plane
projection about an origin, which is accurate to well under a centimetre
over the few-kilometre extents this package works with.
"""

from __future__ import annotations

import logging
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from roadmcl.errors import EmptyMapError, MapStructureError, OsmParseError, OutOfExtentError

log = logging.getLogger(__name__)

EARTH_RADIUS = 6_378_137.0
MAX_LAT_OFFSET_DEG = 1.0

DEFAULT_HIGHWAY_FILTER = frozenset({
    "motorway", "trunk", "primary", "secondary", "tertiary",
    "unclassified", "residential", "service", "track",
})


class GeoPoint(NamedTuple):
    lat: float
    lon: float


class MapPoint(NamedTuple):
    e: float
    n: float


def _wrap_lon(dlon: float) -> float:
    return (dlon + 180.0) % 360.0 - 180.0


def geo_to_map(p: GeoPoint, origin: GeoPoint) -> MapPoint:
    """Project ``p`` into the east/north frame tangent at ``origin`` (metres)."""
    dlat = p.lat - origin.lat
    if not abs(dlat) < MAX_LAT_OFFSET_DEG:
        raise OutOfExtentError(
            f"latitude offset {dlat:.6f} deg exceeds the {MAX_LAT_OFFSET_DEG} deg local-frame extent"
        )
    dlon = _wrap_lon(p.lon - origin.lon)
    e = EARTH_RADIUS * math.cos(math.radians(origin.lat)) * math.radians(dlon)
    n = EARTH_RADIUS * math.radians(dlat)
    return MapPoint(e, n)


def map_to_geo(p: MapPoint, origin: GeoPoint) -> GeoPoint:
    lat = origin.lat + math.degrees(p.n / EARTH_RADIUS)
    lon = origin.lon + math.degrees(p.e / (EARTH_RADIUS * math.cos(math.radians(origin.lat))))
    return GeoPoint(lat, lon)


@dataclass(frozen=True)
class Way:
    id: int
    node_ids: tuple[int, ...]
    highway: str


@dataclass(frozen=True)
class RoadGraph:
    """Immutable road network in the local metric frame.

    ``segments`` is an (M, 4) float64 array of ``(e0, n0, e1, n1)`` rows, one
    per consecutive node pair of every way, in way order.
    """

    nodes: dict[int, MapPoint]
    ways: tuple[Way, ...]
    origin: GeoPoint
    segments: np.ndarray = field(repr=False)

    @classmethod
    def from_ways(cls, nodes: dict[int, MapPoint], ways: Iterable[Way], origin: GeoPoint) -> "RoadGraph":
        ways = tuple(ways)
        rows = []
        for way in ways:
            if len(way.node_ids) < 2:
                raise MapStructureError(way.id, "fewer than two distinct nodes")
            for a, b in zip(way.node_ids[:-1], way.node_ids[1:]):
                pa, pb = nodes[a], nodes[b]
                rows.append((pa.e, pa.n, pb.e, pb.n))
        segs = np.array(rows, dtype=np.float64).reshape(-1, 4)
        segs.setflags(write=False)
        return cls(nodes=dict(nodes), ways=ways, origin=origin, segments=segs)

    @property
    def way_by_id(self) -> dict[int, Way]:
        return {w.id: w for w in self.ways}

    def bounds(self) -> tuple[float, float, float, float]:
        """(min_e, min_n, max_e, max_n) of all segment endpoints."""
        s = self.segments
        es = np.concatenate([s[:, 0], s[:, 2]])
        ns = np.concatenate([s[:, 1], s[:, 3]])
        return float(es.min()), float(ns.min()), float(es.max()), float(ns.max())

    def total_length(self) -> float:
        s = self.segments
        return float(np.hypot(s[:, 2] - s[:, 0], s[:, 3] - s[:, 1]).sum())

    def adjacency(self) -> dict[int, list[int]]:
        """Undirected node adjacency induced by consecutive way nodes."""
        adj: dict[int, list[int]] = {nid: [] for nid in self.nodes}
        for way in self.ways:
            for a, b in zip(way.node_ids[:-1], way.node_ids[1:]):
                if b not in adj[a]:
                    adj[a].append(b)
                if a not in adj[b]:
                    adj[b].append(a)
        return adj


def parse_osm(xml_bytes: bytes | str, highway_filter: Iterable[str] | None = None) -> RoadGraph:
    """Build a :class:`RoadGraph` from OSM XML, keeping ways whose ``highway``
    tag is in ``highway_filter``.

    Raises OsmParseError for malformed XML, MapStructureError for a way that
    references an undefined node, and EmptyMapError if no way is retained.
    """
    wanted = DEFAULT_HIGHWAY_FILTER if highway_filter is None else frozenset(highway_filter)
    try:
        root = ET.fromstring(xml_bytes)
    except ET.ParseError as exc:
        line, col = exc.position
        raise OsmParseError(f"malformed OSM XML: {exc.msg}", line, col) from exc

    geo_nodes: dict[int, GeoPoint] = {}
    raw_ways: list[tuple[int, list[int], str]] = []
    for el in root:
        if el.tag == "node":
            try:
                nid = int(el.attrib["id"])
                lat, lon = float(el.attrib["lat"]), float(el.attrib["lon"])
            except (KeyError, ValueError) as exc:
                raise OsmParseError(f"node element missing or invalid attribute: {exc}") from exc
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                raise OsmParseError(f"node {nid} has out-of-range coordinates ({lat}, {lon})")
            geo_nodes[nid] = GeoPoint(lat, lon)
        elif el.tag == "way":
            try:
                wid = int(el.attrib["id"])
            except (KeyError, ValueError) as exc:
                raise OsmParseError(f"way element missing or invalid id: {exc}") from exc
            highway = None
            refs = []
            for child in el:
                if child.tag == "nd":
                    refs.append(int(child.attrib["ref"]))
                elif child.tag == "tag" and child.attrib.get("k") == "highway":
                    highway = child.attrib.get("v")
            if highway is not None and highway in wanted:
                raw_ways.append((wid, refs, highway))

    if not raw_ways:
        raise EmptyMapError(f"no ways match highway filter {sorted(wanted)}")

    for wid, refs, _ in raw_ways:
        missing = [r for r in refs if r not in geo_nodes]
        if missing:
            raise MapStructureError(wid, f"references missing node(s) {missing[:5]}")

    used = sorted({r for _, refs, _ in raw_ways for r in refs})
    origin = GeoPoint(
        float(np.mean([geo_nodes[r].lat for r in used])),
        float(np.mean([geo_nodes[r].lon for r in used])),
    )
    nodes = {r: geo_to_map(geo_nodes[r], origin) for r in used}

    ways = []
    for wid, refs, highway in raw_ways:
        kept = [refs[0]] if refs else []
        for r in refs[1:]:
            if nodes[r] != nodes[kept[-1]]:
                kept.append(r)
        if len(kept) < len(refs):
            log.debug("way %d: dropped %d coincident node(s)", wid, len(refs) - len(kept))
        if len(kept) < 2:
            raise MapStructureError(wid, "fewer than two distinct nodes")
        ways.append(Way(wid, tuple(kept), highway))

    used_after = {r for w in ways for r in w.node_ids}
    nodes = {r: p for r, p in nodes.items() if r in used_after}
    return RoadGraph.from_ways(nodes, ways, origin)


def load_osm(path: str | Path, highway_filter: Iterable[str] | None = None) -> RoadGraph:
    return parse_osm(Path(path).read_bytes(), highway_filter)


def write_osm(
    path: str | Path,
    geo_nodes: dict[int, GeoPoint],
    ways: Iterable[tuple[int, list[int], str]],
) -> None:
    """Write a minimal OSM v0.6 document (nodes, then ways)."""
    lines = ['<?xml version="1.0" encoding="UTF-8"?>', '<osm version="0.6" generator="roadmcl">']
    for nid, p in geo_nodes.items():
        lines.append(f'  <node id="{nid}" lat="{p.lat:.9f}" lon="{p.lon:.9f}"/>')
    for wid, refs, highway in ways:
        lines.append(f'  <way id="{wid}">')
        lines.extend(f'    <nd ref="{r}"/>' for r in refs)
        lines.append(f'    <tag k="highway" v="{highway}"/>')
        lines.append("  </way>")
    lines.append("</osm>")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
