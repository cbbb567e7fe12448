"""Monte Carlo localization of a vehicle on an OpenStreetMap road network
from road-segmented LIDAR scans and wheel odometry."""

from roadmcl.errors import (
    ConfigError,
    DegeneratePointError,
    EmptyMapError,
    MapStructureError,
    OsmParseError,
    OutOfExtentError,
    ResourceError,
    RoadMCLError,
)
from roadmcl.map_model import GeoPoint, MapPoint, RoadGraph, Way, geo_to_map, map_to_geo, parse_osm

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegeneratePointError",
    "EmptyMapError",
    "GeoPoint",
    "MapPoint",
    "MapStructureError",
    "OsmParseError",
    "OutOfExtentError",
    "ResourceError",
    "RoadGraph",
    "RoadMCLError",
    "Way",
    "geo_to_map",
    "map_to_geo",
    "parse_osm",
]
