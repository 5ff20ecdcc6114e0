"""Slippy-map / Web-Mercator tile arithmetic.

Standard OSM tile addressing: zoom z has 2^z x 2^z tiles, x grows east
from lon -180, y grows south from the projection's north edge. All math
is double precision; floor semantics put a point on a shared east/south
boundary into the next tile, and indices are clamped into [0, 2^z - 1]
so the closed input domain maps totally onto valid tiles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

MAX_MERCATOR_LAT = 85.05112878
MAX_ZOOM = 22


class GeoError(ValueError):
    """Coordinate or zoom outside the supported domain."""


def _check_zoom(z: int) -> None:
    if not isinstance(z, int) or not 0 <= z <= MAX_ZOOM:
        raise GeoError(f"zoom must be an integer in [0, {MAX_ZOOM}], got {z!r}")


@dataclass(frozen=True)
class GeoPoint:
    """A lon/lat point within Web-Mercator validity bounds.

    Longitude is normalized into the half-open range [-180, 180);
    latitude outside +/-85.05112878 is rejected.
    """

    lat_deg: float
    lon_deg: float

    def __post_init__(self) -> None:
        lat = float(self.lat_deg)
        lon = float(self.lon_deg)
        if not math.isfinite(lat) or not math.isfinite(lon):
            raise GeoError(f"non-finite coordinate ({self.lat_deg!r}, {self.lon_deg!r})")
        if not -MAX_MERCATOR_LAT <= lat <= MAX_MERCATOR_LAT:
            raise GeoError(
                f"latitude {lat} outside Web-Mercator bounds +/-{MAX_MERCATOR_LAT}"
            )
        lon = ((lon + 180.0) % 360.0) - 180.0
        object.__setattr__(self, "lat_deg", lat)
        object.__setattr__(self, "lon_deg", lon)


@dataclass(frozen=True, order=True)
class TileCoord:
    """Integer (zoom, x, y) address of one slippy-map tile."""

    z: int
    x: int
    y: int

    def __post_init__(self) -> None:
        _check_zoom(self.z)
        n = 1 << self.z
        if not (isinstance(self.x, int) and 0 <= self.x < n):
            raise GeoError(f"x={self.x!r} outside [0, {n}) at z={self.z}")
        if not (isinstance(self.y, int) and 0 <= self.y < n):
            raise GeoError(f"y={self.y!r} outside [0, {n}) at z={self.z}")


@dataclass(frozen=True)
class GeoBBox:
    """Axis-aligned lon/lat box; no antimeridian crossing."""

    north_deg: float
    south_deg: float
    west_deg: float
    east_deg: float

    def __post_init__(self) -> None:
        if not self.north_deg > self.south_deg:
            raise GeoError(f"north {self.north_deg} must exceed south {self.south_deg}")
        if not self.west_deg <= self.east_deg:
            raise GeoError(f"west {self.west_deg} must not exceed east {self.east_deg}")


def _edge_lon(i: int | float, n: int) -> float:
    return i / n * 360.0 - 180.0


def _edge_lat(j: int | float, n: int) -> float:
    return math.degrees(math.atan(math.sinh(math.pi * (1.0 - 2.0 * j / n))))


def _tile_x(lon_deg: float, n: int) -> int:
    # Clamped, not wrapped: lon 180 maps to the last column, keeping the
    # function total over closed inputs.
    x = math.floor((lon_deg + 180.0) / 360.0 * n)
    return min(max(x, 0), n - 1)


def _tile_y(lat_deg: float, n: int) -> int:
    # The published +/-85.05112878 bound sits a hair outside atan(sinh(pi)),
    # so the edge latitudes need clamping too.
    lat_rad = math.radians(lat_deg)
    y = math.floor(
        (1.0 - math.log(math.tan(lat_rad) + 1.0 / math.cos(lat_rad)) / math.pi)
        / 2.0
        * n
    )
    return min(max(y, 0), n - 1)


def lonlat_to_tile(p: GeoPoint, z: int) -> TileCoord:
    """Tile containing p at zoom z (canonical OSM slippy formula)."""
    _check_zoom(z)
    n = 1 << z
    return TileCoord(z, _tile_x(p.lon_deg, n), _tile_y(p.lat_deg, n))


def tile_to_bbox(t: TileCoord) -> GeoBBox:
    """Lon/lat bounds of a tile.

    Edges are pure functions of the integer edge index, so adjacent tiles
    get bit-identical values for their shared boundary.
    """
    n = 1 << t.z
    return GeoBBox(
        north_deg=_edge_lat(t.y, n),
        south_deg=_edge_lat(t.y + 1, n),
        west_deg=_edge_lon(t.x, n),
        east_deg=_edge_lon(t.x + 1, n),
    )


def tile_center(t: TileCoord) -> GeoPoint:
    """Tile midpoint in projected space, reported in degrees.

    Round-trips: lonlat_to_tile(tile_center(t), t.z) == t.
    """
    n = 1 << t.z
    return GeoPoint(lat_deg=_edge_lat(t.y + 0.5, n), lon_deg=_edge_lon(t.x + 0.5, n))
