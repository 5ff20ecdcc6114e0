"""Region definitions: GeoJSON parsing, membership tests, tile sampling.

A region is a named set of polygon rings in lon/lat. Membership uses the
even-odd (ray casting) rule in planar lon/lat space, with a half-open edge
convention so tilings of adjacent regions never double-count a point.
Tile enumeration keeps exactly the tiles whose center lies in the region;
sampling is a seeded without-replacement draw from that candidate set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .geo import (
    GeoBBox,
    GeoPoint,
    MAX_MERCATOR_LAT,
    TileCoord,
    _check_zoom,
    _tile_x,
    _tile_y,
    tile_center,
)
from .rng import Xoshiro256StarStar

DEFAULT_CANDIDATE_CAP = 10_000_000

Ring = tuple[tuple[float, float], ...]  # (lon, lat) vertices, implicitly closed


class RegionError(ValueError):
    """Invalid region definition or query."""


class RegionParseError(RegionError):
    """Malformed or unsupported GeoJSON input."""


class CapacityError(RegionError):
    """Requested more tiles than the region can provide, or candidate
    enumeration would exceed the configured cap."""


@dataclass(frozen=True)
class Region:
    """Named polygon set with a derived tight bounding box."""

    name: str
    rings: tuple[Ring, ...]
    bbox: GeoBBox = field(init=False)

    def __post_init__(self) -> None:
        if not self.name:
            raise RegionError("region name must be non-empty")
        if not self.rings:
            raise RegionError("region must have at least one ring")
        for ring in self.rings:
            if len(set(ring)) < 3:
                raise RegionError(
                    f"ring with {len(set(ring))} distinct vertices; need at least 3"
                )
        lons = [v[0] for ring in self.rings for v in ring]
        lats = [v[1] for ring in self.rings for v in ring]
        object.__setattr__(
            self,
            "bbox",
            GeoBBox(
                north_deg=max(lats),
                south_deg=min(lats),
                west_deg=min(lons),
                east_deg=max(lons),
            ),
        )


@dataclass(frozen=True)
class SampleSpec:
    """Inputs that fully determine one tile sample."""

    region: Region
    z: int
    n: int
    seed: int

    def __post_init__(self) -> None:
        if self.n < 0:
            raise RegionError(f"sample size must be >= 0, got {self.n}")


def _normalize_ring(coords: list) -> Ring:
    verts = [(float(lon), float(lat)) for lon, lat in coords]
    if len(verts) > 1 and verts[0] == verts[-1]:
        verts = verts[:-1]  # GeoJSON rings repeat the first vertex; drop it
    if len(set(verts)) < 3:
        raise RegionParseError(
            f"ring has {len(set(verts))} distinct vertices; need at least 3"
        )
    return tuple(verts)


def _rings_from_geometry(geom: dict) -> list[Ring]:
    gtype = geom.get("type")
    if gtype == "Polygon":
        polygons = [geom["coordinates"]]
    elif gtype == "MultiPolygon":
        polygons = geom["coordinates"]
    else:
        raise RegionParseError(
            f"unsupported geometry type {gtype!r}; need Polygon or MultiPolygon"
        )
    return [_normalize_ring(ring) for polygon in polygons for ring in polygon]


def parse_geojson(data: bytes | str, name: str | None = None) -> Region:
    """Parse a GeoJSON Feature or FeatureCollection into a Region.

    Coordinates are read as (lon, lat). Outer rings and holes are kept as
    one flat ring list; the even-odd membership rule below makes holes
    behave correctly without tracking orientation. The region name comes
    from the ``name`` argument or the first feature's "name" property.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise RegionParseError(f"malformed GeoJSON at byte {exc.pos}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise RegionParseError(f"expected a GeoJSON object, got {type(doc).__name__}")

    dtype = doc.get("type")
    if dtype == "Feature":
        features = [doc]
    elif dtype == "FeatureCollection":
        features = doc.get("features", [])
    else:
        raise RegionParseError(
            f"expected Feature or FeatureCollection, got {dtype!r}"
        )
    if not features:
        raise RegionParseError("no features present")

    rings: list[Ring] = []
    for feat in features:
        geom = feat.get("geometry")
        if geom is None:
            raise RegionParseError("feature without geometry")
        rings.extend(_rings_from_geometry(geom))
        if name is None:
            props = feat.get("properties") or {}
            if isinstance(props.get("name"), str):
                name = props["name"]
    if name is None:
        raise RegionParseError("no region name: pass name= or set a 'name' property")
    return Region(name=name, rings=tuple(rings))


def contains(region: Region, p: GeoPoint) -> bool:
    """Even-odd ray-casting membership in planar lon/lat space.

    A point exactly on a west/south edge is inside, on an east/north edge
    outside, so adjacent regions sharing a boundary never both claim it.
    """
    lon, lat = p.lon_deg, p.lat_deg
    inside = False
    for ring in region.rings:
        j = len(ring) - 1
        for i in range(len(ring)):
            x1, y1 = ring[j]
            x2, y2 = ring[i]
            if (y1 > lat) != (y2 > lat):
                x_cross = x1 + (lat - y1) * (x2 - x1) / (y2 - y1)
                if lon < x_cross:
                    inside = not inside
            j = i
    return inside


def enumerate_tiles(
    region: Region, z: int, max_candidates: int = DEFAULT_CANDIDATE_CAP
) -> list[TileCoord]:
    """All tiles at zoom z whose center lies in the region.

    Emitted in row-major (y, then x) ascending order; deterministic.
    Raises CapacityError if the bbox tile span exceeds max_candidates.
    """
    _check_zoom(z)
    bbox = region.bbox
    north = min(bbox.north_deg, MAX_MERCATOR_LAT)
    south = max(bbox.south_deg, -MAX_MERCATOR_LAT)
    if north <= south:
        return []
    # Raw clamped index math, not GeoPoint, so an east edge at lon 180
    # stays the last column instead of wrapping to -180.
    n = 1 << z
    x_min, x_max = _tile_x(bbox.west_deg, n), _tile_x(bbox.east_deg, n)
    y_min, y_max = _tile_y(north, n), _tile_y(south, n)
    span = (x_max - x_min + 1) * (y_max - y_min + 1)
    if span > max_candidates:
        raise CapacityError(
            f"bbox spans {span} candidate tiles at z={z}, cap is {max_candidates}"
        )
    out: list[TileCoord] = []
    for y in range(y_min, y_max + 1):
        for x in range(x_min, x_max + 1):
            t = TileCoord(z, x, y)
            if contains(region, tile_center(t)):
                out.append(t)
    return out


def sample_tiles(spec: SampleSpec) -> list[TileCoord]:
    """Seeded without-replacement sample of spec.n tiles from the region.

    Identical (region, z, n, seed) yields the identical list, including
    order, on every platform. Raises CapacityError when n exceeds the
    candidate count; never silently truncates.
    """
    candidates = enumerate_tiles(spec.region, spec.z)
    if spec.n > len(candidates):
        raise CapacityError(
            f"requested {spec.n} tiles but region {spec.region.name!r} has "
            f"{len(candidates)} candidates at z={spec.z}"
        )
    rng = Xoshiro256StarStar(spec.seed)
    return rng.sample_prefix(candidates, spec.n)
