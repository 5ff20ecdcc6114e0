"""tilepairs: deterministic paired map/satellite tile dataset construction.

Library surface re-exported here; the ``tilepairs`` console script wraps
the same operations for pipeline runs.
"""

from .geo import GeoBBox, GeoPoint, TileCoord, lonlat_to_tile, tile_center, tile_to_bbox
from .region import Region, SampleSpec, contains, enumerate_tiles, parse_geojson, sample_tiles
from .fetch import FetchReport, TileCache, TileSource, fetch_batch, fetch_tile, tile_url
from .dataset import (
    FIXED_PROMPT,
    DatasetStats,
    PairRecord,
    assign_split,
    build_pairs,
    read_manifest,
    stats,
    validate_tile,
    verify_manifest,
    write_manifest,
)
from .mocktiles import MockTileServer, MockWorld, StyleParams, serve, synth_tile

__version__ = "0.1.0"

__all__ = [
    "GeoBBox",
    "GeoPoint",
    "TileCoord",
    "lonlat_to_tile",
    "tile_center",
    "tile_to_bbox",
    "Region",
    "SampleSpec",
    "contains",
    "enumerate_tiles",
    "parse_geojson",
    "sample_tiles",
    "FetchReport",
    "TileCache",
    "TileSource",
    "fetch_batch",
    "fetch_tile",
    "tile_url",
    "FIXED_PROMPT",
    "DatasetStats",
    "PairRecord",
    "assign_split",
    "build_pairs",
    "read_manifest",
    "stats",
    "validate_tile",
    "verify_manifest",
    "write_manifest",
    "MockTileServer",
    "MockWorld",
    "StyleParams",
    "serve",
    "synth_tile",
    "__version__",
]
