"""
A short tour of the slippy-tile arithmetic
==========================================

Run with: python demos/tile_math_tour.py
"""

from tilepairs import GeoPoint, TileCoord, lonlat_to_tile, tile_center, tile_to_bbox

# A point in Edinburgh and the tile that contains it at zoom 17.
edinburgh = GeoPoint(55.9533, -3.1883)
tile = lonlat_to_tile(edinburgh, 17)
print(f"Edinburgh {edinburgh.lat_deg}, {edinburgh.lon_deg} -> {tile}")

# The tile's bounding box brackets the point.
bbox = tile_to_bbox(tile)
print(f"  bbox: lat [{bbox.south_deg:.6f}, {bbox.north_deg:.6f}]"
      f" lon [{bbox.west_deg:.6f}, {bbox.east_deg:.6f}]")

# Centers round-trip: the tile of a tile's center is the tile itself.
center = tile_center(tile)
assert lonlat_to_tile(center, 17) == tile
print(f"  center: {center.lat_deg:.6f}, {center.lon_deg:.6f} (round-trips)")

# Adjacent tiles share bit-identical edges; no cracks, no overlap.
east = tile_to_bbox(TileCoord(tile.z, tile.x + 1, tile.y))
print(f"  east edge == neighbour west edge: {bbox.east_deg == east.west_deg}")

# Zooming out halves the index at each step.
for z in (17, 16, 15, 14):
    print(f"  z={z}: {lonlat_to_tile(edinburgh, z)}")
