"""
Fault injection against the mock server
=======================================

Scripts transient and permanent failures per coordinate, then watches the
fetcher retry with backoff, give up where it should, and stay inside its
rate budget.

Run with: python demos/fault_injection.py
"""

import tempfile

import requests

from tilepairs import MockWorld, TileCache, TileCoord, fetch_batch, fetch_tile, serve
from tilepairs.fetch import PermanentFetchError

server = serve(MockWorld(seed=1))
base = f"http://{server.host}:{server.port}"
cache = TileCache(tempfile.mkdtemp(prefix="tilepairs-faults-"))
source = server.tile_source("map", rps=50)

# A coordinate that fails twice with 503 before succeeding.
flaky = TileCoord(12, 100, 200)
requests.post(f"{base}/faults", json={"faults": [
    {"source": "map", "z": 12, "x": 100, "y": 200, "status": 503, "times": 2},
]})
data, origin = fetch_tile(source, flaky, cache)
print(f"flaky tile: got {len(data)} bytes via {origin} "
      f"after {server.request_count('map', flaky)} attempts")

# A coordinate that 404s: permanent, no retries wasted.
gone = TileCoord(12, 101, 200)
requests.post(f"{base}/faults", json={"faults": [
    {"source": "map", "z": 12, "x": 101, "y": 200, "status": 404, "times": 1},
]})
try:
    fetch_tile(source, gone, cache)
except PermanentFetchError as exc:
    print(f"gone tile: permanent failure after "
          f"{server.request_count('map', gone)} attempt ({exc})")

# Batches report partial failure instead of aborting.
tiles = [TileCoord(12, 100 + i, 201) for i in range(10)]
requests.post(f"{base}/faults", json={"faults": [
    {"source": "map", "z": 12, "x": 103, "y": 201, "status": 404, "times": 1},
]})
report = fetch_batch(source, tiles, cache, parallelism=4)
print(f"batch: downloaded={report.downloaded} failed={report.failed}")

server.stop()
