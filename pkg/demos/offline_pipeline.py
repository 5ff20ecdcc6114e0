"""
The whole pipeline, offline, in one process
===========================================

Starts the deterministic mock tile server, samples a region, fetches both
tile sources into a cache, builds validated pairs, assigns the 80/20
split, writes the manifest, and prints dataset statistics.

Run with: python demos/offline_pipeline.py
"""

import tempfile
from pathlib import Path

from tilepairs import (
    MockWorld,
    Region,
    SampleSpec,
    TileCache,
    assign_split,
    build_pairs,
    fetch_batch,
    read_manifest,
    sample_tiles,
    serve,
    stats,
    verify_manifest,
    write_manifest,
)
from tilepairs.dataset import export_images

workdir = Path(tempfile.mkdtemp(prefix="tilepairs-demo-"))
server = serve(MockWorld(seed=20240917))
print(f"mock server on port {server.port}, working dir {workdir}")

# 1. Sample 40 tiles from a small box at zoom 15.
ring = ((-3.5, 55.6), (-3.4, 55.6), (-3.4, 55.65), (-3.5, 55.65))
region = Region(name="demo-box", rings=(ring,))
coords = sample_tiles(SampleSpec(region=region, z=15, n=40, seed=7))
print(f"sampled {len(coords)} tiles")

# 2. Fetch map and satellite tiles (rate-limited, cached, retried).
cache = TileCache(workdir / "cache")
map_source = server.tile_source("map")
sat_source = server.tile_source("sat")
for source in (map_source, sat_source):
    report = fetch_batch(source, coords, cache, parallelism=4)
    print(f"  {source.name}: downloaded={report.downloaded} failed={len(report.failed)}")

# 3. Build pairs, split, export, manifest.
maps, sats = cache.view(map_source.name), cache.view(sat_source.name)
records, rejects = build_pairs(coords, maps, sats)
records = assign_split(records, test_fraction=0.20, seed=7)
out = workdir / "dataset"
export_images(records, maps, sats, out)
manifest = out / "manifest.jsonl"
write_manifest(records, manifest)
print(f"built {len(records)} pairs ({len(rejects)} rejected) -> {manifest}")

# 4. Verify and summarize.
violations = verify_manifest(manifest)
print(f"verify: {'ok' if not violations else violations}")
st = stats(read_manifest(manifest), maps, rejects)
print(f"split: {st.train_pairs} train / {st.test_pairs} test")
for name, fraction in st.map_palette_histogram.items():
    print(f"  {name:<11} {fraction:.3f}")

server.stop()
