"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -s` to see the lines as they
print; without -s they appear in captured output on failure.
"""

from __future__ import annotations

import json
import math
import random
import subprocess
import sys
import time
from contextlib import contextmanager

import pytest
import requests

from tilepairs import cli
from tilepairs.dataset import read_manifest, stats as dataset_stats, build_pairs
from tilepairs.fetch import TileCache, fetch_batch, fetch_tile, reset_rate_limiters
from tilepairs.geo import GeoPoint, MAX_MERCATOR_LAT, TileCoord, lonlat_to_tile, tile_center
from tilepairs.mocktiles import MockWorld, StyleParams, serve
from tilepairs.region import Region, SampleSpec, contains, enumerate_tiles, sample_tiles


@contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"FAIL: {name}")
        raise
    print(f"PASS: {name}")


# --- criterion 1: tile-math oracle equivalence -----------------------------


def brute_force_tile(lat: float, lon: float, z: int) -> tuple[int, int]:
    """Independent straight-from-formula slippy evaluation."""
    n = 2**z
    x = int(math.floor((lon + 180.0) / 360.0 * n))
    phi = math.radians(lat)
    y = int(
        math.floor(
            (1.0 - math.log(math.tan(phi) + 1.0 / math.cos(phi)) / math.pi) / 2.0 * n
        )
    )
    return min(max(x, 0), n - 1), min(max(y, 0), n - 1)


def test_tile_math_oracle_equivalence():
    with criterion("tile-math oracle equivalence (1000 points + 1000 round trips, <1s)"):
        start = time.monotonic()
        rnd = random.Random(0xACCE97)
        for _ in range(1000):
            lat = rnd.uniform(-MAX_MERCATOR_LAT, MAX_MERCATOR_LAT)
            lon = rnd.uniform(-180.0, 180.0)
            z = rnd.randrange(0, 18)
            t = lonlat_to_tile(GeoPoint(lat, lon), z)
            assert (t.x, t.y) == brute_force_tile(lat, lon, z)
        for _ in range(1000):
            z = rnd.randrange(0, 18)
            n = 2**z
            t = TileCoord(z, rnd.randrange(n), rnd.randrange(n))
            assert lonlat_to_tile(tile_center(t), z) == t
        assert time.monotonic() - start < 1.0


# --- criterion 2: point-in-polygon equivalence ------------------------------


def oracle_inside(rings, px: float, py: float) -> bool:
    crossings = 0
    for ring in rings:
        pts = list(ring)
        for k in range(len(pts)):
            ax, ay = pts[k]
            bx, by = pts[(k + 1) % len(pts)]
            if ay == by:
                continue
            if min(ay, by) <= py < max(ay, by):
                t = (py - ay) / (by - ay)
                if ax + t * (bx - ax) > px:
                    crossings += 1
    return crossings % 2 == 1


def random_polygon(rnd: random.Random, kind: str) -> tuple[tuple, ...]:
    cx, cy = rnd.uniform(-5, 5), rnd.uniform(-5, 5)

    def radial_ring(scale: float, jitter: float, k: int):
        angles = sorted(rnd.uniform(0, 2 * math.pi) for _ in range(k))
        return tuple(
            (cx + scale * (1 + rnd.uniform(-jitter, jitter)) * math.cos(a),
             cy + scale * (1 + rnd.uniform(-jitter, jitter)) * math.sin(a))
            for a in angles
        )

    if kind == "convex":
        return (radial_ring(scale=rnd.uniform(1, 3), jitter=0.0, k=rnd.randrange(5, 10)),)
    if kind == "concave":
        return (radial_ring(scale=rnd.uniform(1, 3), jitter=0.6, k=rnd.randrange(6, 12)),)
    outer = radial_ring(scale=3.0, jitter=0.2, k=rnd.randrange(6, 10))
    hole = tuple((cx + 0.25 * (x - cx), cy + 0.25 * (y - cy)) for x, y in outer)
    return (outer, hole)


def test_point_in_polygon_equivalence():
    with criterion("point-in-polygon oracle equivalence (200 pts x 20 polygons, <1s)"):
        start = time.monotonic()
        rnd = random.Random(0x9017)
        kinds = ["convex", "concave", "holes", "convex"] * 5
        for i, kind in enumerate(kinds[:20]):
            rings = random_polygon(rnd, kind)
            region = Region(name=f"poly-{i}", rings=rings)
            agreements = 0
            for _ in range(200):
                lon = rnd.uniform(-10, 10)
                lat = rnd.uniform(-10, 10)
                got = contains(region, GeoPoint(lat, lon))
                want = oracle_inside(rings, lon, lat)
                assert got == want
                agreements += 1
            assert agreements == 200
        assert time.monotonic() - start < 1.0


# --- criterion 3: deterministic sampling ------------------------------------

GOLDEN_REGION_RING = ((-3.5, 55.0), (-3.0, 55.0), (-3.0, 55.3), (-3.5, 55.3))
GOLDEN_SPEC = {"z": 13, "n": 25, "seed": 0xC0FFEE}
# Frozen output; any platform or version drift must reproduce this exactly.
GOLDEN_SAMPLE = [
    (13, 4020, 2588), (13, 4025, 2586), (13, 4021, 2585), (13, 4018, 2590),
    (13, 4027, 2590), (13, 4016, 2583), (13, 4026, 2589), (13, 4016, 2580),
    (13, 4021, 2587), (13, 4024, 2586), (13, 4022, 2589), (13, 4027, 2588),
    (13, 4025, 2588), (13, 4019, 2584), (13, 4027, 2582), (13, 4017, 2584),
    (13, 4022, 2588), (13, 4019, 2586), (13, 4022, 2586), (13, 4026, 2586),
    (13, 4026, 2590), (13, 4023, 2585), (13, 4016, 2585), (13, 4017, 2589),
    (13, 4025, 2582),
]

_SUBPROCESS_SNIPPET = """
from tilepairs.region import Region, SampleSpec, sample_tiles
ring = ((-3.5, 55.0), (-3.0, 55.0), (-3.0, 55.3), (-3.5, 55.3))
spec = SampleSpec(region=Region(name="golden-box", rings=(ring,)), z=13, n=25, seed=0xC0FFEE)
for t in sample_tiles(spec):
    print(f"{t.z}/{t.x}/{t.y}")
"""


def test_deterministic_sampling():
    with criterion("deterministic sampling (golden list, fresh-process identity, membership)"):
        region = Region(name="golden-box", rings=(GOLDEN_REGION_RING,))
        spec = SampleSpec(region=region, **GOLDEN_SPEC)
        tiles = sample_tiles(spec)
        assert [(t.z, t.x, t.y) for t in tiles] == GOLDEN_SAMPLE
        assert len(set(tiles)) == len(tiles)
        for t in tiles:
            assert contains(region, tile_center(t))

        in_process = "".join(f"{t.z}/{t.x}/{t.y}\n" for t in tiles).encode()
        fresh = subprocess.run(
            [sys.executable, "-c", _SUBPROCESS_SNIPPET],
            capture_output=True,
            check=True,
        )
        assert fresh.stdout == in_process


# --- criterion 4: end-to-end mock pipeline ----------------------------------

E2E_REGION = {
    "type": "Feature",
    "properties": {"name": "e2e-box"},
    "geometry": {
        "type": "Polygon",
        "coordinates": [
            [[-3.40, 55.60], [-3.30, 55.60], [-3.30, 55.65], [-3.40, 55.65], [-3.40, 55.60]]
        ],
    },
}


def _e2e_config(tmp_path, server, tag: str) -> str:
    def source(kind: str) -> dict:
        return {
            "name": f"mock-{kind}",
            "url_template": server.url_template(kind),
            "headers": {"User-Agent": "tilepairs-acceptance/0.1"},
            "max_requests_per_second": 2000,
            "max_retries": 4,
            "backoff_base_ms": 5,
        }

    region_path = tmp_path / "region.geojson"
    region_path.write_text(json.dumps(E2E_REGION))
    cfg = {
        "region_file": str(region_path),
        "zoom": 17,
        "n_pairs": 500,
        "seed": 20240917,
        "cache_root": str(tmp_path / f"cache-{tag}"),
        "out_dir": str(tmp_path / f"dataset-{tag}"),
        "test_fraction": 0.20,
        "parallelism": 8,
        "map_source": source("map"),
        "sat_source": source("sat"),
    }
    path = tmp_path / f"config-{tag}.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def _run_pipeline(config: str) -> None:
    assert cli.main(["sample", "--config", config]) == 0
    assert cli.main(["fetch", "--config", config]) == 0
    assert cli.main(["build", "--config", config]) == 0


def test_end_to_end_mock_pipeline(tmp_path):
    with criterion("end-to-end mock pipeline (500 pairs, 400/100 split, verify, byte-identical rerun, <2min)"):
        start = time.monotonic()
        srv = serve(MockWorld(seed=424242))
        try:
            cfg_a = _e2e_config(tmp_path, srv, "a")
            _run_pipeline(cfg_a)
            manifest_a = tmp_path / "dataset-a" / "manifest.jsonl"
            records = read_manifest(manifest_a)
            assert len(records) == 500
            assert sum(1 for r in records if r.split == "test") == 100
            assert sum(1 for r in records if r.split == "train") == 400
            assert cli.main(["verify", "--manifest", str(manifest_a)]) == 0

            # full rerun: fresh cache and output directory
            reset_rate_limiters()
            cfg_b = _e2e_config(tmp_path, srv, "b")
            _run_pipeline(cfg_b)
            manifest_b = tmp_path / "dataset-b" / "manifest.jsonl"
            assert manifest_b.read_bytes() == manifest_a.read_bytes()
        finally:
            srv.stop()
        assert time.monotonic() - start < 120.0


# --- criterion 5: rate limiting ----------------------------------------------


def test_rate_limiting(tmp_path):
    with criterion("rate limiting (100 @ 10 rps >= 9.9s, window <= 11, 503x2 in 3 attempts, rerun all-cached)"):
        srv = serve(MockWorld(seed=777))
        try:
            source = srv.tile_source("map", rps=10.0, name=f"rate-limited-{srv.port}")
            cache = TileCache(tmp_path / "cache")
            tiles = [TileCoord(14, 8000 + i % 20, 5000 + i // 20) for i in range(100)]

            report = fetch_batch(source, tiles, cache, parallelism=8)
            assert report.failed == []
            assert report.downloaded == 100
            assert report.elapsed_ms >= 9900

            times = sorted(srv.request_times("map"))
            assert len(times) == 100
            for t0 in times:
                assert sum(1 for t in times if t0 <= t < t0 + 1.0) <= 11

            flaky = TileCoord(14, 9500, 5500)
            requests.post(
                f"http://{srv.host}:{srv.port}/faults",
                json={"faults": [{"source": "map", "z": 14, "x": 9500, "y": 5500,
                                   "status": 503, "times": 2}]},
            ).raise_for_status()
            _, origin = fetch_tile(source, flaky, cache)
            assert origin == "network"
            assert srv.request_count("map", flaky) == 3

            rerun = fetch_batch(source, tiles, cache, parallelism=8)
            assert rerun.cache_hits == 100 and rerun.downloaded == 0 and rerun.failed == []
        finally:
            srv.stop()


# --- criterion 6: blank rejection ---------------------------------------------


def test_blank_rejection(tmp_path):
    with criterion("blank rejection (water_fraction=1 tiles rejected at 0.99, reasons in stats)"):
        world = MockWorld(seed=5, style=StyleParams(water_fraction=1.0))
        srv = serve(world)
        try:
            region = Region(
                name="sea", rings=(((-3.4, 55.6), (-3.38, 55.6), (-3.38, 55.61), (-3.4, 55.61)),)
            )
            coords = sample_tiles(SampleSpec(region=region, z=17, n=12, seed=1))
            cache = TileCache(tmp_path / "cache")
            map_src = srv.tile_source("map")
            sat_src = srv.tile_source("sat")
            fetch_batch(map_src, coords, cache, parallelism=4)
            fetch_batch(sat_src, coords, cache, parallelism=4)
            records, rejects = build_pairs(
                coords, cache.view(map_src.name), cache.view(sat_src.name)
            )
            assert records == []
            assert len(rejects) == 12
            assert all(r.reason == "blank" for r in rejects)
            st = dataset_stats(records, cache.view(map_src.name), rejects)
            assert st.rejected_blank == 12
            assert st.rejected_reasons["blank"] == 12
            assert set(st.rejected_reasons) == {"missing-map", "missing-sat", "invalid", "blank"}
        finally:
            srv.stop()
