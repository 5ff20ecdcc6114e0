"""Fixtures that build real datasets through the tile pipeline's public
surfaces: the `tilepairs` CLI and its mock tile server, plus the manifest
file contract. Nothing imports the builder package."""

from __future__ import annotations

import json
import re
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

REGION = {
    "type": "Feature",
    "properties": {"name": "trainer-box"},
    "geometry": {
        "type": "Polygon",
        "coordinates": [
            [[-3.60, 55.50], [-3.25, 55.50], [-3.25, 55.70], [-3.60, 55.70], [-3.60, 55.50]]
        ],
    },
}

# Disjoint second box so a merged corpus never collides on (z, x, y).
REGION_EAST = {
    "type": "Feature",
    "properties": {"name": "trainer-box-east"},
    "geometry": {
        "type": "Polygon",
        "coordinates": [
            [[-3.20, 55.50], [-2.85, 55.50], [-2.85, 55.70], [-3.20, 55.70], [-3.20, 55.50]]
        ],
    },
}

# Documented map palette of the dataset builder's mock world.
WATER_RGB = (170, 211, 223)
BUILDING_RGB = (217, 208, 201)
BACKGROUND_RGB = (242, 239, 233)


def _run_cli(*argv: str) -> None:
    result = subprocess.run(
        [sys.executable, "-m", "tilepairs.cli", *argv],
        capture_output=True,
        text=True,
    )
    assert result.returncode == 0, f"tilepairs {argv} failed:\n{result.stdout}\n{result.stderr}"


class MockServerProcess:
    def __init__(self, seed: int, water: float, roads: float, buildings: float) -> None:
        self.proc = subprocess.Popen(
            [
                sys.executable,
                "-m",
                "tilepairs.cli",
                "mock-serve",
                "--seed",
                str(seed),
                "--port",
                "0",
                "--water-fraction",
                str(water),
                "--road-density",
                str(roads),
                "--building-density",
                str(buildings),
            ],
            stdout=subprocess.PIPE,
            text=True,
        )
        line = self.proc.stdout.readline()
        match = re.search(r"http://127\.0\.0\.1:(\d+)", line)
        assert match, f"could not find port in: {line!r}"
        self.port = int(match.group(1))

    def stop(self) -> None:
        self.proc.terminate()
        self.proc.wait(timeout=10)


def build_dataset(
    root: Path,
    n_pairs: int,
    seed: int = 7,
    zoom: int = 15,
    water: float = 0.7,
    roads: float = 0.5,
    buildings: float = 1.0,
    region: dict = REGION,
) -> Path:
    """Sample/fetch/build a mock dataset; returns the manifest path."""
    root.mkdir(parents=True, exist_ok=True)
    server = MockServerProcess(seed=seed, water=water, roads=roads, buildings=buildings)
    try:
        (root / "region.geojson").write_text(json.dumps(region))

        def source(kind: str) -> dict:
            return {
                "name": f"mock-{kind}",
                "url_template": f"http://127.0.0.1:{server.port}/{kind}/{{z}}/{{x}}/{{y}}.png",
                "headers": {"User-Agent": "controlnet-toy-tests/0.1"},
                "max_requests_per_second": 2000,
                "max_retries": 4,
                "backoff_base_ms": 5,
            }

        config = {
            "region_file": str(root / "region.geojson"),
            "zoom": zoom,
            "n_pairs": n_pairs,
            "seed": seed,
            "cache_root": str(root / "cache"),
            "out_dir": str(root / "dataset"),
            "test_fraction": 0.20,
            "parallelism": 8,
            "map_source": source("map"),
            "sat_source": source("sat"),
        }
        config_path = root / "config.json"
        config_path.write_text(json.dumps(config))
        _run_cli("sample", "--config", str(config_path))
        _run_cli("fetch", "--config", str(config_path))
        _run_cli("build", "--config", str(config_path))
    finally:
        server.stop()
    return root / "dataset" / "manifest.jsonl"


def build_two_world_dataset(root: Path, n_pairs_per_world: int = 250) -> Path:
    """A merged corpus whose tiles come from a water-dominant world and a
    building-dominant world, so per-tile appearance is strongly class-driven.

    Both halves are ordinary pipeline datasets; merging concatenates the
    manifests and copies the image trees (coordinates are disjoint because
    the sampling regions are).
    """
    water_manifest = build_dataset(
        root / "water-world",
        n_pairs=n_pairs_per_world,
        seed=11,
        water=0.95,
        roads=0.2,
        buildings=0.25,
        region=REGION,
    )
    building_manifest = build_dataset(
        root / "building-world",
        n_pairs=n_pairs_per_world,
        seed=12,
        water=0.02,
        roads=0.8,
        buildings=1.4,
        region=REGION_EAST,
    )
    merged = root / "merged"
    merged.mkdir(parents=True, exist_ok=True)
    lines: list[str] = []
    for manifest in (water_manifest, building_manifest):
        lines.extend(manifest.read_text(encoding="utf-8").splitlines())
        for line in manifest.read_text(encoding="utf-8").splitlines():
            row = json.loads(line)
            for key in ("map_path", "sat_path"):
                src = manifest.parent / row[key]
                dst = merged / row[key]
                dst.parent.mkdir(parents=True, exist_ok=True)
                dst.write_bytes(src.read_bytes())
    merged_manifest = merged / "manifest.jsonl"
    merged_manifest.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return merged_manifest


@pytest.fixture(scope="session")
def small_manifest(tmp_path_factory) -> Path:
    """50 pairs (40 train / 10 test) for unit-level tests."""
    return build_dataset(tmp_path_factory.mktemp("small-data"), n_pairs=50)


@pytest.fixture(scope="session")
def training_manifest(tmp_path_factory) -> Path:
    """500 pairs (400 train / 100 test) spanning both worlds for the
    training acceptance runs."""
    return build_two_world_dataset(tmp_path_factory.mktemp("train-data"))


def class_map_tile(rgb: tuple[int, int, int], size: int = 64) -> Image.Image:
    """A class-pure mock map tile (uniform palette color)."""
    return Image.fromarray(np.full((size, size, 3), rgb, dtype=np.uint8))


def building_grid_tile(size: int = 64) -> Image.Image:
    """A building-dense mock map tile: palette building blocks on background."""
    arr = np.full((size, size, 3), BACKGROUND_RGB, dtype=np.uint8)
    step = 8
    for y0 in range(1, size, step):
        for x0 in range(1, size, step):
            arr[y0 : y0 + 5, x0 : x0 + 5] = BUILDING_RGB
    return Image.fromarray(arr)
