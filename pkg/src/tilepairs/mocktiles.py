"""Deterministic synthetic XYZ tile server for offline pipeline runs.

Every tile is a pure function of (world seed, style knobs, z, x, y,
source). The map and satellite renderings of a coordinate share one
layout, so downstream pairing is semantically linked and tests can check
against the generator's own ground truth. PNG encoding is hand-rolled
with fixed settings (filter 0, zlib level 6) to keep goldens byte-stable.

HTTP surface:
  GET  /{map|sat}/{z}/{x}/{y}.png   tile bytes (image/png)
  POST /faults                      {"faults": [{source,z,x,y,status,times,delay_ms}]}
  GET  /requests                    timestamped log of served tile requests
"""

from __future__ import annotations

import json
import re
import struct
import threading
import time
import zlib
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .dataset import PALETTE_CENTROIDS
from .fetch import TileSource
from .geo import TileCoord
from .rng import Xoshiro256StarStar, mix

TILE_SIZE = 256

CLASS_BACKGROUND = 0
CLASS_GREEN = 1
CLASS_WATER = 2
CLASS_ROAD = 3
CLASS_BUILDING = 4
CLASS_NAMES = ("background", "green", "water", "road", "building")

# Map palette mirrors the dataset module's OSM-style centroids exactly, so
# palette statistics over mock tiles are exact by construction.
MAP_COLORS = np.array(
    [
        PALETTE_CENTROIDS["background"],
        PALETTE_CENTROIDS["green"],
        PALETTE_CENTROIDS["water"],
        PALETTE_CENTROIDS["road"],
        PALETTE_CENTROIDS["building"],
    ],
    dtype=np.uint8,
)

# Satellite base colors: water is the only dark class, so a luminance
# threshold recovers the water mask from the satellite rendering.
SAT_COLORS = np.array(
    [
        (150, 144, 120),  # background: bare field
        (60, 100, 55),    # green: vegetation
        (30, 50, 85),     # water: dark blue
        (105, 100, 95),   # road: asphalt
        (140, 130, 125),  # building: roofs
    ],
    dtype=np.uint8,
)
SAT_NOISE_AMPLITUDE = 10
_SAT_NOISE_TAG = 0x5A705E1  # namespaces the satellite noise stream off the layout stream


@dataclass(frozen=True)
class StyleParams:
    """Per-class density knobs for the synthetic world."""

    water_fraction: float = 0.35
    road_density: float = 0.5
    building_density: float = 0.5


@dataclass(frozen=True)
class MockWorld:
    seed: int
    style: StyleParams = StyleParams()


def tile_layout(world: MockWorld, t: TileCoord) -> np.ndarray:
    """Ground-truth class-id raster (TILE_SIZE x TILE_SIZE, uint8).

    Shared by the map and satellite renderings of the coordinate; exposed
    so tests can compare renderings against the true geometry.
    """
    style = world.style
    if style.water_fraction >= 0.999:
        return np.full((TILE_SIZE, TILE_SIZE), CLASS_WATER, dtype=np.uint8)

    rng = Xoshiro256StarStar(mix(world.seed, t.z, t.x, t.y))
    classes = np.full((TILE_SIZE, TILE_SIZE), CLASS_BACKGROUND, dtype=np.uint8)
    yy, xx = np.ogrid[:TILE_SIZE, :TILE_SIZE]

    def blob(class_id: int) -> None:
        cx = rng.below(TILE_SIZE)
        cy = rng.below(TILE_SIZE)
        r = 14 + rng.below(34)
        classes[(xx - cx) ** 2 + (yy - cy) ** 2 <= r * r] = class_id

    for _ in range(2):
        blob(CLASS_GREEN)
    for _ in range(round(style.water_fraction * 8)):
        blob(CLASS_WATER)

    for _ in range(round(style.road_density * 6)):
        pos = rng.below(TILE_SIZE)
        width = 2 + rng.below(3)
        horizontal = rng.below(2) == 0
        lo, hi = pos, min(pos + width, TILE_SIZE)
        if horizontal:
            classes[lo:hi, :] = CLASS_ROAD
        else:
            classes[:, lo:hi] = CLASS_ROAD

    for _ in range(round(style.building_density * 40)):
        x0 = rng.below(TILE_SIZE)
        y0 = rng.below(TILE_SIZE)
        w = 6 + rng.below(17)
        h = 6 + rng.below(17)
        classes[y0 : min(y0 + h, TILE_SIZE), x0 : min(x0 + w, TILE_SIZE)] = CLASS_BUILDING

    return classes


def encode_png(rgb: np.ndarray) -> bytes:
    """Minimal RGB8 PNG writer with fixed filter/compression settings."""
    if rgb.dtype != np.uint8 or rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("encode_png expects an (h, w, 3) uint8 array")
    height, width, _ = rgb.shape
    rows = np.zeros((height, 1 + width * 3), dtype=np.uint8)
    rows[:, 1:] = rgb.reshape(height, width * 3)
    idat = zlib.compress(rows.tobytes(), 6)

    def chunk(tag: bytes, payload: bytes) -> bytes:
        return (
            struct.pack(">I", len(payload))
            + tag
            + payload
            + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
        )

    ihdr = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", idat)
        + chunk(b"IEND", b"")
    )


def synth_tile(world: MockWorld, source: str, t: TileCoord) -> bytes:
    """PNG bytes for one tile of the synthetic world.

    source "map" renders the layout in flat OSM-palette colors; "sat"
    renders the same layout as noisy class-toned texture.
    """
    if source not in ("map", "sat"):
        raise ValueError(f"unknown mock source {source!r}")
    classes = tile_layout(world, t)
    if source == "map":
        rgb = MAP_COLORS[classes]
    else:
        noise_rng = np.random.default_rng(mix(world.seed, t.z, t.x, t.y, _SAT_NOISE_TAG))
        noise = noise_rng.integers(
            -SAT_NOISE_AMPLITUDE,
            SAT_NOISE_AMPLITUDE + 1,
            size=(TILE_SIZE, TILE_SIZE, 3),
            dtype=np.int16,
        )
        rgb = np.clip(SAT_COLORS[classes].astype(np.int16) + noise, 0, 255).astype(np.uint8)
    return encode_png(rgb)


_TILE_PATH = re.compile(r"^/(map|sat)/(\d+)/(\d+)/(\d+)\.png$")


class _Handler(BaseHTTPRequestHandler):
    server: "_TileHTTPServer"

    def log_message(self, fmt: str, *args) -> None:  # silence stderr chatter
        pass

    def _send(self, status: int, body: bytes, content_type: str) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, status: int, obj) -> None:
        self._send(status, json.dumps(obj).encode(), "application/json")

    def do_GET(self) -> None:
        if self.path == "/requests":
            with self.server.lock:
                log = list(self.server.request_log)
            self._send_json(200, log)
            return
        match = _TILE_PATH.match(self.path)
        if not match:
            self._send_json(404, {"error": "not found"})
            return
        source, z, x, y = match.group(1), *map(int, match.group(2, 3, 4))
        with self.server.lock:
            self.server.request_log.append(
                {"source": source, "z": z, "x": x, "y": y, "t": time.monotonic()}
            )
            fault = self.server.next_fault(source, z, x, y)
        if fault is not None:
            delay_ms = fault.get("delay_ms", 0)
            if delay_ms:
                time.sleep(delay_ms / 1000.0)
            status = fault.get("status", 200)
            if status != 200:
                self._send_json(status, {"error": f"scripted {status}"})
                return
        try:
            t = TileCoord(z, x, y)
        except Exception:
            self._send_json(404, {"error": "invalid tile coordinate"})
            return
        self._send(200, synth_tile(self.server.world, source, t), "image/png")

    def do_POST(self) -> None:
        if self.path != "/faults":
            self._send_json(404, {"error": "not found"})
            return
        length = int(self.headers.get("Content-Length", "0"))
        try:
            body = json.loads(self.rfile.read(length) or b"{}")
            faults = body.get("faults", [])
            table: dict[tuple[str, int, int, int], list[dict]] = {}
            for entry in faults:
                key = (entry["source"], int(entry["z"]), int(entry["x"]), int(entry["y"]))
                table.setdefault(key, []).append(
                    {
                        "status": int(entry.get("status", 200)),
                        "times": int(entry.get("times", 1)),
                        "delay_ms": int(entry.get("delay_ms", 0)),
                    }
                )
        except (ValueError, KeyError, TypeError) as exc:
            self._send_json(400, {"error": f"bad fault script: {exc}"})
            return
        with self.server.lock:
            self.server.faults = table
        self._send_json(200, {"ok": True})


class _TileHTTPServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], world: MockWorld) -> None:
        super().__init__(address, _Handler)
        self.world = world
        self.lock = threading.Lock()
        self.faults: dict[tuple[str, int, int, int], list[dict]] = {}
        self.request_log: list[dict] = []

    def next_fault(self, source: str, z: int, x: int, y: int) -> dict | None:
        # caller holds self.lock
        queue = self.faults.get((source, z, x, y))
        if not queue:
            return None
        fault = queue[0]
        fault["times"] -= 1
        if fault["times"] <= 0:
            queue.pop(0)
            if not queue:
                del self.faults[(source, z, x, y)]
        return fault


class MockTileServer:
    """A running (or startable) mock tile server bound to localhost."""

    def __init__(self, world: MockWorld, host: str = "127.0.0.1", port: int = 0) -> None:
        self.world = world
        self._server = _TileHTTPServer((host, port), world)
        self._thread: threading.Thread | None = None

    @property
    def host(self) -> str:
        return self._server.server_address[0]

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def start(self) -> "MockTileServer":
        thread = threading.Thread(
            target=lambda: self._server.serve_forever(poll_interval=0.05), daemon=True
        )
        thread.start()
        self._thread = thread
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "MockTileServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def url_template(self, source: str) -> str:
        return f"http://{self.host}:{self.port}/{source}/{{z}}/{{x}}/{{y}}.png"

    def tile_source(
        self,
        source: str,
        rps: float = 500.0,
        max_retries: int = 4,
        backoff_base_ms: int = 10,
        name: str | None = None,
    ) -> TileSource:
        """Convenience TileSource pointed at this server."""
        return TileSource(
            name=name or f"mock-{source}-{self.port}",
            url_template=self.url_template(source),
            headers=(("User-Agent", "tilepairs-tests/0.1"),),
            max_requests_per_second=rps,
            max_retries=max_retries,
            backoff_base_ms=backoff_base_ms,
        )

    def request_count(self, source: str, t: TileCoord) -> int:
        with self._server.lock:
            return sum(
                1
                for entry in self._server.request_log
                if entry["source"] == source
                and (entry["z"], entry["x"], entry["y"]) == (t.z, t.x, t.y)
            )

    def request_times(self, source: str | None = None) -> list[float]:
        with self._server.lock:
            return [
                entry["t"]
                for entry in self._server.request_log
                if source is None or entry["source"] == source
            ]


def serve(world: MockWorld, bind_address: tuple[str, int] = ("127.0.0.1", 0)) -> MockTileServer:
    """Start a mock tile server; returns the running server."""
    return MockTileServer(world, bind_address[0], bind_address[1]).start()
