"""Command line driver wiring the pipeline together.

Subcommands mirror the workflow: regions, sample, fetch, build, verify,
stats, mock-serve. Configuration lives in one JSON file; flags override
individual fields so reproducible runs stay file-captured. Exit codes:
0 success, 1 usage/config error, 2 partial data failure, 3 integrity
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from importlib import resources
from pathlib import Path

from . import dataset as ds
from . import fetch as fx
from . import mocktiles, region as rg
from .geo import TileCoord

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARTIAL = 2
EXIT_INTEGRITY = 3

CACHE_ROOT_ENV = "TILEPAIRS_CACHE_ROOT"
BUNDLED_REGIONS = ("mainland-scotland", "central-belt")

DEFAULT_USER_AGENT = "tilepairs/0.1 (paired tile dataset builder)"
SOURCE_PRESETS: dict[str, dict] = {
    "osm": {
        "name": "osm",
        "url_template": "https://tile.openstreetmap.org/{z}/{x}/{y}.png",
        "max_requests_per_second": 2.0,
    },
    "worldimagery": {
        "name": "worldimagery",
        "url_template": (
            "https://server.arcgisonline.com/ArcGIS/rest/services/"
            "World_Imagery/MapServer/tile/{z}/{y}/{x}"
        ),
        "max_requests_per_second": 8.0,
    },
    "worldimagery-clarity": {
        "name": "worldimagery-clarity",
        "url_template": (
            "https://clarity.maptiles.arcgis.com/arcgis/rest/services/"
            "World_Imagery/MapServer/tile/{z}/{y}/{x}"
        ),
        "max_requests_per_second": 8.0,
    },
}


class UsageError(Exception):
    """Bad flags or configuration; maps to exit code 1."""


@dataclasses.dataclass
class PipelineConfig:
    region_file: str | None = None
    region_name: str | None = None
    zoom: int = 17
    n_pairs: int = 0
    seed: int = 0
    map_source: fx.TileSource | None = None
    sat_source: fx.TileSource | None = None
    cache_root: str = "cache"
    out_dir: str = "dataset"
    test_fraction: float = ds.DEFAULT_TEST_FRACTION
    blank_threshold: float = ds.DEFAULT_BLANK_THRESHOLD
    parallelism: int = 4
    source_variant: str | None = None

    def variant(self) -> str:
        if self.source_variant:
            return self.source_variant
        name = self.sat_source.name if self.sat_source else ""
        if "clarity" in name:
            return "clarity"
        if name.startswith("mock"):
            return "mock"
        return "current"


def build_source(value) -> fx.TileSource:
    """A TileSource from a preset name or a config dict."""
    if isinstance(value, str):
        if value not in SOURCE_PRESETS:
            raise UsageError(
                f"unknown source preset {value!r}; presets: {sorted(SOURCE_PRESETS)}"
            )
        value = SOURCE_PRESETS[value]
    if not isinstance(value, dict):
        raise UsageError(f"source config must be a preset name or object, got {value!r}")
    headers = dict(value.get("headers", {}))
    if not any(k.lower() == "user-agent" for k in headers):
        headers["User-Agent"] = DEFAULT_USER_AGENT
    try:
        return fx.TileSource(
            name=value["name"],
            url_template=value["url_template"],
            headers=tuple(sorted(headers.items())),
            max_requests_per_second=float(value.get("max_requests_per_second", 2.0)),
            max_retries=int(value.get("max_retries", 4)),
            backoff_base_ms=int(value.get("backoff_base_ms", 250)),
        )
    except (KeyError, ValueError) as exc:
        raise UsageError(f"bad source config: {exc}") from exc


def load_config(args: argparse.Namespace) -> PipelineConfig:
    raw: dict = {}
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from exc
    cfg = PipelineConfig()
    simple_fields = (
        "region_file",
        "region_name",
        "zoom",
        "n_pairs",
        "seed",
        "cache_root",
        "out_dir",
        "test_fraction",
        "blank_threshold",
        "parallelism",
        "source_variant",
    )
    for key in simple_fields:
        if key in raw:
            setattr(cfg, key, raw[key])
    if "map_source" in raw:
        cfg.map_source = build_source(raw["map_source"])
    if "sat_source" in raw:
        cfg.sat_source = build_source(raw["sat_source"])
    if os.environ.get(CACHE_ROOT_ENV):
        cfg.cache_root = os.environ[CACHE_ROOT_ENV]
    for key in simple_fields:  # explicit flags beat config file and env
        flag = getattr(args, key, None)
        if flag is not None:
            setattr(cfg, key, flag)
    if cfg.zoom != int(cfg.zoom) or not 0 <= int(cfg.zoom) <= 22:
        raise UsageError(f"zoom must be an integer in [0, 22], got {cfg.zoom}")
    cfg.zoom = int(cfg.zoom)
    return cfg


def bundled_region_path(name: str) -> Path:
    if name not in BUNDLED_REGIONS:
        raise UsageError(f"unknown bundled region {name!r}; have {BUNDLED_REGIONS}")
    return Path(str(resources.files("tilepairs").joinpath(f"data/{name}.geojson")))


def load_region(cfg: PipelineConfig) -> rg.Region:
    if cfg.region_file:
        path = Path(cfg.region_file)
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise UsageError(f"cannot read region file {path}: {exc}") from exc
        try:
            return rg.parse_geojson(data, name=cfg.region_name)
        except rg.RegionError as exc:
            raise UsageError(f"bad region file {path}: {exc}") from exc
    if cfg.region_name:
        return rg.parse_geojson(bundled_region_path(cfg.region_name).read_bytes())
    raise UsageError("no region: set region_file or region_name")


def write_coords(coords: list[TileCoord], path: Path) -> None:
    """Sorted, diffable z/x/y text listing (atomic write)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    body = "".join(f"{t.z}/{t.x}/{t.y}\n" for t in sorted(coords))
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(body, encoding="utf-8")
    os.replace(tmp, path)


def read_coords(path: Path) -> list[TileCoord]:
    coords = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read coords file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            z, x, y = (int(part) for part in line.split("/"))
            coords.append(TileCoord(z, x, y))
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad coordinate line {line!r}: {exc}") from exc
    return coords


def _coords_path(cfg: PipelineConfig, args) -> Path:
    explicit = getattr(args, "coords", None)
    return Path(explicit) if explicit else Path(cfg.out_dir) / "coords.txt"


def _emit(args, human: str, payload: dict) -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(human)


def cmd_regions(args) -> int:
    rows = []
    for name in BUNDLED_REGIONS:
        path = bundled_region_path(name)
        reg = rg.parse_geojson(path.read_bytes())
        rows.append(
            {
                "name": name,
                "path": str(path),
                "rings": len(reg.rings),
                "vertices": sum(len(r) for r in reg.rings),
                "bbox": dataclasses.asdict(reg.bbox),
            }
        )
    if args.json:
        print(json.dumps(rows, indent=2, sort_keys=True))
    else:
        for row in rows:
            print(f"{row['name']}: {row['rings']} ring(s), {row['vertices']} vertices, {row['path']}")
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = load_config(args)
    region = load_region(cfg)
    try:
        spec = rg.SampleSpec(region=region, z=cfg.zoom, n=cfg.n_pairs, seed=cfg.seed)
        coords = rg.sample_tiles(spec)
    except rg.CapacityError as exc:
        raise UsageError(str(exc)) from exc
    out = _coords_path(cfg, args)
    write_coords(coords, out)
    _emit(
        args,
        f"sampled {len(coords)} tiles from {region.name} at z={cfg.zoom} -> {out}",
        {"region": region.name, "zoom": cfg.zoom, "count": len(coords), "coords_file": str(out)},
    )
    return EXIT_OK


def _require_sources(cfg: PipelineConfig) -> tuple[fx.TileSource, fx.TileSource]:
    if cfg.map_source is None or cfg.sat_source is None:
        raise UsageError("config must define map_source and sat_source")
    return cfg.map_source, cfg.sat_source


def cmd_fetch(args) -> int:
    cfg = load_config(args)
    map_source, sat_source = _require_sources(cfg)
    coords = read_coords(_coords_path(cfg, args))
    cache = fx.TileCache(cfg.cache_root)
    reports = {}
    for label, source in (("map", map_source), ("sat", sat_source)):
        reports[label] = fx.fetch_batch(source, coords, cache, parallelism=cfg.parallelism)
    human = "\n".join(
        f"{label}: requested={r.requested} downloaded={r.downloaded} "
        f"cache_hits={r.cache_hits} failed={len(r.failed)} elapsed_ms={r.elapsed_ms}"
        for label, r in reports.items()
    )
    _emit(args, human, {label: r.to_json() for label, r in reports.items()})
    failed = sum(len(r.failed) for r in reports.values())
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_build(args) -> int:
    cfg = load_config(args)
    map_source, sat_source = _require_sources(cfg)
    coords = read_coords(_coords_path(cfg, args))
    cache = fx.TileCache(cfg.cache_root)
    maps = cache.view(map_source.name)
    sats = cache.view(sat_source.name)
    records, rejects = ds.build_pairs(
        coords,
        maps,
        sats,
        blank_threshold=cfg.blank_threshold,
        source_variant=cfg.variant(),
    )
    records = ds.assign_split(records, test_fraction=cfg.test_fraction, seed=cfg.seed)
    out_dir = Path(cfg.out_dir)
    ds.export_images(records, maps, sats, out_dir)
    manifest_path = out_dir / "manifest.jsonl"
    ds.write_manifest(records, manifest_path)
    stats = ds.stats(records, maps, rejects)
    stats_path = out_dir / "stats.json"
    stats_path.parent.mkdir(parents=True, exist_ok=True)
    stats_path.write_text(json.dumps(stats.to_json(), indent=2, sort_keys=True) + "\n")
    _emit(
        args,
        (
            f"built {stats.total_pairs} pairs ({stats.train_pairs} train / {stats.test_pairs} test), "
            f"rejected {len(rejects)} -> {manifest_path}"
        ),
        {
            "manifest": str(manifest_path),
            "stats_file": str(stats_path),
            **stats.to_json(),
        },
    )
    data_failures = sum(
        1 for r in rejects if r.reason in ("missing-map", "missing-sat", "invalid")
    )
    return EXIT_PARTIAL if data_failures else EXIT_OK


def _manifest_path(args) -> Path:
    if getattr(args, "manifest", None):
        return Path(args.manifest)
    cfg = load_config(args)
    return Path(cfg.out_dir) / "manifest.jsonl"


def cmd_verify(args) -> int:
    manifest = _manifest_path(args)
    violations = ds.verify_manifest(manifest)
    if violations:
        _emit(
            args,
            "\n".join(violations),
            {"ok": False, "violations": violations},
        )
        return EXIT_INTEGRITY
    _emit(args, f"ok: {manifest}", {"ok": True, "violations": []})
    return EXIT_OK


def cmd_stats(args) -> int:
    manifest = _manifest_path(args)
    try:
        records = ds.read_manifest(manifest)
    except ds.DatasetError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INTEGRITY
    maps = ds.DirImages(manifest.parent, "map")
    stats = ds.stats(records, maps)
    human = [
        f"pairs: {stats.total_pairs} ({stats.train_pairs} train / {stats.test_pairs} test)"
    ]
    for name, fraction in stats.map_palette_histogram.items():
        human.append(f"  {name}: {fraction:.4f}")
    _emit(args, "\n".join(human), stats.to_json())
    return EXIT_OK


def cmd_mock_serve(args) -> int:
    world = mocktiles.MockWorld(
        seed=args.seed,
        style=mocktiles.StyleParams(
            water_fraction=args.water_fraction,
            road_density=args.road_density,
            building_density=args.building_density,
        ),
    )
    server = mocktiles.MockTileServer(world, host=args.host, port=args.port)
    print(f"mock tile server on http://{server.host}:{server.port} (seed={args.seed})", flush=True)
    print(f"  map: {server.url_template('map')}", flush=True)
    print(f"  sat: {server.url_template('sat')}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits 2 by default; we use 1
        raise UsageError(message)


def _add_config_flags(p: argparse.ArgumentParser, *fields: str) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    specs = {
        "region_file": (str, "GeoJSON region file"),
        "region_name": (str, "bundled region name or name override"),
        "zoom": (int, "tile zoom level"),
        "n_pairs": (int, "number of pairs to sample"),
        "seed": (int, "64-bit sampling/split seed"),
        "cache_root": (str, "tile cache directory"),
        "out_dir": (str, "dataset output directory"),
        "test_fraction": (float, "test split fraction"),
        "blank_threshold": (float, "blank-tile rejection threshold"),
        "parallelism": (int, "fetch worker count"),
        "source_variant": (str, "manifest source_variant override"),
    }
    for field in fields:
        ftype, help_text = specs[field]
        p.add_argument(f"--{field.replace('_', '-')}", dest=field, type=ftype, help=help_text)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tilepairs", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("regions", help="list bundled region fixtures")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_regions)

    p = sub.add_parser("sample", help="sample tile coordinates from a region")
    _add_config_flags(
        p, "region_file", "region_name", "zoom", "n_pairs", "seed", "out_dir"
    )
    p.add_argument("--coords", help="coords file to write (default OUT_DIR/coords.txt)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("fetch", help="fetch map+sat tiles for sampled coordinates")
    _add_config_flags(p, "cache_root", "out_dir", "parallelism")
    p.add_argument("--coords", help="coords file to read")
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("build", help="pair, split, export, and write the manifest")
    _add_config_flags(
        p,
        "cache_root",
        "out_dir",
        "seed",
        "test_fraction",
        "blank_threshold",
        "source_variant",
    )
    p.add_argument("--coords", help="coords file to read")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("verify", help="verify a manifest row by row")
    _add_config_flags(p, "out_dir")
    p.add_argument("--manifest", help="manifest path (default OUT_DIR/manifest.jsonl)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("stats", help="palette histogram and split counts for a manifest")
    _add_config_flags(p, "out_dir")
    p.add_argument("--manifest", help="manifest path (default OUT_DIR/manifest.jsonl)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("mock-serve", help="run the deterministic mock tile server")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--water-fraction", type=float, default=0.35)
    p.add_argument("--road-density", type=float, default=0.5)
    p.add_argument("--building-density", type=float, default=0.5)
    p.set_defaults(func=cmd_mock_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (rg.RegionError, ds.DatasetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
