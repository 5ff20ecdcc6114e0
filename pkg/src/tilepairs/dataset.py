"""Pair assembly, train/test split, manifest serialization, statistics.

The manifest is the pipeline's output contract: line-delimited JSON, one
object per pair, keys in a fixed order, "\\n" endings, UTF-8. With fixed
seeds the whole build is byte-reproducible, so manifests can be diffed
and checksummed across reruns.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from hashlib import sha256
from io import BytesIO
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .geo import TileCoord
from .rng import Xoshiro256StarStar

FIXED_PROMPT = "Convert this OpenStreetMap into its satellite view"
DEFAULT_TILE_SIZE = 256
DEFAULT_BLANK_THRESHOLD = 0.99
DEFAULT_TEST_FRACTION = 0.20

SPLITS = ("train", "test")
SOURCE_VARIANTS = ("current", "clarity", "mock")
MANIFEST_KEYS = (
    "z",
    "x",
    "y",
    "map_path",
    "sat_path",
    "map_sha256",
    "sat_sha256",
    "split",
    "prompt",
    "source_variant",
)

# Representative RGB centroids of the standard OSM raster palette. Map
# pixels are classified to the nearest centroid; anything farther than
# PALETTE_OTHER_DISTANCE from all of them counts as "other".
PALETTE_CENTROIDS: dict[str, tuple[int, int, int]] = {
    "water": (170, 211, 223),
    "green": (205, 235, 176),
    "road": (255, 255, 255),
    "building": (217, 208, 201),
    "background": (242, 239, 233),
}
PALETTE_OTHER_DISTANCE = 60.0
PALETTE_CLASSES = (*PALETTE_CENTROIDS, "other")

REJECT_REASONS = ("missing-map", "missing-sat", "invalid", "blank")


class DatasetError(Exception):
    """Base class for dataset construction failures."""


class InvalidImageError(DatasetError):
    """Bytes did not decode as a PNG or JPEG image."""


class DimensionError(DatasetError):
    """Decoded image has unexpected pixel dimensions."""


class ManifestError(DatasetError):
    """Malformed manifest content; message names the offending line."""


class IntegrityError(DatasetError):
    """Manifest-level contract violation (duplicate coordinates etc.)."""


@dataclass(frozen=True)
class TileImage:
    width: int
    height: int
    blank_fraction: float


def validate_tile(data: bytes, expected_size: int | None = DEFAULT_TILE_SIZE) -> TileImage:
    """Decode tile bytes and measure how blank they are.

    blank_fraction is the share of pixels equal to the single most common
    pixel value (a uniform open-sea tile scores 1.0). Raises
    InvalidImageError for undecodable bytes and DimensionError when the
    image is not expected_size x expected_size (pass None to skip).
    """
    if not data:
        raise InvalidImageError("empty byte buffer")
    try:
        with Image.open(BytesIO(data)) as img:
            img.load()
            width, height = img.size
            rgb = np.asarray(img.convert("RGB"), dtype=np.uint32)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise InvalidImageError(f"undecodable image bytes: {exc}") from exc
    if expected_size is not None and (width, height) != (expected_size, expected_size):
        raise DimensionError(
            f"expected {expected_size}x{expected_size}, got {width}x{height}"
        )
    packed = (rgb[..., 0] << 16) | (rgb[..., 1] << 8) | rgb[..., 2]
    counts = np.unique(packed, return_counts=True)[1]
    return TileImage(width, height, float(counts.max() / packed.size))


@dataclass(frozen=True)
class PairRecord:
    """One dataset row: a coordinate plus both image references."""

    coord: TileCoord
    map_path: str
    sat_path: str
    map_sha256: str
    sat_sha256: str
    split: str
    prompt: str = FIXED_PROMPT
    source_variant: str = "mock"

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise DatasetError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.source_variant not in SOURCE_VARIANTS:
            raise DatasetError(
                f"source_variant must be one of {SOURCE_VARIANTS}, got {self.source_variant!r}"
            )
        if self.prompt != FIXED_PROMPT:
            raise DatasetError(f"prompt must be {FIXED_PROMPT!r}")


@dataclass(frozen=True)
class RejectedTile:
    coord: TileCoord
    reason: str


def map_rel_path(t: TileCoord) -> str:
    return f"map/{t.z}/{t.x}/{t.y}.png"


def sat_rel_path(t: TileCoord) -> str:
    return f"sat/{t.z}/{t.x}/{t.y}.png"


def build_pairs(
    coords: list[TileCoord],
    maps,
    sats,
    blank_threshold: float = DEFAULT_BLANK_THRESHOLD,
    expected_size: int = DEFAULT_TILE_SIZE,
    source_variant: str = "mock",
) -> tuple[list[PairRecord], list[RejectedTile]]:
    """Assemble validated pairs from cached tiles.

    ``maps`` and ``sats`` are per-source cache views (``.get(coord)``).
    A coordinate becomes a record only when both tiles decode at the
    expected size and the map tile's blank_fraction stays below
    blank_threshold; everything else lands in the reject list with a
    reason. Records come out sorted by (z, x, y); missing cache entries
    are rejects, never errors.
    """
    records: list[PairRecord] = []
    rejects: list[RejectedTile] = []
    for coord in sorted(set(coords)):
        map_bytes = maps.get(coord)
        if map_bytes is None:
            rejects.append(RejectedTile(coord, "missing-map"))
            continue
        sat_bytes = sats.get(coord)
        if sat_bytes is None:
            rejects.append(RejectedTile(coord, "missing-sat"))
            continue
        try:
            map_info = validate_tile(map_bytes, expected_size)
            validate_tile(sat_bytes, expected_size)
        except (InvalidImageError, DimensionError):
            rejects.append(RejectedTile(coord, "invalid"))
            continue
        if map_info.blank_fraction >= blank_threshold:
            rejects.append(RejectedTile(coord, "blank"))
            continue
        records.append(
            PairRecord(
                coord=coord,
                map_path=map_rel_path(coord),
                sat_path=sat_rel_path(coord),
                map_sha256=sha256(map_bytes).hexdigest(),
                sat_sha256=sha256(sat_bytes).hexdigest(),
                split="train",
                source_variant=source_variant,
            )
        )
    return records, rejects


def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


def assign_split(
    records: list[PairRecord],
    test_fraction: float = DEFAULT_TEST_FRACTION,
    seed: int = 0,
) -> list[PairRecord]:
    """Label exactly round(test_fraction * N) records as test.

    The test subset is chosen by a seeded shuffle of record indices
    (half-away-from-zero rounding); the returned list preserves the input
    order. Deterministic for fixed (records, fraction, seed).
    """
    if not 0.0 <= test_fraction <= 1.0:
        raise DatasetError(f"test_fraction must be in [0, 1], got {test_fraction}")
    n_test = _round_half_away(test_fraction * len(records))
    indices = list(range(len(records)))
    Xoshiro256StarStar(seed).shuffle(indices)
    test_indices = set(indices[:n_test])
    return [
        replace(rec, split="test" if i in test_indices else "train")
        for i, rec in enumerate(records)
    ]


def _record_to_obj(rec: PairRecord) -> dict:
    return {
        "z": rec.coord.z,
        "x": rec.coord.x,
        "y": rec.coord.y,
        "map_path": rec.map_path,
        "sat_path": rec.sat_path,
        "map_sha256": rec.map_sha256,
        "sat_sha256": rec.sat_sha256,
        "split": rec.split,
        "prompt": rec.prompt,
        "source_variant": rec.source_variant,
    }


def record_to_line(rec: PairRecord) -> str:
    """Canonical serialization: fixed key order, compact separators."""
    return json.dumps(_record_to_obj(rec), ensure_ascii=False, separators=(",", ":"))


def _parse_line(line: str, lineno: int) -> PairRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"line {lineno}: malformed JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise ManifestError(f"line {lineno}: expected a JSON object")
    missing = [k for k in MANIFEST_KEYS if k not in obj]
    if missing:
        raise ManifestError(f"line {lineno}: missing keys {missing}")
    try:
        return PairRecord(
            coord=TileCoord(int(obj["z"]), int(obj["x"]), int(obj["y"])),
            map_path=obj["map_path"],
            sat_path=obj["sat_path"],
            map_sha256=obj["map_sha256"],
            sat_sha256=obj["sat_sha256"],
            split=obj["split"],
            prompt=obj["prompt"],
            source_variant=obj["source_variant"],
        )
    except (DatasetError, ValueError, TypeError) as exc:
        raise ManifestError(f"line {lineno}: {exc}") from exc


def write_manifest(records: list[PairRecord], path: Path | str) -> None:
    """Atomically write the manifest (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = "".join(record_to_line(rec) + "\n" for rec in records).encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def read_manifest(path: Path | str) -> list[PairRecord]:
    """Parse a manifest; errors name the offending line, duplicates are
    integrity errors, and no partial result is returned."""
    records: list[PairRecord] = []
    seen: set[TileCoord] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            rec = _parse_line(line, lineno)
            if rec.coord in seen:
                raise IntegrityError(
                    f"line {lineno}: duplicate coordinate {rec.coord.z}/{rec.coord.x}/{rec.coord.y}"
                )
            seen.add(rec.coord)
            records.append(rec)
    return records


def export_images(
    records: list[PairRecord], maps, sats, out_dir: Path | str
) -> None:
    """Copy cached wire bytes into the dataset layout next to the manifest.

    Never re-encodes; the exported file is the byte-exact payload whose
    digest the record carries.
    """
    out_dir = Path(out_dir)
    for rec in records:
        for rel, view, digest in (
            (rec.map_path, maps, rec.map_sha256),
            (rec.sat_path, sats, rec.sat_sha256),
        ):
            data = view.get(rec.coord)
            if data is None:
                raise DatasetError(f"cache entry vanished for {rel}")
            if sha256(data).hexdigest() != digest:
                raise IntegrityError(f"cache bytes changed under {rel}")
            target = out_dir / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)


@dataclass
class DatasetStats:
    """Aggregate dataset measurements, including the palette histogram
    used as a rural/urban balance proxy."""

    total_pairs: int
    train_pairs: int
    test_pairs: int
    rejected_blank: int
    rejected_invalid: int
    map_palette_histogram: dict[str, float]
    rejected_reasons: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "total_pairs": self.total_pairs,
            "train_pairs": self.train_pairs,
            "test_pairs": self.test_pairs,
            "rejected_blank": self.rejected_blank,
            "rejected_invalid": self.rejected_invalid,
            "map_palette_histogram": self.map_palette_histogram,
            "rejected_reasons": self.rejected_reasons,
        }


class DirImages:
    """Read-only map/sat image access over an exported dataset directory."""

    def __init__(self, root: Path | str, kind: str = "map") -> None:
        self.root = Path(root)
        self.kind = kind

    def get(self, t: TileCoord) -> bytes | None:
        path = self.root / self.kind / str(t.z) / str(t.x) / f"{t.y}.png"
        try:
            return path.read_bytes()
        except OSError:
            return None


def classify_palette(rgb: np.ndarray) -> np.ndarray:
    """Per-pixel palette class indices into PALETTE_CLASSES."""
    flat = rgb.reshape(-1, 3).astype(np.float32)
    centroids = np.array(list(PALETTE_CENTROIDS.values()), dtype=np.float32)
    d2 = ((flat[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    idx = d2.argmin(axis=1)
    idx[d2.min(axis=1) > PALETTE_OTHER_DISTANCE**2] = len(PALETTE_CENTROIDS)
    return idx


def stats(
    records: list[PairRecord],
    maps,
    rejects: list[RejectedTile] | tuple = (),
) -> DatasetStats:
    """Dataset statistics over built records.

    ``maps`` provides map-tile bytes by coordinate (a cache view or
    DirImages over the exported dataset). Palette fractions are pixel
    shares over all map tiles and sum to 1.
    """
    class_counts = np.zeros(len(PALETTE_CLASSES), dtype=np.int64)
    for rec in records:
        data = maps.get(rec.coord)
        if data is None:
            raise DatasetError(
                f"unreadable map tile {rec.coord.z}/{rec.coord.x}/{rec.coord.y}"
            )
        try:
            with Image.open(BytesIO(data)) as img:
                rgb = np.asarray(img.convert("RGB"))
        except (UnidentifiedImageError, OSError) as exc:
            raise DatasetError(
                f"unreadable map tile {rec.coord.z}/{rec.coord.x}/{rec.coord.y}: {exc}"
            ) from exc
        class_counts += np.bincount(classify_palette(rgb), minlength=len(PALETTE_CLASSES))

    total_pixels = int(class_counts.sum())
    histogram = {
        name: (int(class_counts[i]) / total_pixels if total_pixels else 0.0)
        for i, name in enumerate(PALETTE_CLASSES)
    }
    reason_counts = {reason: 0 for reason in REJECT_REASONS}
    for rej in rejects:
        reason_counts[rej.reason] = reason_counts.get(rej.reason, 0) + 1
    train = sum(1 for r in records if r.split == "train")
    return DatasetStats(
        total_pairs=len(records),
        train_pairs=train,
        test_pairs=len(records) - train,
        rejected_blank=reason_counts.get("blank", 0),
        rejected_invalid=reason_counts.get("missing-map", 0)
        + reason_counts.get("missing-sat", 0)
        + reason_counts.get("invalid", 0),
        map_palette_histogram=histogram,
        rejected_reasons=reason_counts,
    )


def verify_manifest(path: Path | str) -> list[str]:
    """Check every manifest row against the PairRecord contract.

    Returns a list of human-readable violations (empty means ok): parse
    errors, duplicate coordinates, missing files, digest mismatches,
    undecodable or wrongly sized images.
    """
    path = Path(path)
    violations: list[str] = []
    records: list[tuple[int, PairRecord]] = []
    seen: dict[TileCoord, int] = {}
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as exc:
        return [f"cannot read manifest: {exc}"]
    for lineno, line in enumerate(lines, start=1):
        if not line:
            continue
        try:
            rec = _parse_line(line, lineno)
        except ManifestError as exc:
            violations.append(str(exc))
            continue
        if rec.coord in seen:
            violations.append(
                f"line {lineno}: duplicate coordinate {rec.coord.z}/{rec.coord.x}/{rec.coord.y}"
                f" (first at line {seen[rec.coord]})"
            )
            continue
        seen[rec.coord] = lineno
        records.append((lineno, rec))

    base = path.parent
    for lineno, rec in records:
        for rel, digest in ((rec.map_path, rec.map_sha256), (rec.sat_path, rec.sat_sha256)):
            file_path = base / rel
            try:
                data = file_path.read_bytes()
            except OSError:
                violations.append(f"line {lineno}: missing file {rel}")
                continue
            if sha256(data).hexdigest() != digest:
                violations.append(f"line {lineno}: checksum mismatch for {rel}")
                continue
            try:
                info = validate_tile(data, DEFAULT_TILE_SIZE)
            except (InvalidImageError, DimensionError) as exc:
                violations.append(f"line {lineno}: {rel}: {exc}")
                continue
            del info
    return violations
