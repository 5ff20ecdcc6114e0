"""Manifest-driven pair loading.

Consumes the dataset builder's manifest contract: line-delimited JSON
with keys (z, x, y, map_path, sat_path, map_sha256, sat_sha256, split,
prompt, source_variant), image paths relative to the manifest directory.
Nothing here imports the builder; the file format is the interface.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from torch.utils.data import Dataset

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


class DataError(Exception):
    pass


@dataclass(frozen=True)
class PairEntry:
    z: int
    x: int
    y: int
    map_path: str
    sat_path: str
    split: str
    prompt: str


def read_manifest(path: Path | str) -> list[PairEntry]:
    """Parse manifest rows; errors name the offending line."""
    path = Path(path)
    entries: list[PairEntry] = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed JSON: {exc.msg}") from exc
        missing = [k for k in MANIFEST_KEYS if k not in obj]
        if missing:
            raise DataError(f"{path}:{lineno}: missing keys {missing}")
        entries.append(
            PairEntry(
                z=int(obj["z"]),
                x=int(obj["x"]),
                y=int(obj["y"]),
                map_path=str(obj["map_path"]),
                sat_path=str(obj["sat_path"]),
                split=str(obj["split"]),
                prompt=str(obj["prompt"]),
            )
        )
    return entries


def load_image_tensor(path: Path, size: int) -> torch.Tensor:
    """Image file -> float tensor in [-1, 1], shape (3, size, size).

    Downscaling uses PIL's box filter (area averaging), which is
    deterministic across runs.
    """
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            if rgb.size != (size, size):
                rgb = rgb.resize((size, size), Image.BOX)
            arr = np.asarray(rgb, dtype=np.float32)
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"unreadable image {path}: {exc}") from exc
    return torch.from_numpy(arr).permute(2, 0, 1) / 127.5 - 1.0


class PairDataset(Dataset):
    """(map, sat) tensors for one split of a manifest."""

    def __init__(self, manifest_path: Path | str, split: str, image_size: int) -> None:
        manifest_path = Path(manifest_path)
        self.root = manifest_path.parent
        self.image_size = image_size
        self.entries = [e for e in read_manifest(manifest_path) if e.split == split]

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, idx: int) -> tuple[torch.Tensor, torch.Tensor]:
        entry = self.entries[idx]
        cond = load_image_tensor(self.root / entry.map_path, self.image_size)
        target = load_image_tensor(self.root / entry.sat_path, self.image_size)
        return cond, target


class SatDataset(Dataset):
    """Satellite images only (unconditional pretraining)."""

    def __init__(self, manifest_path: Path | str, split: str, image_size: int) -> None:
        manifest_path = Path(manifest_path)
        self.root = manifest_path.parent
        self.image_size = image_size
        self.entries = [e for e in read_manifest(manifest_path) if e.split == split]

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, idx: int) -> torch.Tensor:
        return load_image_tensor(self.root / self.entries[idx].sat_path, self.image_size)
