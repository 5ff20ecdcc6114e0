"""Training loops: unconditional pretraining, then conditioned training.

pretrain_base fits the small denoiser on satellite tiles and freezes it.
attach_controlnet wraps its encoder blocks with trainable copies behind
zero convolutions. train_controlnet updates only the copies and the zero
convolutions; the frozen parameter digest is recorded before and after
and must not move. Both stages emit a checkpoint plus a JSON metrics log.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import torch
from torch.utils.data import DataLoader

from .config import ToyDiffusionConfig
from .data import DataError, PairDataset, SatDataset
from .diffusion import GaussianDiffusion, to_uint8
from .model import ControlledUNet, TinyUNet, state_digest

BASE_CHECKPOINT = "base.pt"
CONTROL_CHECKPOINT = "controlnet.pt"
METRICS_NAME = "metrics.json"


def _loader(dataset, config: ToyDiffusionConfig, generator: torch.Generator) -> DataLoader:
    return DataLoader(
        dataset,
        batch_size=config.batch_size,
        shuffle=True,
        generator=generator,
        num_workers=0,
        drop_last=False,
    )


def _write_metrics(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / METRICS_NAME).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def pretrain_base(
    manifest_path: Path | str, config: ToyDiffusionConfig, out_dir: Path | str
) -> Path:
    """Train the unconditional denoiser on train-split satellite tiles.

    Saves base.pt (weights + config) and metrics.json (per-epoch mean
    loss). Zero epochs is allowed: the saved artifact is the untrained
    initialization. Raises DataError on an empty split.
    """
    out_dir = Path(out_dir)
    dataset = SatDataset(manifest_path, split="train", image_size=config.image_size)
    if len(dataset) == 0:
        raise DataError(f"empty training split in {manifest_path}")

    torch.manual_seed(config.seed)
    model = TinyUNet(base_channels=config.base_channels)
    diffusion = GaussianDiffusion(config.timesteps)
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.learning_rate)
    generator = torch.Generator().manual_seed(config.seed)

    epoch_losses: list[float] = []
    for _ in range(config.epochs):
        losses = []
        for x0 in _loader(dataset, config, generator):
            loss = diffusion.loss(model, x0, generator, offset_noise=config.offset_noise)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        epoch_losses.append(sum(losses) / len(losses))

    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = out_dir / BASE_CHECKPOINT
    torch.save(
        {"model": model.state_dict(), "config": config.to_json(), "kind": "base"},
        checkpoint,
    )
    _write_metrics(
        out_dir,
        {
            "kind": "base",
            "config": config.to_json(),
            "train_images": len(dataset),
            "epoch_loss": epoch_losses,
            "frozen_digest": state_digest(model),
        },
    )
    return checkpoint


def load_base(checkpoint: Path | str) -> tuple[TinyUNet, ToyDiffusionConfig]:
    payload = torch.load(checkpoint, map_location="cpu", weights_only=True)
    config = ToyDiffusionConfig(**payload["config"])
    model = TinyUNet(base_channels=config.base_channels)
    model.load_state_dict(payload["model"])
    return model, config


def attach_controlnet(base: TinyUNet) -> ControlledUNet:
    """Freeze the denoiser and wrap its encoder blocks for conditioning."""
    base.eval()
    return ControlledUNet(base)


def train_controlnet(
    network: ControlledUNet,
    manifest_path: Path | str,
    config: ToyDiffusionConfig,
    out_dir: Path | str,
) -> dict:
    """Train the copies and zero convolutions on (map, sat) train pairs.

    Returns the metrics payload; the frozen digest is asserted unchanged
    and both values are recorded in metrics.json for audit.
    """
    out_dir = Path(out_dir)
    dataset = PairDataset(manifest_path, split="train", image_size=config.image_size)
    if len(dataset) == 0:
        raise DataError(f"empty training split in {manifest_path}")

    torch.manual_seed(config.seed)
    diffusion = GaussianDiffusion(config.timesteps)
    optimizer = torch.optim.AdamW(network.trainable_parameters(), lr=config.learning_rate)
    generator = torch.Generator().manual_seed(config.seed)

    digest_before = state_digest(network.base)
    epoch_losses: list[float] = []
    for _ in range(config.epochs):
        losses = []
        for cond, x0 in _loader(dataset, config, generator):
            loss = diffusion.loss(
                network, x0, generator, cond=cond, offset_noise=config.offset_noise
            )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        epoch_losses.append(sum(losses) / len(losses))
    digest_after = state_digest(network.base)
    assert digest_after == digest_before, "frozen parameters moved during training"

    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "blocks": network.blocks.state_dict(),
            "base": network.base.state_dict(),
            "config": config.to_json(),
            "kind": "controlnet",
        },
        out_dir / CONTROL_CHECKPOINT,
    )
    max_zout = max(
        block.zout.weight.detach().abs().max().item() for block in network.blocks
    )
    metrics = {
        "kind": "controlnet",
        "config": config.to_json(),
        "train_pairs": len(dataset),
        "epoch_loss": epoch_losses,
        "frozen_digest_before": digest_before,
        "frozen_digest_after": digest_after,
        "frozen_unchanged": digest_after == digest_before,
        "max_abs_zout_weight": max_zout,
    }
    _write_metrics(out_dir, metrics)
    return metrics


def load_controlnet(checkpoint: Path | str) -> tuple[ControlledUNet, ToyDiffusionConfig]:
    payload = torch.load(checkpoint, map_location="cpu", weights_only=True)
    config = ToyDiffusionConfig(**payload["config"])
    base = TinyUNet(base_channels=config.base_channels)
    base.load_state_dict(payload["base"])
    network = attach_controlnet(base)
    network.blocks.load_state_dict(payload["blocks"])
    return network, config


@torch.no_grad()
def evaluate_loss(
    model,
    manifest_path: Path | str,
    config: ToyDiffusionConfig,
    split: str = "test",
    conditional: bool = True,
    seed: int = 1234,
) -> float:
    """Mean epsilon-prediction loss over a split, with a fixed evaluation
    noise stream so conditional and unconditional runs are comparable."""
    dataset = PairDataset(manifest_path, split=split, image_size=config.image_size)
    if len(dataset) == 0:
        raise DataError(f"empty {split} split in {manifest_path}")
    diffusion = GaussianDiffusion(config.timesteps)
    generator = torch.Generator().manual_seed(seed)
    loader = DataLoader(dataset, batch_size=config.batch_size, shuffle=False)
    total, count = 0.0, 0
    for cond, x0 in loader:
        loss = diffusion.loss(model, x0, generator, cond=cond if conditional else None)
        total += loss.item() * x0.shape[0]
        count += x0.shape[0]
    return total / count


def sample(
    network,
    map_tile: torch.Tensor,
    steps: int = 50,
    seed: int = 0,
    config: ToyDiffusionConfig | None = None,
    batch: int = 1,
    guidance_scale: float = 1.0,
) -> torch.Tensor:
    """Generate images conditioned on one map tile.

    map_tile is (3, H, W) in [-1, 1]; returns uint8 (batch, H, W, 3).
    Deterministic for a fixed seed; steps must not exceed the schedule.
    """
    config = config or ToyDiffusionConfig()
    diffusion = GaussianDiffusion(config.timesteps)
    generator = torch.Generator().manual_seed(seed)
    cond = map_tile[None].expand(batch, -1, -1, -1)
    shape = (batch, 3, map_tile.shape[-2], map_tile.shape[-1])
    images = diffusion.sample(
        network, shape, steps, generator, cond=cond, guidance_scale=guidance_scale
    )
    return to_uint8(images)
