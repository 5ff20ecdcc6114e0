"""Small CLI: pretrain the base, train the conditioned copy, sample."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .config import ConfigError, ToyDiffusionConfig
from .data import DataError, load_image_tensor
from .training import load_controlnet, pretrain_base, sample, train_controlnet, load_base, attach_controlnet


def _config_from_args(args) -> ToyDiffusionConfig:
    return ToyDiffusionConfig(
        image_size=args.image_size,
        timesteps=args.timesteps,
        inference_steps=args.steps,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="controlnet-toy", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--image-size", type=int, default=64)
        p.add_argument("--timesteps", type=int, default=200)
        p.add_argument("--steps", type=int, default=50)
        p.add_argument("--lr", type=float, default=1e-5)
        p.add_argument("--epochs", type=int, default=20)
        p.add_argument("--batch-size", type=int, default=32)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("pretrain", help="train and freeze the base denoiser")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    add_common(p)

    p = sub.add_parser("train", help="train the conditioned copies")
    p.add_argument("--manifest", required=True)
    p.add_argument("--base", required=True, help="base checkpoint from pretrain")
    p.add_argument("--out", required=True)
    add_common(p)

    p = sub.add_parser("sample", help="generate images conditioned on a map tile")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--map", required=True, help="map tile image")
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    try:
        if args.command == "pretrain":
            path = pretrain_base(args.manifest, _config_from_args(args), args.out)
            print(f"base checkpoint: {path}")
        elif args.command == "train":
            base, _ = load_base(args.base)
            network = attach_controlnet(base)
            metrics = train_controlnet(network, args.manifest, _config_from_args(args), args.out)
            print(
                f"trained {metrics['config']['epochs']} epochs, "
                f"final loss {metrics['epoch_loss'][-1]:.4f}, "
                f"frozen unchanged: {metrics['frozen_unchanged']}"
            )
        else:
            network, config = load_controlnet(args.checkpoint)
            tile = load_image_tensor(Path(args.map), config.image_size)
            images = sample(network, tile, steps=args.steps, seed=args.seed, config=config)
            Image.fromarray(np.asarray(images[0])).save(args.out)
            print(f"wrote {args.out}")
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
