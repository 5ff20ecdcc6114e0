"""controlnet_toy: frozen denoiser, trainable copy, zero convolutions."""

from .config import ConfigError, ToyDiffusionConfig
from .data import DataError, PairDataset, SatDataset, read_manifest
from .diffusion import GaussianDiffusion, to_uint8
from .model import ControlledBlock, ControlledUNet, TinyUNet, ZeroConv, state_digest
from .training import (
    attach_controlnet,
    evaluate_loss,
    load_base,
    load_controlnet,
    pretrain_base,
    sample,
    train_controlnet,
)

__all__ = [
    "ConfigError",
    "ToyDiffusionConfig",
    "DataError",
    "PairDataset",
    "SatDataset",
    "read_manifest",
    "GaussianDiffusion",
    "to_uint8",
    "ControlledBlock",
    "ControlledUNet",
    "TinyUNet",
    "ZeroConv",
    "state_digest",
    "attach_controlnet",
    "evaluate_loss",
    "load_base",
    "load_controlnet",
    "pretrain_base",
    "sample",
    "train_controlnet",
]
