"""The toy denoiser and its conditioned wrapper.

A small time-conditioned UNet predicts the noise added to an image. To
condition it on a map tile without touching the pretrained weights, each
encoder block F(.; theta) is wrapped: the block's parameters stay frozen,
a trainable copy theta_c (initialized equal to theta) processes the same
input plus a zero-convolution projection of the condition, and the copy's
output re-enters through a second zero convolution:

    y_c = F(x; theta) + zout(F(x + zin(c); theta_c))

Both zero convolutions are 1x1 with weight and bias starting at exactly
zero, so at initialization the wrapped network computes precisely what
the frozen network computes, for every input and condition. Gradients
still reach zout at the first step (its input is the copy's nonzero
activations), which is what lets the conditioned branch wake up.
"""

from __future__ import annotations

import copy
import hashlib
import math

import torch
import torch.nn.functional as F
from torch import nn


class ZeroConv(nn.Conv2d):
    """1x1 convolution initialized to exactly zero (weight and bias)."""

    def __init__(self, in_channels: int, out_channels: int) -> None:
        super().__init__(in_channels, out_channels, kernel_size=1)
        nn.init.zeros_(self.weight)
        nn.init.zeros_(self.bias)


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Classic transformer-style timestep embedding, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float32, device=t.device) / half
    )
    angles = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)


class ResBlock(nn.Module):
    """Norm-SiLU-Conv x2 with a timestep shift and residual skip.

    Normalization uses a single group (one mean/variance over all
    channels and pixels). Per-channel normalization would subtract each
    channel's mean and erase the feature map's global color offset at
    every block; at this tiny width that makes the denoiser practically
    DC-blind and samples collapse to gray.
    """

    def __init__(self, in_channels: int, out_channels: int, temb_dim: int) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.norm1 = nn.GroupNorm(1, in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.temb_proj = nn.Linear(temb_dim, out_channels)
        self.norm2 = nn.GroupNorm(1, out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.skip = (
            nn.Conv2d(in_channels, out_channels, 1)
            if in_channels != out_channels
            else nn.Identity()
        )

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class TinyUNet(nn.Module):
    """Epsilon-predicting UNet: three encoder stages, mid block, two
    decoder stages with skip connections."""

    def __init__(self, base_channels: int = 16, temb_dim: int = 32) -> None:
        super().__init__()
        c1, c2 = base_channels, base_channels * 2
        self.temb_dim = temb_dim
        self.time_mlp = nn.Sequential(
            nn.Linear(temb_dim, temb_dim * 4),
            nn.SiLU(),
            nn.Linear(temb_dim * 4, temb_dim * 4),
        )
        hidden = temb_dim * 4
        self.conv_in = nn.Conv2d(3, c1, 3, padding=1)
        self.enc1 = ResBlock(c1, c1, hidden)
        self.down1 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.enc2 = ResBlock(c2, c2, hidden)
        self.down2 = nn.Conv2d(c2, c2, 3, stride=2, padding=1)
        self.enc3 = ResBlock(c2, c2, hidden)
        self.mid = ResBlock(c2, c2, hidden)
        self.up2 = nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(c2, c2, 3, padding=1))
        self.dec2 = ResBlock(c2 + c2, c2, hidden)
        self.up1 = nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(c2, c1, 3, padding=1))
        self.dec1 = ResBlock(c1 + c1, c1, hidden)
        self.norm_out = nn.GroupNorm(1, c1)
        self.conv_out = nn.Conv2d(c1, 3, 3, padding=1)

    def encoder_blocks(self) -> list[ResBlock]:
        return [self.enc1, self.enc2, self.enc3, self.mid]

    def time_embedding(self, t: torch.Tensor) -> torch.Tensor:
        dtype = self.time_mlp[0].weight.dtype
        return self.time_mlp(sinusoidal_embedding(t, self.temb_dim).to(dtype))

    def forward_with_blocks(self, x: torch.Tensor, temb: torch.Tensor, blocks) -> torch.Tensor:
        b1, b2, b3, bm = blocks
        h1 = b1(self.conv_in(x), temb)
        h2 = b2(self.down1(h1), temb)
        h3 = b3(self.down2(h2), temb)
        m = bm(h3, temb)
        u2 = self.dec2(torch.cat([self.up2(m), h2], dim=1), temb)
        u1 = self.dec1(torch.cat([self.up1(u2), h1], dim=1), temb)
        return self.conv_out(F.silu(self.norm_out(u1)))

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        return self.forward_with_blocks(x, self.time_embedding(t), self.encoder_blocks())


class ControlledBlock(nn.Module):
    """One frozen block plus its trainable copy behind zero convolutions.

    The frozen block is held outside the module registry so its
    parameters stay owned (and counted) by the base network alone.
    """

    def __init__(self, frozen_block: ResBlock, cond_channels: int = 3) -> None:
        super().__init__()
        self._frozen_ref = (frozen_block,)
        self.copy = copy.deepcopy(frozen_block)
        for p in self.copy.parameters():
            p.requires_grad_(True)
        self.zin = ZeroConv(cond_channels, frozen_block.in_channels)
        self.zout = ZeroConv(frozen_block.out_channels, frozen_block.out_channels)

    @property
    def frozen(self) -> ResBlock:
        return self._frozen_ref[0]

    def forward(self, x: torch.Tensor, temb: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        y = self.frozen(x, temb)
        if cond.shape[-2:] != x.shape[-2:]:
            cond = F.interpolate(cond, size=x.shape[-2:], mode="nearest-exact")
        u = self.copy(x + self.zin(cond), temb)
        return y + self.zout(u)


class ControlledUNet(nn.Module):
    """TinyUNet with every encoder block (and the mid block) wrapped.

    forward(x, t, cond) runs the conditioned network; cond=None runs the
    frozen base exactly. Only the copies and zero convolutions train.
    """

    def __init__(self, base: TinyUNet, cond_channels: int = 3) -> None:
        super().__init__()
        self.base = base
        for p in self.base.parameters():
            p.requires_grad_(False)
        self.blocks = nn.ModuleList(
            ControlledBlock(b, cond_channels) for b in base.encoder_blocks()
        )

    def forward(self, x: torch.Tensor, t: torch.Tensor, cond: torch.Tensor | None = None) -> torch.Tensor:
        temb = self.base.time_embedding(t)
        if cond is None:
            return self.base.forward_with_blocks(x, temb, self.base.encoder_blocks())
        wrapped = [
            (lambda h, e, blk=blk: blk(h, e, cond)) for blk in self.blocks
        ]
        return self.base.forward_with_blocks(x, temb, wrapped)

    def frozen_forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        return self.forward(x, t, cond=None)

    def trainable_parameters(self):
        return self.blocks.parameters()

    def zero_convs(self) -> list[ZeroConv]:
        convs: list[ZeroConv] = []
        for block in self.blocks:
            convs.extend([block.zin, block.zout])
        return convs


def state_digest(module: nn.Module) -> str:
    """Version-independent sha256 over the module's parameters/buffers."""
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
