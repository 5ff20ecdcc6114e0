"""Denoising diffusion machinery: forward noising, epsilon loss, sampling.

Linear beta schedule; the network predicts the noise added to the image.
Sampling runs ancestral steps over an evenly strided subsequence of the
training timesteps (50 by default), seeded through an explicit generator
so a fixed seed reproduces an image bit-for-bit while different seeds
give diverse samples.
"""

from __future__ import annotations

import torch

from .config import ConfigError


class GaussianDiffusion:
    def __init__(
        self,
        timesteps: int = 200,
        beta_start: float | None = None,
        beta_end: float | None = None,
    ) -> None:
        # The classic linear range (1e-4, 0.02) is calibrated for 1000
        # steps; scale it by 1000/T so shorter schedules still end near
        # zero signal. Otherwise x_T keeps ~sqrt(alpha_bar_T) of the
        # image during training while sampling starts from pure noise,
        # and generated samples collapse toward neutral gray.
        scale = 1000.0 / timesteps
        beta_start = beta_start if beta_start is not None else 1e-4 * scale
        beta_end = beta_end if beta_end is not None else min(0.02 * scale, 0.35)
        self.timesteps = timesteps
        self.betas = torch.linspace(beta_start, beta_end, timesteps, dtype=torch.float32)
        alphas = 1.0 - self.betas
        self.alphas_cumprod = torch.cumprod(alphas, dim=0)

    def q_sample(self, x0: torch.Tensor, t: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
        """Noise x0 to timestep t: sqrt(a_t) x0 + sqrt(1 - a_t) eps."""
        acp = self.alphas_cumprod[t][:, None, None, None]
        return acp.sqrt() * x0 + (1.0 - acp).sqrt() * noise

    def loss(
        self,
        model,
        x0: torch.Tensor,
        generator: torch.Generator,
        cond: torch.Tensor | None = None,
        offset_noise: float = 0.0,
    ) -> torch.Tensor:
        """Epsilon-prediction MSE on a random timestep per sample.

        offset_noise adds a per-channel constant component to the noise
        being predicted, strengthening the training signal for global
        color; plain iid noise concentrates it in a single Fourier bin.
        """
        batch = x0.shape[0]
        t = torch.randint(0, self.timesteps, (batch,), generator=generator)
        noise = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
        if offset_noise > 0.0:
            noise = noise + offset_noise * torch.randn(
                (batch, x0.shape[1], 1, 1), generator=generator, dtype=x0.dtype
            )
        x_t = self.q_sample(x0, t, noise)
        pred = model(x_t, t) if cond is None else model(x_t, t, cond)
        return torch.nn.functional.mse_loss(pred, noise)

    def sample_timesteps(self, steps: int) -> list[int]:
        """Evenly strided descending subsequence of the schedule."""
        if steps > self.timesteps:
            raise ConfigError(f"steps {steps} exceeds timesteps {self.timesteps}")
        if steps < 1:
            raise ConfigError("steps must be >= 1")
        grid = torch.linspace(0, self.timesteps - 1, steps).round().long()
        return sorted(set(grid.tolist()), reverse=True)

    @torch.no_grad()
    def sample(
        self,
        model,
        shape: tuple[int, ...],
        steps: int,
        generator: torch.Generator,
        cond: torch.Tensor | None = None,
        eta: float = 1.0,
        guidance_scale: float = 1.0,
    ) -> torch.Tensor:
        """Ancestral sampling (eta=1) from pure noise; returns tensors in [-1, 1].

        guidance_scale > 1 extrapolates the conditional prediction away
        from the model's unconditional one (the frozen branch provides it
        for free), the usual way conditioned denoisers are sampled.
        """
        ts = self.sample_timesteps(steps)
        x = torch.randn(shape, generator=generator)
        for i, t in enumerate(ts):
            t_prev = ts[i + 1] if i + 1 < len(ts) else None
            acp_t = self.alphas_cumprod[t]
            acp_prev = self.alphas_cumprod[t_prev] if t_prev is not None else torch.tensor(1.0)
            t_batch = torch.full((shape[0],), t, dtype=torch.long)
            if cond is None:
                eps = model(x, t_batch)
            elif guidance_scale == 1.0:
                eps = model(x, t_batch, cond)
            else:
                eps_cond = model(x, t_batch, cond)
                eps_uncond = model(x, t_batch, None)
                eps = eps_uncond + guidance_scale * (eps_cond - eps_uncond)
            x0_pred = ((x - (1.0 - acp_t).sqrt() * eps) / acp_t.sqrt()).clamp(-1.0, 1.0)
            sigma = (
                eta
                * ((1.0 - acp_prev) / (1.0 - acp_t)).sqrt()
                * (1.0 - acp_t / acp_prev).sqrt()
            )
            direction = (1.0 - acp_prev - sigma**2).clamp(min=0.0).sqrt() * eps
            x = acp_prev.sqrt() * x0_pred + direction
            if t_prev is not None and eta > 0.0:
                x = x + sigma * torch.randn(shape, generator=generator)
        return x


def to_uint8(images: torch.Tensor) -> torch.Tensor:
    """[-1, 1] tensors -> uint8 (B, H, W, 3)."""
    arr = ((images.clamp(-1.0, 1.0) + 1.0) * 127.5).round().to(torch.uint8)
    return arr.permute(0, 2, 3, 1)
