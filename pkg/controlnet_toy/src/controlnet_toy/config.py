"""Training and inference configuration."""

from __future__ import annotations

from dataclasses import asdict, dataclass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ToyDiffusionConfig:
    """Knobs for the toy denoiser and its conditioning trainer.

    learning_rate defaults to the conservative full-scale value (1e-5);
    toy runs that should converge in minutes override it upward (tests
    use 2e-4). inference_steps must not exceed timesteps.
    """

    image_size: int = 64
    timesteps: int = 200
    inference_steps: int = 50
    learning_rate: float = 1e-5
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    base_channels: int = 16
    # Extra per-channel constant noise during training; teaches the model
    # to denoise the global color component, which plain iid noise barely
    # exercises at toy scale.
    offset_noise: float = 0.1

    def __post_init__(self) -> None:
        if self.inference_steps > self.timesteps:
            raise ConfigError(
                f"inference_steps {self.inference_steps} exceeds timesteps {self.timesteps}"
            )
        if self.inference_steps < 1 or self.timesteps < 1:
            raise ConfigError("timesteps and inference_steps must be >= 1")
        if self.image_size % 4 != 0:
            raise ConfigError("image_size must be divisible by 4 (two downsamplings)")
        if self.base_channels < 2:
            raise ConfigError("base_channels must be >= 2")

    def to_json(self) -> dict:
        return asdict(self)
