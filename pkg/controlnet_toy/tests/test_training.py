from __future__ import annotations

import json

import pytest
import torch

from controlnet_toy import (
    DataError,
    ToyDiffusionConfig,
    attach_controlnet,
    evaluate_loss,
    load_base,
    load_controlnet,
    pretrain_base,
    sample,
    state_digest,
    train_controlnet,
)
from controlnet_toy.diffusion import GaussianDiffusion
from controlnet_toy.data import PairDataset
from controlnet_toy.training import METRICS_NAME

QUICK = dict(image_size=64, timesteps=200, batch_size=16, learning_rate=2e-4)


def test_pretrain_loss_decreases(small_manifest, tmp_path):
    config = ToyDiffusionConfig(epochs=8, seed=1, **QUICK)
    checkpoint = pretrain_base(small_manifest, config, tmp_path / "base")
    metrics = json.loads((tmp_path / "base" / METRICS_NAME).read_text())
    assert len(metrics["epoch_loss"]) == 8
    assert metrics["epoch_loss"][-1] < metrics["epoch_loss"][0]
    model, loaded_config = load_base(checkpoint)
    assert loaded_config == config
    assert state_digest(model) == metrics["frozen_digest"]


def test_zero_epochs_still_saves_loadable_artifact(small_manifest, tmp_path):
    config = ToyDiffusionConfig(epochs=0, seed=1, **QUICK)
    checkpoint = pretrain_base(small_manifest, config, tmp_path / "base0")
    metrics = json.loads((tmp_path / "base0" / METRICS_NAME).read_text())
    assert metrics["epoch_loss"] == []
    model, _ = load_base(checkpoint)
    out = model(torch.randn(1, 3, 64, 64), torch.zeros(1, dtype=torch.long))
    assert out.shape == (1, 3, 64, 64)


def test_empty_split_is_an_error(tmp_path):
    manifest = tmp_path / "empty.jsonl"
    manifest.write_text("")
    with pytest.raises(DataError, match="empty training split"):
        pretrain_base(manifest, ToyDiffusionConfig(epochs=1), tmp_path / "x")


def test_corrupt_image_error_names_path(small_manifest, tmp_path):
    import shutil

    root = tmp_path / "copy"
    shutil.copytree(small_manifest.parent, root)
    manifest = root / small_manifest.name
    victim_rel = PairDataset(manifest, "train", 64).entries[0].sat_path
    victim = root / victim_rel
    victim.write_bytes(victim.read_bytes()[:50])
    with pytest.raises(DataError, match=str(victim)):
        pretrain_base(manifest, ToyDiffusionConfig(epochs=1, **QUICK), tmp_path / "x")


def test_pretrain_is_bit_deterministic(small_manifest, tmp_path):
    config = ToyDiffusionConfig(epochs=2, seed=77, **QUICK)
    pretrain_base(small_manifest, config, tmp_path / "a")
    pretrain_base(small_manifest, config, tmp_path / "b")
    loss_a = json.loads((tmp_path / "a" / METRICS_NAME).read_text())["epoch_loss"]
    loss_b = json.loads((tmp_path / "b" / METRICS_NAME).read_text())["epoch_loss"]
    assert loss_a == loss_b
    model_a, _ = load_base(tmp_path / "a" / "base.pt")
    model_b, _ = load_base(tmp_path / "b" / "base.pt")
    assert state_digest(model_a) == state_digest(model_b)


def test_single_step_wakes_zout(small_manifest, tmp_path):
    config = ToyDiffusionConfig(epochs=0, seed=3, **QUICK)
    checkpoint = pretrain_base(small_manifest, config, tmp_path / "base")
    base, _ = load_base(checkpoint)
    network = attach_controlnet(base)
    assert all(z.weight.abs().max().item() == 0.0 for z in network.zero_convs())

    dataset = PairDataset(small_manifest, "train", config.image_size)
    cond = torch.stack([dataset[i][0] for i in range(4)])
    x0 = torch.stack([dataset[i][1] for i in range(4)])
    diffusion = GaussianDiffusion(config.timesteps)
    optimizer = torch.optim.AdamW(network.trainable_parameters(), lr=1e-3)
    loss = diffusion.loss(network, x0, torch.Generator().manual_seed(0), cond=cond)
    loss.backward()
    optimizer.step()
    max_zout = max(block.zout.weight.abs().max().item() for block in network.blocks)
    assert max_zout > 0.0


def test_train_controlnet_freezes_base_and_saves(small_manifest, tmp_path):
    config = ToyDiffusionConfig(epochs=2, seed=5, **QUICK)
    base, _ = load_base(pretrain_base(small_manifest, config, tmp_path / "base"))
    network = attach_controlnet(base)
    metrics = train_controlnet(network, small_manifest, config, tmp_path / "ctrl")
    assert metrics["frozen_unchanged"] is True
    assert metrics["frozen_digest_before"] == metrics["frozen_digest_after"]
    assert metrics["max_abs_zout_weight"] > 0.0
    assert len(metrics["epoch_loss"]) == 2

    reloaded, loaded_config = load_controlnet(tmp_path / "ctrl" / "controlnet.pt")
    assert loaded_config == config
    x = torch.randn(1, 3, 64, 64)
    t = torch.zeros(1, dtype=torch.long)
    c = torch.randn(1, 3, 64, 64)
    a = network(x, t, c)
    b = reloaded(x, t, c)
    assert torch.allclose(a, b)


def test_sample_shapes_determinism_and_steps_guard(small_manifest, tmp_path):
    config = ToyDiffusionConfig(epochs=0, seed=3, **QUICK)
    base, _ = load_base(pretrain_base(small_manifest, config, tmp_path / "base"))
    network = attach_controlnet(base)
    tile = PairDataset(small_manifest, "train", config.image_size)[0][0]

    a = sample(network, tile, steps=10, seed=4, config=config, batch=2)
    b = sample(network, tile, steps=10, seed=4, config=config, batch=2)
    c = sample(network, tile, steps=10, seed=5, config=config, batch=2)
    assert a.shape == (2, 64, 64, 3) and a.dtype == torch.uint8
    assert torch.equal(a, b)
    assert not torch.equal(a, c)

    from controlnet_toy import ConfigError

    with pytest.raises(ConfigError):
        sample(network, tile, steps=config.timesteps + 1, seed=0, config=config)


def test_evaluate_loss_runs_both_modes(small_manifest, tmp_path):
    config = ToyDiffusionConfig(epochs=1, seed=5, **QUICK)
    base, _ = load_base(pretrain_base(small_manifest, config, tmp_path / "base"))
    network = attach_controlnet(base)
    cond_loss = evaluate_loss(network, small_manifest, config, conditional=True)
    uncond_loss = evaluate_loss(network, small_manifest, config, conditional=False)
    # zero convs untouched: conditioned net IS the frozen net right now
    assert cond_loss == pytest.approx(uncond_loss)
