import math

import numpy as np
import pytest
import torch

from edgemae.checkpoint import ParamStore
from edgemae.config import ConfigError, EdgeMaeConfig, MtNetConfig, micro_configs
from edgemae.phantom import DatasetManifest, derive_modalities, generate_dataset, render_base_anatomy
from edgemae.rng import Rng
from edgemae.train import (PretrainData, augment, evaluate_set, finetune_run, paired_arrays, pretrain_run,
                           stage_for, step_lr, synthesize)

ENC2 = EdgeMaeConfig(image_size=16, patch_size=8, enc_dim=8, enc_layers=2, enc_heads=2, dec_dim=8,
                     dec_layers=2, dec_shared_layers=1, dec_heads=2, batch_size=4, epochs=4, stage_switch_epoch=2)


def _pairs(n=4, size=16):
    a, b = zip(*(derive_modalities(render_base_anatomy(i, size)) for i in range(n)))
    return np.stack([x.pixels for x in a]), np.stack([x.pixels for x in b])


@pytest.fixture(scope="module")
def tiny_mae():
    torch.use_deterministic_algorithms(True)
    a, b = _pairs()
    return pretrain_run(ENC2, PretrainData.from_images(list(a) + list(b)), seed=1)


def test_step_schedule():
    assert [step_lr(1.0, e, 4) for e in range(4)] == [1.0, 1.0, 0.1, 0.1]
    assert [stage_for(e, 2) for e in range(4)] == [1, 1, 2, 2]


def test_augment_bounds_and_determinism():
    x = np.random.default_rng(0).random((5, 8, 8)).astype(np.float32)
    a1, a2 = augment(x, Rng(3)), augment(x, Rng(3))
    assert np.array_equal(a1, a2)
    assert a1.min() >= 0 and a1.max() <= 1 and a1.dtype == np.float32
    # the jitter is an affine map per sample
    for src, out in zip(x, a1):
        inside = (out > 0) & (out < 1)
        k, c = np.polyfit(src[inside], out[inside], 1)
        assert 0.9 - 1e-4 <= k <= 1.1 + 1e-4 and -0.1 - 1e-4 <= c <= 0.1 + 1e-4


def test_pretrain_losses_finite_and_reproducible():
    a, b = _pairs()
    data = PretrainData.from_images(list(a) + list(b))
    losses = []
    m1 = pretrain_run(ENC2, data, seed=2, callback=lambda e, loss, m: losses.append(loss))
    m2 = pretrain_run(ENC2, data, seed=2)
    assert len(losses) == ENC2.epochs and all(math.isfinite(v) for v in losses)
    s1, s2 = ParamStore.from_module(m1), ParamStore.from_module(m2)
    assert all(np.array_equal(s1.tensors[k], s2.tensors[k]) for k in s1.tensors)


def test_finetune_keeps_frozen_tensors_bit_identical(tiny_mae):
    a, b = _pairs()
    cfg = MtNetConfig(base_channels=8, head_dim=8, freeze_layers=1, epochs=2, batch_size=2)
    before = ParamStore.from_module(tiny_mae.encoder)
    synth = finetune_run(cfg, tiny_mae, a, b, seed=0)
    after = ParamStore.from_module(synth.encoder)
    for name in before.tensors:
        frozen = name.startswith(("patch_embed.", "blocks.0."))
        if frozen:
            assert np.array_equal(before.tensors[name], after.tensors[name]), name
        assert after.trainable[name] == (not frozen)
    assert not np.array_equal(before.tensors["blocks.1.mlp.fc1.weight"], after.tensors["blocks.1.mlp.fc1.weight"])


def test_finetune_without_augment_is_deterministic(tiny_mae):
    a, b = _pairs()
    cfg = MtNetConfig(base_channels=8, head_dim=8, epochs=2, batch_size=2, augment=False)
    s1 = ParamStore.from_module(finetune_run(cfg, tiny_mae, a, b, seed=5))
    s2 = ParamStore.from_module(finetune_run(cfg, tiny_mae, a, b, seed=5))
    assert all(np.array_equal(s1.tensors[k], s2.tensors[k]) for k in s1.tensors)


def test_finetune_rejects_empty_pairs(tiny_mae):
    with pytest.raises(ConfigError, match="paired"):
        finetune_run(MtNetConfig(base_channels=8, head_dim=8), tiny_mae, np.zeros((0, 16, 16)), np.zeros((0,)))


def test_synthesize_shape(tiny_mae):
    a, _ = _pairs(3)
    cfg = MtNetConfig(base_channels=8, head_dim=8, epochs=1, batch_size=2)
    out = synthesize(finetune_run(cfg, tiny_mae, a, a), a, batch=2)
    assert out.shape == a.shape and out.dtype == np.float32


def test_evaluate_marks_missing_images(tmp_path, tiny_mae):
    manifest = generate_dataset(3, 2, 3, 16, tmp_path)
    cfg = MtNetConfig(base_channels=8, head_dim=8, epochs=1, batch_size=2)
    _, src, tgt = paired_arrays(manifest, "A2B")
    synth = finetune_run(cfg, tiny_mae, src, tgt)
    test_ids = manifest.ids("test")
    (tmp_path / manifest.entry(test_ids[1], "B").path).unlink()
    report, failed = evaluate_set(synth, DatasetManifest.read(tmp_path), "A2B", "sobel")
    assert failed == [test_ids[1]]
    bad = [r for r in report.rows if r.id == test_ids[1]][0]
    assert bad.task == "error" and math.isnan(bad.psnr_db)
    good = [r for r in report.rows if r.id != test_ids[1]]
    assert all(math.isfinite(r.psnr_db) and r.edge_psnr_db is not None for r in good)


def test_paired_arrays_direction(tmp_path):
    manifest = generate_dataset(3, 2, 1, 16, tmp_path)
    ids, src, tgt = paired_arrays(manifest, "B2A")
    assert src.shape == (2, 16, 16)
    assert np.array_equal(src[0], manifest.load(ids[0], "B").pixels)
    assert np.array_equal(tgt[0], manifest.load(ids[0], "A").pixels)


def test_micro_configs_consistent():
    enc, mt = micro_configs()
    assert enc.grid == 2 and mt.resolved_freeze(enc) == 0
