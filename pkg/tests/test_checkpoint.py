import numpy as np
import pytest
import torch

from edgemae.checkpoint import (CheckpointError, ParamStore, checkpoint_config, load_checkpoint,
                                read_checkpoint_config, save_checkpoint)
from edgemae.config import EdgeMaeConfig, MtNetConfig, micro_configs
from edgemae.edge_mae import EdgeMAE
from edgemae.mtnet import Synthesizer


def _mae(seed=0):
    torch.manual_seed(seed)
    return EdgeMAE(micro_configs()[0])


def test_roundtrip_restores_every_tensor(tmp_path):
    src, dst = _mae(0), _mae(1)
    src.encoder.freeze(1)
    save_checkpoint(src, tmp_path / "ck", checkpoint_config(src.cfg))
    load_checkpoint(tmp_path / "ck").apply_to(dst)
    for (n, a), (_, b) in zip(src.named_parameters(), dst.named_parameters()):
        assert torch.equal(a, b), n
        assert a.requires_grad == b.requires_grad, n


def test_manifest_layout(tmp_path):
    m = _mae()
    save_checkpoint(m, tmp_path)
    lines = (tmp_path / "manifest.tsv").read_text().splitlines()
    name, rel, shape, flag = lines[0].split("\t")
    assert rel == f"tensors/{name}.ntf"
    assert tuple(int(s) for s in shape.split(",")) == tuple(dict(m.named_parameters())[name].shape)
    assert flag in ("0", "1")
    assert len(lines) == len(list(m.parameters()))


def test_save_is_byte_stable(tmp_path):
    m = _mae()
    save_checkpoint(m, tmp_path / "a")
    save_checkpoint(m, tmp_path / "b")
    for f in sorted((tmp_path / "a").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


def test_shape_mismatch_names_tensor(tmp_path):
    save_checkpoint(_mae(), tmp_path)
    other = EdgeMAE(EdgeMaeConfig(image_size=16, patch_size=8, enc_dim=16, enc_layers=1, enc_heads=2,
                                  dec_dim=8, dec_layers=2, dec_shared_layers=1, dec_heads=2))
    with pytest.raises(CheckpointError, match="shape mismatch for tensor .mask_token."):
        load_checkpoint(tmp_path).apply_to(other)


def test_missing_tensor_rejected(tmp_path):
    store = ParamStore.from_module(_mae())
    del store.tensors["mask_token"]
    with pytest.raises(CheckpointError, match="mask_token"):
        store.apply_to(_mae())


def test_manifest_shape_disagreement(tmp_path):
    save_checkpoint(_mae(), tmp_path)
    text = (tmp_path / "manifest.tsv").read_text().replace("\t1,1,8\t", "\t1,8\t", 1)
    (tmp_path / "manifest.tsv").write_text(text)
    with pytest.raises(CheckpointError, match="mask_token"):
        load_checkpoint(tmp_path)


def test_missing_manifest(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path)


def test_subset_strips_prefix():
    enc_cfg, mt_cfg = micro_configs()
    store = ParamStore.from_module(Synthesizer(enc_cfg, mt_cfg))
    enc = store.subset("encoder")
    assert "patch_embed.weight" in enc.tensors
    assert not any(k.startswith("mtnet") for k in enc.tensors)


def test_config_roundtrip_and_hash(tmp_path):
    enc_cfg, mt_cfg = micro_configs()
    save_checkpoint(ParamStore(), tmp_path, checkpoint_config(enc_cfg, mt_cfg, seed=4))
    kind, enc, mt, kv = read_checkpoint_config(tmp_path)
    assert kind == "mtnet" and enc == enc_cfg and mt == mt_cfg and kv["seed"] == "4"
    text = (tmp_path / "config.txt").read_text().replace("enc.enc_dim = 8", "enc.enc_dim = 16")
    (tmp_path / "config.txt").write_text(text)
    with pytest.raises(CheckpointError, match="hash"):
        read_checkpoint_config(tmp_path)


def test_float32_storage(tmp_path):
    m = _mae().double()
    save_checkpoint(m, tmp_path)
    store = load_checkpoint(tmp_path)
    assert all(a.dtype == np.float32 for a in store.tensors.values())
    assert MtNetConfig().resolved_freeze(EdgeMaeConfig()) == 3
