"""Checkpoint directories: one NTF1 file per tensor plus a manifest and config."""

from __future__ import annotations

import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import EdgeMaeConfig, MtNetConfig, apply_overrides, config_dict, read_kv, write_kv
from .ntf import read_ntf, write_ntf

MANIFEST = "manifest.tsv"
CONFIG = "config.txt"


class CheckpointError(RuntimeError):
    pass


@dataclass
class ParamStore:
    """Named float32 tensors with trainable flags."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    trainable: dict[str, bool] = field(default_factory=dict)

    @classmethod
    def from_module(cls, module: torch.nn.Module) -> "ParamStore":
        store = cls()
        for name, p in module.named_parameters():
            store.tensors[name] = p.detach().to(torch.float32).cpu().numpy().copy()
            store.trainable[name] = bool(p.requires_grad)
        return store

    def apply_to(self, module: torch.nn.Module, strict: bool = True, set_flags: bool = True) -> None:
        params = dict(module.named_parameters())
        if strict:
            missing = sorted(set(params) - set(self.tensors))
            if missing:
                raise CheckpointError(f"checkpoint lacks tensor {missing[0]!r}")
        for name, arr in self.tensors.items():
            if name not in params:
                if strict:
                    raise CheckpointError(f"unexpected tensor {name!r} in checkpoint")
                continue
            p = params[name]
            if tuple(p.shape) != tuple(arr.shape):
                raise CheckpointError(
                    f"shape mismatch for tensor {name!r}: checkpoint {tuple(arr.shape)} vs model {tuple(p.shape)}")
            with torch.no_grad():
                p.copy_(torch.from_numpy(arr).to(p.dtype))
            if set_flags:
                p.requires_grad_(self.trainable.get(name, True))

    def subset(self, prefix: str) -> "ParamStore":
        """Tensors under ``prefix.`` with the prefix stripped."""
        cut = len(prefix) + 1
        return ParamStore({k[cut:]: v for k, v in self.tensors.items() if k.startswith(prefix + ".")},
                          {k[cut:]: v for k, v in self.trainable.items() if k.startswith(prefix + ".")})


def save_checkpoint(store: ParamStore | torch.nn.Module, directory, config: dict | None = None) -> Path:
    if isinstance(store, torch.nn.Module):
        store = ParamStore.from_module(store)
    d = Path(directory)
    if (d / "tensors").exists():
        shutil.rmtree(d / "tensors")
    (d / "tensors").mkdir(parents=True, exist_ok=True)
    lines = []
    for name, arr in store.tensors.items():
        rel = f"tensors/{name}.ntf"
        write_ntf(d / rel, arr)
        shape = ",".join(str(s) for s in arr.shape)
        lines.append(f"{name}\t{rel}\t{shape}\t{int(store.trainable[name])}")
    (d / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if config is not None:
        write_kv(d / CONFIG, config)
    return d


def load_checkpoint(directory) -> ParamStore:
    d = Path(directory)
    if not (d / MANIFEST).is_file():
        raise CheckpointError(f"no checkpoint manifest at {d / MANIFEST}")
    store = ParamStore()
    for lineno, line in enumerate((d / MANIFEST).read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        try:
            name, rel, shape, flag = line.split("\t")
        except ValueError as exc:
            raise CheckpointError(f"{d / MANIFEST}:{lineno}: malformed line") from exc
        arr = read_ntf(d / rel)
        want = tuple(int(s) for s in shape.split(",") if s)
        if arr.shape != want:
            raise CheckpointError(f"tensor {name!r}: file shape {arr.shape} disagrees with manifest {want}")
        store.tensors[name] = arr
        store.trainable[name] = flag == "1"
    return store


def checkpoint_config(enc_cfg: EdgeMaeConfig, mt_cfg: MtNetConfig | None = None, **extra) -> dict:
    out = {"kind": "mtnet" if mt_cfg else "edge-mae", "encoder_hash": enc_cfg.arch_hash()}
    out.update({f"enc.{k}": v for k, v in config_dict(enc_cfg).items()})
    if mt_cfg is not None:
        out.update({f"mt.{k}": v for k, v in config_dict(mt_cfg).items()})
    out.update(extra)
    return out


def read_checkpoint_config(directory) -> tuple[str, EdgeMaeConfig, MtNetConfig | None, dict]:
    path = Path(directory) / CONFIG
    if not path.is_file():
        raise CheckpointError(f"missing checkpoint config {path}")
    kv = read_kv(path)
    enc = apply_overrides(EdgeMaeConfig(), {k[4:]: v for k, v in kv.items() if k.startswith("enc.")})
    mt = None
    if kv.get("kind") == "mtnet":
        mt = apply_overrides(MtNetConfig(), {k[3:]: v for k, v in kv.items() if k.startswith("mt.")})
    if kv.get("encoder_hash") not in (None, enc.arch_hash()):
        raise CheckpointError(f"{path}: encoder hash {kv['encoder_hash']} does not match its encoder config")
    return kv.get("kind", ""), enc, mt, kv
