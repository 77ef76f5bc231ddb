"""Pretraining and fine-tuning loops, synthesis and set evaluation."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass

import numpy as np
import torch

from .checkpoint import (CheckpointError, checkpoint_config, load_checkpoint,
                         read_checkpoint_config, save_checkpoint)
from .config import ConfigError, EdgeMaeConfig, MtNetConfig
from .edge_mae import EdgeMAE, pretrain_loss
from .edges import DETECTORS, sobel_edge_map
from .metrics import MetricsReport, MetricsRow, finetune_loss, nmse, psnr, ssim_global
from .mtnet import Synthesizer
from .patches import compute_alpha, sample_mask
from .phantom import DatasetManifest
from .rng import Rng

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


def set_deterministic(threads: int = 1) -> None:
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(max(1, threads))


def step_lr(base: float, epoch: int, epochs: int) -> float:
    """Base rate for the first half of training, a tenth of it afterwards."""
    return base if epoch < epochs // 2 else base / 10.0


def stage_for(epoch: int, switch: int) -> int:
    return 1 if epoch < switch else 2


# --------------------------------------------------------------------------- pretraining

@dataclass
class PretrainData:
    images: np.ndarray  # (N, H, W) float32, every modality of every train id
    edges: np.ndarray   # Sobel targets, same shape

    @classmethod
    def from_images(cls, images) -> "PretrainData":
        images = np.asarray(images, dtype=np.float32)
        return cls(images, np.stack([sobel_edge_map(i) for i in images]).astype(np.float32))

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest) -> "PretrainData":
        imgs = manifest.load_all("train")
        if not imgs:
            raise ConfigError("pretraining needs a nonempty train split")
        return cls.from_images([i.pixels for i in imgs])


def make_batch_masks(n: int, cfg: EdgeMaeConfig, rng: Rng):
    masks = np.stack([sample_mask(cfg.grid, cfg.grid, cfg.mask_ratio, rng).mask for _ in range(n)])
    alpha = np.stack([compute_alpha(m) for m in masks])
    return masks.astype(bool), alpha


def pretrain_step(model: EdgeMAE, opt, x, edge, masks, alpha, stage: int, cfg: EdgeMaeConfig) -> float:
    mask_t = torch.from_numpy(masks)
    img_out, edge_out = model(x, mask_t.reshape(len(masks), -1))
    loss = pretrain_loss(img_out, edge_out, x, edge, torch.from_numpy(alpha), mask_t, stage,
                         cfg.lambda_imp, cfg.lambda_edge, cfg.patch_size)
    if not torch.isfinite(loss):
        raise TrainingError(f"non-finite pretraining loss {loss.item()} (stage {stage})")
    opt.zero_grad(set_to_none=True)
    loss.backward()
    opt.step()
    return loss.item()


def pretrain_epoch(data: PretrainData, model: EdgeMAE, opt, cfg: EdgeMaeConfig, epoch_index: int, rng: Rng) -> float:
    """One pass over shuffled single-modality images; returns the mean batch loss."""
    stage = stage_for(epoch_index, cfg.stage_switch_epoch)
    for group in opt.param_groups:
        group["lr"] = step_lr(cfg.lr, epoch_index, cfg.epochs)
    order = rng.permutation(len(data.images))
    losses = []
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        x = torch.from_numpy(data.images[idx]).unsqueeze(1)
        e = torch.from_numpy(data.edges[idx]).unsqueeze(1)
        masks, alpha = make_batch_masks(len(idx), cfg, rng)
        try:
            losses.append(pretrain_step(model, opt, x, e, masks, alpha, stage, cfg))
        except TrainingError as exc:
            raise TrainingError(f"epoch {epoch_index}, batch starting {start}: {exc}") from exc
    return float(np.mean(losses))


def make_adam(model: torch.nn.Module, lr: float):
    return torch.optim.Adam([p for p in model.parameters() if p.requires_grad], lr=lr,
                            betas=(0.9, 0.999), eps=1e-8)


def pretrain_run(cfg: EdgeMaeConfig, data: PretrainData, seed: int = 0, out_dir=None,
                 callback=None) -> EdgeMAE:
    torch.manual_seed(seed)
    model = EdgeMAE(cfg)
    model.init_output_bias(data.images.mean(), data.edges.mean())
    opt = make_adam(model, cfg.lr)
    rng = Rng(seed)
    for epoch in range(cfg.epochs):
        loss = pretrain_epoch(data, model, opt, cfg, epoch, rng)
        log.info("pretrain epoch %d/%d stage %d loss %.5f", epoch + 1, cfg.epochs,
                 stage_for(epoch, cfg.stage_switch_epoch), loss)
        if callback:
            callback(epoch, loss, model)
    if out_dir is not None:
        save_checkpoint(model, out_dir, checkpoint_config(cfg, seed=seed))
    return model


def load_edge_mae(directory) -> EdgeMAE:
    kind, enc_cfg, _, _ = read_checkpoint_config(directory)
    if kind != "edge-mae":
        raise CheckpointError(f"{directory} is a {kind!r} checkpoint, expected edge-mae")
    model = EdgeMAE(enc_cfg)
    load_checkpoint(directory).apply_to(model)
    return model


# --------------------------------------------------------------------------- fine-tuning

def augment(x: np.ndarray, rng: Rng) -> np.ndarray:
    """Per-sample contrast scale U(0.9, 1.1) and brightness offset U(-0.1, 0.1), clipped."""
    out = np.empty_like(x)
    for i in range(len(x)):
        scale = rng.uniform_range(0.9, 1.1)
        offset = rng.uniform_range(-0.1, 0.1)
        out[i] = np.clip(x[i] * np.float32(scale) + np.float32(offset), 0.0, 1.0)
    return out


def paired_arrays(manifest: DatasetManifest, direction: str, split: str = "train", paired_only: bool = True):
    src_mod, tgt_mod = ("A", "B") if direction == "A2B" else ("B", "A")
    ids = manifest.paired_ids(split) if paired_only else manifest.ids(split)
    src = np.stack([manifest.load(i, src_mod).pixels for i in ids]) if ids else np.zeros((0,))
    tgt = np.stack([manifest.load(i, tgt_mod).pixels for i in ids]) if ids else np.zeros((0,))
    return ids, src, tgt


def build_synthesizer(enc_model: EdgeMAE, mt_cfg: MtNetConfig, seed: int = 0) -> tuple[Synthesizer, torch.nn.Module]:
    """Fresh MT-Net on a copy of the pretrained encoder, plus the frozen critic copy."""
    enc_cfg = enc_model.cfg
    torch.manual_seed(seed)
    synth = Synthesizer(enc_cfg, mt_cfg)
    synth.encoder.load_state_dict(enc_model.encoder.state_dict())
    synth.encoder.freeze(mt_cfg.resolved_freeze(enc_cfg))
    critic = copy.deepcopy(enc_model.encoder).requires_grad_(False).eval()
    return synth, critic


def finetune_run(mt_cfg: MtNetConfig, enc_model: EdgeMAE, src: np.ndarray, tgt: np.ndarray,
                 seed: int = 0, out_dir=None, callback=None) -> Synthesizer:
    if len(src) == 0:
        raise ConfigError("paired subset is empty; raise paired_ratio or add training data")
    synth, critic = build_synthesizer(enc_model, mt_cfg, seed)
    opt = make_adam(synth, mt_cfg.lr)
    rng = Rng(seed ^ 0x5EED)
    for epoch in range(mt_cfg.epochs):
        for group in opt.param_groups:
            group["lr"] = step_lr(mt_cfg.lr, epoch, mt_cfg.epochs)
        order = rng.permutation(len(src))
        losses = []
        for start in range(0, len(order), mt_cfg.batch_size):
            idx = order[start:start + mt_cfg.batch_size]
            xs = augment(src[idx], rng) if mt_cfg.augment else src[idx]
            x = torch.from_numpy(np.ascontiguousarray(xs)).unsqueeze(1)
            y = torch.from_numpy(tgt[idx]).unsqueeze(1)
            loss = finetune_loss(synth(x), y, critic)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite fine-tuning loss at epoch {epoch}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            losses.append(loss.item())
        log.info("finetune epoch %d/%d loss %.5f", epoch + 1, mt_cfg.epochs, float(np.mean(losses)))
        if callback:
            callback(epoch, float(np.mean(losses)), synth)
    if out_dir is not None:
        save_checkpoint(synth, out_dir, checkpoint_config(enc_model.cfg, mt_cfg, seed=seed))
    return synth


def load_synthesizer(directory) -> Synthesizer:
    kind, enc_cfg, mt_cfg, _ = read_checkpoint_config(directory)
    if kind != "mtnet":
        raise CheckpointError(f"{directory} is a {kind!r} checkpoint, expected mtnet")
    synth = Synthesizer(enc_cfg, mt_cfg)
    load_checkpoint(directory).apply_to(synth)
    return synth


@torch.no_grad()
def synthesize(synth: Synthesizer, images: np.ndarray, batch: int = 16) -> np.ndarray:
    """Run the synthesizer over (N, H, W) source images; returns (N, H, W) float32."""
    synth.eval()
    out = []
    for start in range(0, len(images), batch):
        x = torch.from_numpy(np.ascontiguousarray(images[start:start + batch], dtype=np.float32)).unsqueeze(1)
        out.append(synth(x).squeeze(1).numpy())
    return np.concatenate(out) if out else np.zeros((0,) + images.shape[1:], dtype=np.float32)


# --------------------------------------------------------------------------- evaluation

def score_pair(image_id: int, task: str, y: np.ndarray, g: np.ndarray, detector: str | None = None) -> MetricsRow:
    row = MetricsRow(image_id, task, psnr(y, g), nmse(y, g), ssim_global(y, g))
    if detector:
        fn = DETECTORS[detector]
        ey, eg = fn(y), fn(g)
        row = MetricsRow(image_id, task, row.psnr_db, row.nmse, row.ssim, psnr(ey, eg), nmse(ey, eg))
    return row


def evaluate_set(synth: Synthesizer, manifest: DatasetManifest, direction: str = "A2B",
                 detector: str | None = None) -> tuple[MetricsReport, list[int]]:
    """Synthesize every test image and score it; returns the report and failed ids."""
    if direction not in ("A2B", "B2A"):
        raise ConfigError(f"direction must be A2B or B2A, got {direction!r}")
    if detector is not None and detector not in DETECTORS:
        raise ConfigError(f"unknown edge detector {detector!r}")
    src_mod, tgt_mod = ("A", "B") if direction == "A2B" else ("B", "A")
    ids = manifest.ids("test")
    if not ids:
        raise ConfigError("test split is empty")
    rows, failed = [], []
    for image_id in ids:
        try:
            x = manifest.load(image_id, src_mod).pixels
            y = manifest.load(image_id, tgt_mod).pixels
        except (OSError, KeyError, ValueError) as exc:
            log.error("id %d: %s", image_id, exc)
            failed.append(image_id)
            nan = math.nan
            rows.append(MetricsRow(image_id, "error", nan, nan, nan,
                                   nan if detector else None, nan if detector else None))
            continue
        g = synthesize(synth, x[None])[0]
        rows.append(score_pair(image_id, direction, y, g, detector))
    return MetricsReport(sorted(rows, key=lambda r: r.id)), failed

