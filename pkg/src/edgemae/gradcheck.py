"""Central finite-difference verification of autograd gradients (float64)."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import torch

from .config import micro_configs
from .edge_mae import EdgeMAE, pretrain_loss
from .edges import sobel_edge_map
from .metrics import finetune_loss
from .mtnet import Synthesizer
from .patches import sample_mask
from .phantom import derive_modalities, render_base_anatomy
from .rng import Rng

TOLERANCE = 1e-4
STEP = 1e-3
MIN_STEP = 1e-7


@dataclass
class TensorCheck:
    name: str
    numel: int
    max_rel_err: float
    reprobed: int = 0


@dataclass
class GradCheckReport:
    label: str
    tensors: list[TensorCheck] = field(default_factory=list)
    tolerance: float = TOLERANCE

    @property
    def max_rel_err(self) -> float:
        return max((t.max_rel_err for t in self.tensors), default=0.0)

    @property
    def offenders(self) -> list[str]:
        return [t.name for t in self.tensors if not t.max_rel_err <= self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.offenders

    def lines(self) -> list[str]:
        out = [f"[{self.label}] {len(self.tensors)} tensors, max relative error {self.max_rel_err:.3e} "
               f"({'PASS' if self.passed else 'FAIL'})"]
        out += [f"  {t.name:<48s} n={t.numel:<6d} rel_err={t.max_rel_err:.3e} kinks={t.reprobed}"
                + ("  <-- exceeds tolerance" if t.name in self.offenders else "") for t in self.tensors]
        return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest elementwise deviation relative to the tensor's gradient scale."""
    if not analytic.size:
        return 0.0
    scale = max(np.abs(analytic).max(), np.abs(numeric).max())
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def _central(loss_fn, flat, i, step, signs0):
    """Central difference at ``step``; None if either probe crosses an L1 kink."""
    orig = flat[i].item()
    flat[i] = orig + step
    up, s_up = loss_fn()
    flat[i] = orig - step
    down, s_down = loss_fn()
    flat[i] = orig
    if not (torch.equal(s_up, signs0) and torch.equal(s_down, signs0)):
        return None
    return (up.item() - down.item()) / (2 * step)


def check_gradients(module: torch.nn.Module, loss_fn, label: str, step: float = STEP,
                    corrupt: dict | None = None) -> GradCheckReport:
    """Compare autograd gradients of ``loss_fn()`` with central differences.

    ``loss_fn`` returns ``(loss, signs)`` where ``signs`` holds the sign of
    every argument of an absolute value in the objective. A probe whose
    perturbation flips any of those signs straddles a kink, so that element
    is re-probed with a tenfold smaller step.

    ``corrupt`` maps parameter names to additive perturbations of the
    analytic gradient and exists for fault-injection tests.
    """
    params = [(n, p) for n, p in module.named_parameters() if p.requires_grad]
    module.zero_grad(set_to_none=True)
    loss, _ = loss_fn()
    loss.backward()
    analytic = {n: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)) for n, p in params}
    for name, delta in (corrupt or {}).items():
        analytic[name] = analytic[name] + delta
    report = GradCheckReport(label)
    with torch.inference_mode():
        _, signs0 = loss_fn()
        for name, p in params:
            flat = p.data.view(-1)
            numeric = np.empty(flat.numel())
            reprobed = 0
            for i in range(flat.numel()):
                h = step
                value = _central(loss_fn, flat, i, h, signs0)
                while value is None and h > MIN_STEP:
                    h /= 10
                    value = _central(loss_fn, flat, i, h, signs0)
                if h != step:
                    reprobed += 1
                numeric[i] = np.nan if value is None else value
            err = relative_error(analytic[name].view(-1).numpy(), numeric)
            if np.isnan(numeric).any():
                err = np.inf
            report.tensors.append(TensorCheck(name, flat.numel(), err, reprobed))
    return report


def micro_batch(seed: int = 3, n: int = 2):
    """Two micro phantoms (float64) with masks, difficulty weights and Sobel targets.

    A 2x2 patch grid makes every pooled alpha equal, so the weights here are
    drawn uniformly per patch instead; the loss must be correct for any alpha.
    """
    enc_cfg, _ = micro_configs()
    rng = Rng(seed)
    imgs, masks = [], []
    for k in range(n):
        a, b = derive_modalities(render_base_anatomy(seed ^ k, enc_cfg.image_size, enc_cfg.patch_size))
        imgs.append((a if k % 2 == 0 else b).pixels)
        masks.append(sample_mask(enc_cfg.grid, enc_cfg.grid, enc_cfg.mask_ratio, rng).mask)
    x = torch.from_numpy(np.stack(imgs)[:, None].astype(np.float64))
    edge = torch.from_numpy(np.stack([sobel_edge_map(i) for i in imgs])[:, None].astype(np.float64))
    mask = torch.from_numpy(np.stack(masks).astype(bool))
    alpha = torch.tensor([[[rng.uniform() for _ in range(enc_cfg.grid)] for _ in range(enc_cfg.grid)]
                          for _ in range(n)], dtype=torch.float64)
    return x, edge, mask, alpha


def run_grad_check(seed: int = 0, corrupt: dict | None = None) -> list[GradCheckReport]:
    """Check the stage-1, stage-2 and fine-tune objectives on the micro configuration."""
    enc_cfg, mt_cfg = micro_configs()
    torch.manual_seed(seed)
    mae = EdgeMAE(enc_cfg).double()
    x, edge, mask, alpha = micro_batch()
    b = x.shape[0]
    flat_mask = mask.reshape(b, -1)
    p = enc_cfg.patch_size
    pix_mask = mask.repeat_interleave(p, 1).repeat_interleave(p, 2).unsqueeze(1)
    reports = []
    for stage in (1, 2):
        def loss_fn(stage=stage):
            img_out, edge_out = mae(x, flat_mask)
            loss = pretrain_loss(img_out, edge_out, x, edge, alpha, mask, stage,
                                 enc_cfg.lambda_imp, enc_cfg.lambda_edge, enc_cfg.patch_size)
            signs = torch.cat([torch.sign(x - img_out)[pix_mask], torch.sign(edge - edge_out).reshape(-1)])
            return loss, signs
        reports.append(check_gradients(mae, loss_fn, f"pretrain stage {stage}",
                                       corrupt=(corrupt or {}).get(f"stage{stage}")))

    synth = Synthesizer(enc_cfg, mt_cfg).double()
    synth.encoder.load_state_dict(mae.encoder.state_dict())
    synth.encoder.freeze(mt_cfg.resolved_freeze(enc_cfg))
    critic = copy.deepcopy(mae.encoder).requires_grad_(False)
    target = 1.0 - x  # a smooth cross-modal target is enough to exercise the loss

    def ft_loss():
        y_hat = synth(x)
        _, feats_hat = critic(y_hat)
        _, feats_y = critic(target)
        signs = torch.cat([torch.sign(y_hat - target).reshape(-1)]
                          + [torch.sign(fh - fy).reshape(-1) for fh, fy in zip(feats_hat, feats_y)])
        return finetune_loss(y_hat, target, critic), signs

    reports.append(check_gradients(synth, ft_loss, "fine-tune", corrupt=(corrupt or {}).get("finetune")))
    return reports
