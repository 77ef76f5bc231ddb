"""Fine-tuning objective, fidelity metrics and CSV metric reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import torch

C1 = 0.01 ** 2
C2 = 0.03 ** 2


def pixel_loss(y_hat, y):
    assert y_hat.shape == y.shape, f"shape mismatch {tuple(y_hat.shape)} vs {tuple(y.shape)}"
    return (y_hat - y).abs().mean()


def feature_consistency_loss(y_hat, y, encoder):
    """Sum over encoder layers of the mean absolute activation difference.

    ``encoder`` is the frozen pretrained encoder; gradients reach ``y_hat``
    only, never the encoder weights.
    """
    _, feats_hat = encoder(y_hat)
    with torch.no_grad():
        _, feats_y = encoder(y)
    loss = y_hat.new_zeros(())
    for fh, fy in zip(feats_hat, feats_y):
        loss = loss + (fh - fy).abs().mean()
    return loss


def finetune_loss(y_hat, y, encoder):
    return pixel_loss(y_hat, y) + feature_consistency_loss(y_hat, y, encoder)


def psnr(y, g) -> float:
    """Joint-peak PSNR in dB; +inf for identical images, NaN when both are all zero."""
    y = np.asarray(y, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    assert y.shape == g.shape
    peak = max(y.max(), g.max())
    mse = np.mean((y - g) ** 2)
    if peak <= 0:
        return math.nan
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(peak * peak / mse))


def nmse(y, g) -> float:
    y = np.asarray(y, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    denom = np.sum(y * y)
    if denom == 0:
        return math.nan
    return float(np.sum((y - g) ** 2) / denom)


def ssim_global(y, g) -> float:
    """Single-window SSIM from whole-image statistics (population variance)."""
    y = np.asarray(y, dtype=np.float64).ravel()
    g = np.asarray(g, dtype=np.float64).ravel()
    mu_y, mu_g = y.mean(), g.mean()
    var_y, var_g = y.var(), g.var()
    cov = np.mean((y - mu_y) * (g - mu_g))
    num = (2 * mu_y * mu_g + C1) * (2 * cov + C2)
    den = (mu_y ** 2 + mu_g ** 2 + C1) * (var_y + var_g + C2)
    return float(num / den)


def _sig6(v: float) -> float:
    return float(f"{v:.6g}")


def _fmt(v: float) -> str:
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.6g}"


@dataclass
class MetricsRow:
    id: int
    task: str
    psnr_db: float
    nmse: float
    ssim: float
    edge_psnr_db: float | None = None
    edge_nmse: float | None = None

    def __post_init__(self):
        # rows hold exactly what the CSV can carry
        for name in ("psnr_db", "nmse", "ssim", "edge_psnr_db", "edge_nmse"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, _sig6(float(v)))


@dataclass
class MetricsReport:
    rows: list[MetricsRow] = field(default_factory=list)

    @property
    def has_edges(self) -> bool:
        return any(r.edge_psnr_db is not None for r in self.rows)

    def aggregate(self) -> dict[str, tuple[float, float]]:
        """Mean and population std per metric over rows with finite values."""
        names = ["psnr_db", "nmse", "ssim"] + (["edge_psnr_db", "edge_nmse"] if self.has_edges else [])
        out = {}
        for name in names:
            vals = np.array([getattr(r, name) for r in self.rows if getattr(r, name) is not None], dtype=np.float64)
            vals = vals[np.isfinite(vals)]
            out[name] = (float(vals.mean()), float(vals.std())) if vals.size else (math.nan, math.nan)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["id", "task", "psnr_db", "nmse", "ssim"]
        if self.has_edges:
            header += ["edge_psnr_db", "edge_nmse"]
        w.writerow(header)
        for r in sorted(self.rows, key=lambda r: r.id):
            row = [r.id, r.task, _fmt(r.psnr_db), _fmt(r.nmse), _fmt(r.ssim)]
            if self.has_edges:
                row += [_fmt(r.edge_psnr_db), _fmt(r.edge_nmse)]
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MetricsReport":
        reader = csv.DictReader(io.StringIO(text))
        rows = []
        for rec in reader:
            edge = "edge_psnr_db" in rec
            rows.append(MetricsRow(
                int(rec["id"]), rec["task"], float(rec["psnr_db"]), float(rec["nmse"]), float(rec["ssim"]),
                float(rec["edge_psnr_db"]) if edge else None, float(rec["edge_nmse"]) if edge else None,
            ))
        return cls(rows)

    def summary(self) -> str:
        return "  ".join(f"{k}={m:.4f}±{s:.4f}" for k, (m, s) in self.aggregate().items())
