"""Edge-preserving masked autoencoder: encoder, mask tokens, twin decoders and loss."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .config import ConfigError, EdgeMaeConfig
from .layers import Block, sincos_2d


def patchify_t(x: torch.Tensor, p: int) -> torch.Tensor:
    """(B, 1, H, W) -> (B, N, P*P) in row-major patch order."""
    b, _, h, w = x.shape
    return x.reshape(b, h // p, p, w // p, p).permute(0, 1, 3, 2, 4).reshape(b, (h // p) * (w // p), p * p)


def unpatchify_t(tokens: torch.Tensor, p: int, grid: int) -> torch.Tensor:
    b = tokens.shape[0]
    return tokens.reshape(b, grid, grid, p, p).permute(0, 1, 3, 2, 4).reshape(b, 1, grid * p, grid * p)


class Encoder(nn.Module):
    """ViT encoder over (a subset of) patch tokens with fixed sinusoidal positions."""

    def __init__(self, cfg: EdgeMaeConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = nn.Linear(cfg.patch_size ** 2, cfg.enc_dim)
        self.blocks = nn.ModuleList(Block(cfg.enc_dim, cfg.enc_heads, cfg.mlp_ratio) for _ in range(cfg.enc_layers))
        self.norm = nn.LayerNorm(cfg.enc_dim)
        self.register_buffer("pos", sincos_2d(cfg.enc_dim, cfg.grid), persistent=False)

    def forward_tokens(self, patches, positions):
        """Encode patch rows at the given flat grid positions; returns (output, per-layer outputs)."""
        # centre [0, 1] intensities before the linear embedding
        x = self.patch_embed(2.0 * patches - 1.0) + self.pos.to(patches.dtype)[positions]
        layers = []
        for blk in self.blocks:
            x = blk(x)
            layers.append(x)
        return self.norm(x), layers

    def forward(self, img):
        """Full-sequence forward, no masking."""
        patches = patchify_t(img, self.cfg.patch_size)
        b, n, _ = patches.shape
        positions = torch.arange(n).expand(b, n)
        return self.forward_tokens(patches, positions)

    def freeze(self, k: int) -> None:
        """Freeze the patch embedding and the first ``k`` blocks (no-op for k=0)."""
        if k <= 0:
            return
        for p in self.patch_embed.parameters():
            p.requires_grad_(False)
        for blk in self.blocks[:k]:
            for p in blk.parameters():
                p.requires_grad_(False)


class EdgeMAE(nn.Module):
    def __init__(self, cfg: EdgeMaeConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.mask_token = nn.Parameter(torch.zeros(1, 1, cfg.enc_dim))
        self.decoder_embed = nn.Linear(cfg.enc_dim, cfg.dec_dim)
        self.register_buffer("dec_pos", sincos_2d(cfg.dec_dim, cfg.grid), persistent=False)
        tail = cfg.dec_layers - cfg.dec_shared_layers

        def stack(n):
            return nn.ModuleList(Block(cfg.dec_dim, cfg.dec_heads, cfg.mlp_ratio) for _ in range(n))

        self.shared_blocks = stack(cfg.dec_shared_layers)
        self.imp_blocks = stack(tail)
        self.edge_blocks = stack(tail)
        self.imp_norm = nn.LayerNorm(cfg.dec_dim)
        self.edge_norm = nn.LayerNorm(cfg.dec_dim)
        self.imp_head = nn.Linear(cfg.dec_dim, cfg.patch_size ** 2)
        self.edge_head = nn.Linear(cfg.dec_dim, cfg.patch_size ** 2)
        self._init_weights()

    def _init_weights(self):
        nn.init.normal_(self.mask_token, std=0.02)
        for m in self.modules():
            if isinstance(m, nn.Linear):
                nn.init.xavier_uniform_(m.weight)
                if m.bias is not None:
                    nn.init.zeros_(m.bias)

    def init_output_bias(self, image_mean: float, edge_mean: float) -> None:
        """Start both heads at the logit of their target means."""
        with torch.no_grad():
            for head, m in ((self.imp_head, image_mean), (self.edge_head, edge_mean)):
                m = min(max(float(m), 1e-3), 1 - 1e-3)
                head.bias.fill_(float(np.log(m / (1 - m))))

    def encode_visible(self, img, mask):
        """Encode only the visible patches.

        ``img`` is (B, 1, H, W); ``mask`` is a (B, N) bool tensor with the same
        number of masked entries per sample. Returns (tokens, visible indices).
        """
        cfg = self.cfg
        assert img.shape[-1] == cfg.image_size and mask.shape[1] == cfg.num_patches, "mask/image geometry mismatch"
        patches = patchify_t(img, cfg.patch_size)
        b = patches.shape[0]
        keep = (~mask).nonzero()[:, 1].reshape(b, -1)
        vis = torch.gather(patches, 1, keep.unsqueeze(-1).expand(-1, -1, patches.shape[-1]))
        out, _ = self.encoder.forward_tokens(vis, keep)
        return out, keep

    def assemble_decoder_tokens(self, encoded, keep, mask):
        b, n = mask.shape
        d = encoded.shape[-1]
        full = torch.zeros(b, n, d, dtype=encoded.dtype).scatter(1, keep.unsqueeze(-1).expand(-1, -1, d), encoded)
        full = torch.where(mask.unsqueeze(-1), self.mask_token.expand(b, n, d), full)
        return self.decoder_embed(full) + self.dec_pos.to(encoded.dtype)

    def _decode(self, tokens, blocks, norm, head):
        x = tokens
        for blk in blocks:
            x = blk(x)
        x = torch.sigmoid(head(norm(x)))
        return unpatchify_t(x, self.cfg.patch_size, self.cfg.grid)

    def shared(self, tokens):
        for blk in self.shared_blocks:
            tokens = blk(tokens)
        return tokens

    def decode_imputation(self, shared_tokens):
        return self._decode(shared_tokens, self.imp_blocks, self.imp_norm, self.imp_head)

    def decode_edge(self, shared_tokens):
        return self._decode(shared_tokens, self.edge_blocks, self.edge_norm, self.edge_head)

    def forward(self, img, mask):
        encoded, keep = self.encode_visible(img, mask)
        h = self.shared(self.assemble_decoder_tokens(encoded, keep, mask))
        return self.decode_imputation(h), self.decode_edge(h)


def pixel_weights(alpha, stage: int, patch_size: int):
    """Broadcast per-patch stage weights (B, gh, gw) to pixels (B, 1, H, W)."""
    if stage == 1:
        w = 2.0 - alpha
    elif stage == 2:
        w = 1.0 + alpha
    else:
        raise ConfigError(f"stage must be 1 or 2, got {stage}")
    w = w.repeat_interleave(patch_size, dim=-2).repeat_interleave(patch_size, dim=-1)
    return w.unsqueeze(1)


def pretrain_loss(img_out, edge_out, y, edge_y, alpha, mask, stage: int,
                  lambda_imp: float = 5.0, lambda_edge: float = 1.0, patch_size: int = 8):
    """Patch-wise weighted L1: imputation on masked pixels, edge estimation on all pixels.

    ``alpha`` and ``mask`` are per-patch grids of shape (B, gh, gw).
    """
    w = pixel_weights(alpha, stage, patch_size)
    m = mask.to(y.dtype).repeat_interleave(patch_size, dim=-2).repeat_interleave(patch_size, dim=-1).unsqueeze(1)
    imp = (w * (y - img_out).abs() * m).sum() / m.sum().clamp_min(1.0)
    loss = lambda_imp * imp
    if lambda_edge:
        loss = loss + lambda_edge * (w * (edge_y - edge_out).abs()).mean()
    return loss


def mean_fill_l1(y: np.ndarray, mask_pixels: np.ndarray) -> float:
    """Masked-pixel L1 of predicting every masked pixel with the image mean."""
    means = y.reshape(y.shape[0], -1).mean(axis=1).reshape(-1, *([1] * (y.ndim - 1)))
    return float((np.abs(y - means) * mask_pixels).sum() / mask_pixels.sum())
