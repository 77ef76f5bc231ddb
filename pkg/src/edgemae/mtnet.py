"""Dual-branch multi-scale synthesizer built on the pretrained encoder."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .config import ConfigError, EdgeMaeConfig, MtNetConfig
from .edge_mae import Encoder
from .layers import PatchExpand, PatchMerging, SwinLayer


def upsample2x(grid):
    """Half-pixel-centre bilinear x2 of a (B, H, W, C) grid, edge-clamped."""
    x = grid.permute(0, 3, 1, 2)
    x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
    return x.permute(0, 2, 3, 1)


def build_feature_pyramid(encoder: Encoder, img):
    """Encode every patch and return (f_small, f_large) as (B, H, W, D) grids."""
    tokens, _ = encoder(img)
    g = encoder.cfg.grid
    f_small = tokens.reshape(tokens.shape[0], g, g, -1)
    return f_small, upsample2x(f_small)


def channel_softmax(p_l, p_s):
    """Per-channel two-way softmax over the pooled descriptors."""
    m = torch.maximum(p_l, p_s)
    el, es = torch.exp(p_l - m), torch.exp(p_s - m)
    z = el + es
    return el / z, es / z


class DSF(nn.Module):
    """Dual-scale selective fusion of a large-scale and a small-scale skip."""

    def __init__(self, channels: int):
        super().__init__()
        self.up = nn.ConvTranspose2d(channels, channels, kernel_size=2, stride=2)
        self.gate_l = nn.Conv2d(2 * channels, 1, kernel_size=1)
        self.gate_s = nn.Conv2d(2 * channels, 1, kernel_size=1)

    def forward(self, f_l, f_s, f_d, return_weights: bool = False):
        """Inputs are channel-first (B, C, H, W); ``f_s`` is at half resolution."""
        assert f_l.shape == f_d.shape, f"F_l {tuple(f_l.shape)} vs F_d {tuple(f_d.shape)}"
        assert f_s.shape[1] == f_l.shape[1] and 2 * f_s.shape[-1] == f_l.shape[-1] \
            and 2 * f_s.shape[-2] == f_l.shape[-2], "F_s must be half the spatial size of F_l"
        f_s_up = self.up(f_s)
        m_a = torch.sigmoid(self.gate_l(torch.cat([f_d, f_l], dim=1)))
        m_b = torch.sigmoid(self.gate_s(torch.cat([f_d, f_s_up], dim=1)))
        f_l_att = m_a * f_l
        f_s_att = m_b * f_s_up
        a_c, b_c = channel_softmax(f_l_att.mean(dim=(2, 3), keepdim=True), f_s_att.mean(dim=(2, 3), keepdim=True))
        fused = a_c * f_l_att + b_c * f_s_att
        if return_weights:
            return fused, (a_c, b_c, m_a, m_b)
        return fused


class Branch(nn.Module):
    """Projection, learned positions, then [2 swin layers (+ merge)] per stage."""

    def __init__(self, in_dim: int, resolution: int, cfg: MtNetConfig):
        super().__init__()
        if resolution < 2 or resolution & (resolution - 1):
            raise ConfigError(f"branch resolution must be a power of two >= 2, got {resolution}")
        c0 = cfg.base_channels
        self.proj = nn.Linear(in_dim, c0)
        self.pos = nn.Parameter(torch.zeros(1, resolution, resolution, c0))
        nn.init.trunc_normal_(self.pos, std=0.02)
        self.stages = nn.ModuleList()
        self.merges = nn.ModuleList()
        n_stages = int(math.log2(resolution))
        res, c = resolution, c0
        for i in range(n_stages):
            self.stages.append(nn.Sequential(
                SwinLayer(c, cfg.heads(c), res, cfg.window_size, shift=False, mlp_ratio=cfg.mlp_ratio),
                SwinLayer(c, cfg.heads(c), res, cfg.window_size, shift=True, mlp_ratio=cfg.mlp_ratio),
            ))
            if i < n_stages - 1:
                self.merges.append(PatchMerging(c))
                res, c = res // 2, c * 2
        self.out_channels = c

    def forward(self, x):
        """Returns (skips keyed by resolution, final 2x2 output)."""
        x = self.proj(x) + self.pos.to(x.dtype)
        skips = {}
        for i, stage in enumerate(self.stages):
            x = stage(x)
            if i < len(self.merges):
                skips[x.shape[1]] = x
                x = self.merges[i](x)
        return skips, x


class MTNet(nn.Module):
    def __init__(self, enc_cfg: EdgeMaeConfig, cfg: MtNetConfig):
        super().__init__()
        self.enc_cfg = enc_cfg
        self.cfg = cfg
        g = enc_cfg.grid
        self.small = Branch(enc_cfg.enc_dim, g, cfg)
        self.large = Branch(enc_cfg.enc_dim, 2 * g, cfg)
        self.expands = nn.ModuleList()
        self.fusers = nn.ModuleList()
        self.reduces = nn.ModuleList()
        self.dec_stages = nn.ModuleList()
        c = self.large.out_channels
        res = 2
        while res < 2 * g:
            self.expands.append(PatchExpand(c))
            res, c = res * 2, c // 2
            self.fusers.append(DSF(c))
            self.reduces.append(nn.Linear(2 * c, c))
            self.dec_stages.append(nn.Sequential(
                SwinLayer(c, cfg.heads(c), res, cfg.window_size, shift=False, mlp_ratio=cfg.mlp_ratio),
                SwinLayer(c, cfg.heads(c), res, cfg.window_size, shift=True, mlp_ratio=cfg.mlp_ratio),
            ))
        self.final_expand = PatchExpand(c, scale=enc_cfg.image_size // (2 * g), out_dim=c)
        self.head = nn.Linear(c, 1)

    def encode_branches(self, f_small, f_large):
        small_skips, small_out = self.small(f_small)
        large_skips, bottleneck = self.large(f_large)
        small_skips = dict(small_skips)
        small_skips[small_out.shape[1]] = small_out
        return large_skips, small_skips, bottleneck

    def decode_synthesis(self, bottleneck, large_skips, small_skips):
        x = bottleneck
        for expand, fuse, reduce, stage in zip(self.expands, self.fusers, self.reduces, self.dec_stages):
            x = expand(x)
            res = x.shape[1]
            f_l, f_s = large_skips[res], small_skips[res // 2]
            fused = fuse(f_l.permute(0, 3, 1, 2), f_s.permute(0, 3, 1, 2), x.permute(0, 3, 1, 2))
            x = stage(reduce(torch.cat([fused.permute(0, 2, 3, 1), x], dim=-1)))
        x = self.head(self.final_expand(x))
        return torch.sigmoid(x.permute(0, 3, 1, 2))

    def forward(self, f_small, f_large):
        large_skips, small_skips, bottleneck = self.encode_branches(f_small, f_large)
        return self.decode_synthesis(bottleneck, large_skips, small_skips)


class Synthesizer(nn.Module):
    """Pretrained encoder (partially frozen) feeding MT-Net: x -> y_hat."""

    def __init__(self, enc_cfg: EdgeMaeConfig, cfg: MtNetConfig):
        super().__init__()
        self.encoder = Encoder(enc_cfg)
        self.mtnet = MTNet(enc_cfg, cfg)

    def forward(self, img):
        f_small, f_large = build_feature_pyramid(self.encoder, img)
        return self.mtnet(f_small, f_large)
