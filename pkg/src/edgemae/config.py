"""Run configurations and the ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    """Invalid configuration or arguments (user error)."""


@dataclass
class EdgeMaeConfig:
    image_size: int = 64
    patch_size: int = 8
    enc_dim: int = 64
    enc_layers: int = 6
    enc_heads: int = 4
    dec_dim: int = 32
    dec_layers: int = 4
    dec_shared_layers: int = 2
    dec_heads: int = 2
    mlp_ratio: int = 4
    mask_ratio: float = 0.70
    lambda_imp: float = 5.0
    lambda_edge: float = 1.0
    epochs: int = 60
    stage_switch_epoch: int = 30
    lr: float = 5e-4
    batch_size: int = 16

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ConfigError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.enc_dim % self.enc_heads or self.dec_dim % self.dec_heads:
            raise ConfigError("embedding dims must be divisible by head counts")
        if not 0 <= self.dec_shared_layers < self.dec_layers:
            raise ConfigError("dec_shared_layers must be < dec_layers")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigError(f"mask_ratio must lie in (0, 1), got {self.mask_ratio}")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid

    def arch_hash(self) -> str:
        """Digest of the fields that fix encoder tensor shapes."""
        keys = ("image_size", "patch_size", "enc_dim", "enc_layers", "enc_heads", "mlp_ratio")
        text = ";".join(f"{k}={getattr(self, k)}" for k in keys)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class MtNetConfig:
    base_channels: int = 32
    window_size: int = 4
    head_dim: int = 16
    mlp_ratio: int = 4
    freeze_layers: int | None = None  # None -> enc_layers // 2
    epochs: int = 40
    lr: float = 3e-4
    batch_size: int = 8
    augment: bool = True
    paired_ratio: float = 1.0
    direction: str = "A2B"

    def __post_init__(self):
        if self.direction not in ("A2B", "B2A"):
            raise ConfigError(f"direction must be A2B or B2A, got {self.direction!r}")
        if self.base_channels % self.head_dim and self.base_channels >= self.head_dim:
            raise ConfigError("base_channels must be a multiple of head_dim")

    def heads(self, channels: int) -> int:
        return max(1, channels // self.head_dim)

    def resolved_freeze(self, enc: EdgeMaeConfig) -> int:
        k = enc.enc_layers // 2 if self.freeze_layers is None else self.freeze_layers
        if not 0 <= k <= enc.enc_layers:
            raise ConfigError(f"freeze_layers {k} outside [0, {enc.enc_layers}]")
        return k


def micro_configs() -> tuple[EdgeMaeConfig, MtNetConfig]:
    """Tiny shapes used by the finite-difference gradient check."""
    enc = EdgeMaeConfig(
        image_size=16, patch_size=8, enc_dim=8, enc_layers=1, enc_heads=2,
        dec_dim=8, dec_layers=2, dec_shared_layers=1, dec_heads=2, batch_size=2,
    )
    mt = MtNetConfig(base_channels=8, window_size=4, head_dim=8, freeze_layers=0, batch_size=2)
    return enc, mt


def _parse_value(raw: str, typ):
    if typ is bool or typ == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if typ in (int, "int"):
        return int(raw)
    if typ in (float, "float"):
        return float(raw)
    if typ in ("int | None",):
        return None if raw.lower() == "none" else int(raw)
    return raw


def read_kv(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_kv(path, values: dict) -> None:
    lines = [f"{k} = {v}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def apply_overrides(cfg, values: dict[str, str], allow_unknown: bool = False):
    """Return a copy of dataclass ``cfg`` with string ``values`` applied; unknown keys rejected."""
    types = {f.name: f.type for f in fields(cfg)}
    updates = {}
    for key, raw in values.items():
        if key not in types:
            if allow_unknown:
                continue
            raise ConfigError(f"unknown config key {key!r} for {type(cfg).__name__}")
        try:
            updates[key] = _parse_value(str(raw), types[key])
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return dataclasses.replace(cfg, **updates)


def config_dict(cfg) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}
