"""Synthetic paired two-modality phantoms and their on-disk dataset layout."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ConfigError
from .ntf import read_ntf, write_ntf, write_pgm
from .rng import Rng

log = logging.getLogger(__name__)

MODALITIES = ("A", "B")
MANIFEST_NAME = "manifest.tsv"


@dataclass
class Image:
    pixels: np.ndarray  # (H, W) float32 in [0, 1]
    modality: str
    id: int

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")


def render_base_anatomy(seed: int, size: int = 64, patch_size: int = 8) -> Image:
    """Max-composite of 2-5 rotated ellipses under a smooth cosine bias field."""
    if size < 16 or size % patch_size:
        raise ConfigError(f"size {size} must be >= 16 and divisible by patch size {patch_size}")
    rng = Rng(seed)
    k = rng.randint(2, 5)
    ii, jj = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64), indexing="ij")
    tissue = np.zeros((size, size), dtype=np.float64)
    for _ in range(k):
        cx = rng.uniform_range(0.25 * size, 0.75 * size)
        cy = rng.uniform_range(0.25 * size, 0.75 * size)
        ax1 = rng.uniform_range(size / 8, size / 3)
        ax2 = rng.uniform_range(size / 8, size / 3)
        theta = rng.uniform_range(0.0, math.pi)
        t = rng.uniform_range(0.2, 0.9)
        dx, dy = jj - cx, ii - cy
        c, s = math.cos(theta), math.sin(theta)
        u = (dx * c + dy * s) / ax1
        v = (-dx * s + dy * c) / ax2
        tissue = np.maximum(tissue, np.where(u * u + v * v <= 1.0, t, 0.0))
    a = rng.uniform_range(0.5, 2.0)
    b = rng.uniform_range(0.5, 2.0)
    bias = 0.85 + 0.15 * np.cos(2.0 * math.pi * (a * ii + b * jj) / size)
    return Image(np.clip(tissue * bias, 0.0, 1.0).astype(np.float32), "A", 0)


def modality_b(pixels) -> np.ndarray:
    p = np.asarray(pixels, dtype=np.float32)
    return np.clip((1.0 - p) ** np.float32(1.5), 0.0, 1.0).astype(np.float32)


def derive_modalities(base: Image) -> tuple[Image, Image]:
    a = Image(base.pixels.copy(), "A", base.id)
    b = Image(modality_b(base.pixels), "B", base.id)
    return a, b


@dataclass
class ManifestEntry:
    id: int
    modality: str
    path: str  # relative to manifest root
    split: str
    paired: bool


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry] = field(default_factory=list)

    def ids(self, split: str | None = None) -> list[int]:
        return sorted({e.id for e in self.entries if split is None or e.split == split})

    def paired_ids(self, split: str = "train") -> list[int]:
        return sorted({e.id for e in self.entries if e.split == split and e.paired})

    def entry(self, image_id: int, modality: str) -> ManifestEntry:
        for e in self.entries:
            if e.id == image_id and e.modality == modality:
                return e
        raise KeyError(f"no entry for id {image_id} modality {modality}")

    def load(self, image_id: int, modality: str) -> Image:
        e = self.entry(image_id, modality)
        return Image(read_ntf(self.root / e.path), modality, image_id)

    def load_all(self, split: str) -> list[Image]:
        return [Image(read_ntf(self.root / e.path), e.modality, e.id)
                for e in sorted(self.entries, key=lambda e: (e.id, e.modality)) if e.split == split]

    def to_text(self) -> str:
        lines = [f"{e.id}\t{e.modality}\t{e.path}\t{e.split}\t{int(e.paired)}"
                 for e in sorted(self.entries, key=lambda e: (e.id, e.modality))]
        return "\n".join(lines) + "\n"

    def write(self, path=None) -> Path:
        path = Path(path) if path else self.root / MANIFEST_NAME
        path.write_text(self.to_text(), encoding="utf-8")
        return path

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        entries = []
        seen = set()
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 tab-separated fields")
            e = ManifestEntry(int(cols[0]), cols[1], cols[2], cols[3], cols[4] == "1")
            if (e.split, e.id, e.modality) in seen:
                raise ValueError(f"{path}:{lineno}: duplicate id {e.id}/{e.modality}")
            seen.add((e.split, e.id, e.modality))
            entries.append(e)
        return cls(path.parent, entries)


def generate_dataset(seed: int, n_train: int, n_test: int, size: int, out_dir, patch_size: int = 8) -> DatasetManifest:
    """Write paired (A, B) phantoms as NTF1 + PGM previews and a manifest.

    Each id is rendered from the derived seed ``seed ^ id`` so disjoint id
    ranges can be produced independently.
    """
    root = Path(out_dir)
    try:
        (root / "images").mkdir(parents=True, exist_ok=True)
        (root / "previews").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {root}: {exc}") from exc
    entries = []
    for image_id in range(n_train + n_test):
        split = "train" if image_id < n_train else "test"
        base = replace(render_base_anatomy(seed ^ image_id, size, patch_size), id=image_id)
        for img in derive_modalities(base):
            rel = f"images/{image_id:05d}_{img.modality}.ntf"
            try:
                write_ntf(root / rel, img.pixels)
                write_pgm(root / "previews" / f"{image_id:05d}_{img.modality}.pgm", img.pixels)
            except OSError as exc:
                raise OSError(f"failed writing {root / rel}: {exc}") from exc
            entries.append(ManifestEntry(image_id, img.modality, rel, split, True))
    manifest = DatasetManifest(root, entries)
    manifest.write()
    log.info("wrote %d images (%d train / %d test ids) to %s", len(entries), n_train, n_test, root)
    return manifest


def split_dataset(manifest: DatasetManifest, paired_ratio: float) -> DatasetManifest:
    """Mark the first floor(ratio * n_train) train ids as paired; test ids stay paired."""
    if not 0.0 < paired_ratio <= 1.0:
        raise ConfigError(f"paired_ratio must lie in (0, 1], got {paired_ratio}")
    train_ids = manifest.ids("train")
    keep = set(train_ids[: paired_count(len(train_ids), paired_ratio)])
    entries = [replace(e, paired=(e.id in keep) if e.split == "train" else e.paired)
               for e in manifest.entries]
    return DatasetManifest(manifest.root, entries)


def paired_count(n_train: int, ratio: float) -> int:
    # small epsilon guards 0.7 * 10 style products landing just under an integer
    return int(math.floor(ratio * n_train + 1e-9))
