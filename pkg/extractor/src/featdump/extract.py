"""Batch feature extraction into tensor files plus manifests."""

import os
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image

from .backbone import _STAGES, load_backbone, stage_outputs
from .container import write_tensor
from .layout import DatasetImage, scan_layout

# ImageNet channel statistics, the standard companion of pretrained weights
_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


@dataclass(frozen=True)
class ExtractConfig:
    backbone: str = "wide_resnet50_2"
    weights: str = "pretrained"
    levels: tuple[int, ...] = (2, 3)
    resize: int = 256
    crop: int = 224
    batch_size: int = 8
    seed: int = 0  # used only for random-weight initialization

    def __post_init__(self):
        if not self.levels:
            raise ValueError("levels must be non-empty")
        bad = [l for l in self.levels if l not in _STAGES]
        if bad:
            raise ValueError(f"levels must lie in {sorted(_STAGES)}, got {bad}")
        if len(set(self.levels)) != len(self.levels):
            raise ValueError(f"duplicate levels in {self.levels}")
        if self.crop > self.resize:
            raise ValueError(f"crop {self.crop} exceeds resize {self.resize}")
        if min(self.crop, self.resize) < 1 or self.batch_size < 1:
            raise ValueError("resize, crop and batch_size must be positive")


def _load_image(path: str, cfg: ExtractConfig) -> np.ndarray:
    """Resize, center-crop, normalize. Returns CHW float32."""
    with Image.open(path) as img:
        img = img.convert("RGB")  # replicates grayscale into 3 channels
        img = img.resize((cfg.resize, cfg.resize), Image.BILINEAR)
        left = (cfg.resize - cfg.crop) // 2
        img = img.crop((left, left, left + cfg.crop, left + cfg.crop))
        arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = (arr - _MEAN) / _STD
    return arr.transpose(2, 0, 1)


def _load_mask(path: str, cfg: ExtractConfig) -> np.ndarray:
    """Same geometry as the image path, nearest resampling, {0,1} float32."""
    with Image.open(path) as img:
        img = img.convert("L")
        img = img.resize((cfg.resize, cfg.resize), Image.NEAREST)
        left = (cfg.resize - cfg.crop) // 2
        img = img.crop((left, left, left + cfg.crop, left + cfg.crop))
        arr = np.asarray(img, dtype=np.float32)
    return (arr > 127.5).astype(np.float32)


def _manifest_line(image_id: str, label: int, size: int, mask_rel, feature_rels: dict) -> str:
    mask = mask_rel if mask_rel is not None else "-"
    feats = ",".join(f"{lvl}:{feature_rels[lvl]}" for lvl in sorted(feature_rels))
    return f"{image_id}\t{label}\t{size}\t{size}\t{mask}\t{feats}"


def extract(data_dir: str, out_dir: str, cfg: ExtractConfig = ExtractConfig()) -> dict:
    """Dump per-level feature tensors and split manifests under out_dir.

    Returns a small summary dict (counts per split, manifest paths).
    """
    records = scan_layout(data_dir)
    model = load_backbone(cfg.backbone, cfg.weights, cfg.seed)

    lines: dict[str, list[str]] = {"train": [], "test": []}
    counts = {"train": 0, "test": 0, "masks": 0}
    for start in range(0, len(records), cfg.batch_size):
        chunk = records[start : start + cfg.batch_size]
        batch = torch.from_numpy(np.stack([_load_image(r.path, cfg) for r in chunk]))
        maps = stage_outputs(model, batch, cfg.levels)
        for i, record in enumerate(chunk):
            feature_rels = {}
            for level in cfg.levels:
                rel = f"{record.split}/{record.image_id}.L{level}.tnsr"
                dest = os.path.join(out_dir, rel)
                os.makedirs(os.path.dirname(dest), exist_ok=True)
                write_tensor(maps[level][i].numpy(), dest)
                feature_rels[level] = rel
            mask_rel = None
            if record.mask_path is not None:
                mask_rel = f"masks/{record.image_id}.tnsr"
                dest = os.path.join(out_dir, mask_rel)
                os.makedirs(os.path.dirname(dest), exist_ok=True)
                write_tensor(_load_mask(record.mask_path, cfg), dest)
                counts["masks"] += 1
            elif record.label == 1:
                warnings.warn(f"{record.image_id}: no ground-truth mask found", stacklevel=2)
            lines[record.split].append(
                _manifest_line(record.image_id, record.label, cfg.crop, mask_rel, feature_rels)
            )
            counts[record.split] += 1

    manifests = {}
    for split in ("train", "test"):
        path = os.path.join(out_dir, f"{split}_manifest.tsv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines[split]) + "\n")
        manifests[split] = path
    return {"counts": counts, "manifests": manifests}
