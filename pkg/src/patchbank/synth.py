"""Self-contained synthetic dataset for end-to-end runs.

Generates two-level feature maps for a nominal texture plus test images
where a rectangular region is pushed away from the nominal distribution,
together with pixel ground-truth masks and manifests. Everything is a
pure function of the seed, so regenerating with the same seed writes
byte-identical files.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import tensorio
from .errors import ConfigError
from .patchify import bilinear_resize

_TAG_BASE = 101
_TAG_NOISE = 102
_TAG_REGION = 103


@dataclass(frozen=True)
class SynthConfig:
    """Shape and difficulty of the generated set."""

    n_train: int = 16
    n_test_normal: int = 12
    n_test_anomalous: int = 12
    grid: int = 16  # finest-level feature resolution (grid x grid)
    channels: tuple[int, int] = (12, 24)  # per level; second level is half resolution
    levels: tuple[int, int] = (2, 3)
    pixels_per_cell: int = 4
    noise_sigma: float = 1.0
    defect_offset: float = 6.0  # feature-space shift inside the defect, in noise sigmas
    defect_cells: tuple[int, int] = (6, 6)  # defect size in finest-grid cells
    class_name: str = "synth"

    def __post_init__(self):
        if min(self.n_train, self.n_test_normal, self.n_test_anomalous) < 1:
            raise ConfigError("all image counts must be >= 1")
        if self.grid < 2 or self.grid % 2 != 0:
            raise ConfigError(f"grid must be even and >= 2, got {self.grid}")
        if self.pixels_per_cell < 1:
            raise ConfigError("pixels_per_cell must be >= 1")
        if self.noise_sigma <= 0:
            raise ConfigError("noise_sigma must be > 0")
        if any(c < 1 for c in self.channels):
            raise ConfigError("channel counts must be >= 1")
        dh, dw = self.defect_cells
        if not (1 <= dh <= self.grid and 1 <= dw <= self.grid):
            raise ConfigError(f"defect_cells must fit the {self.grid}x{self.grid} grid")

    @property
    def image_size(self) -> tuple[int, int]:
        side = self.grid * self.pixels_per_cell
        return (side, side)


def _smooth_base(rng: np.random.Generator, channels: int, side: int, scale: float = 2.0) -> np.ndarray:
    """Per-channel smooth nominal pattern: coarse noise upsampled bilinearly."""
    coarse = rng.standard_normal((channels, 4, 4)) * scale
    field = bilinear_resize(np.transpose(coarse, (1, 2, 0)), side, side)
    return np.transpose(field, (2, 0, 1))


def _level_region(r0: int, c0: int, rh: int, rw: int, factor: int) -> tuple[int, int, int, int]:
    """Map a finest-grid rectangle onto a grid coarser by `factor`."""
    top = r0 // factor
    left = c0 // factor
    bottom = -((-(r0 + rh)) // factor)
    right = -((-(c0 + rw)) // factor)
    return top, left, bottom - top, right - left


def generate(out_dir, seed: int = 0, cfg: SynthConfig = SynthConfig()) -> tuple[str, str]:
    """Write the dataset under out_dir; returns (train, test) manifest paths."""
    os.makedirs(os.path.join(out_dir, "features"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)

    sides = (cfg.grid, cfg.grid // 2)
    bases = []
    for li, (ch, side) in enumerate(zip(cfg.channels, sides)):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), _TAG_BASE, li]))
        bases.append(_smooth_base(rng, ch, side))

    def make_maps(image_index: int) -> list[np.ndarray]:
        maps = []
        for li, (ch, side) in enumerate(zip(cfg.channels, sides)):
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), _TAG_NOISE, image_index, li]))
            noise = rng.standard_normal((ch, side, side)) * cfg.noise_sigma
            maps.append(bases[li] + noise)
        return maps

    def write_maps(stem: str, maps: list[np.ndarray]) -> dict[int, str]:
        rels = {}
        for level, arr in zip(cfg.levels, maps):
            rel = f"features/{stem}.L{level}.tnsr"
            tensorio.write_tensor(arr.astype(np.float32), os.path.join(out_dir, rel))
            rels[level] = rel
        return rels

    height, width = cfg.image_size
    train_entries = []
    counter = 0
    for i in range(cfg.n_train):
        stem = f"train_{i:03d}"
        rels = write_maps(stem, make_maps(counter))
        counter += 1
        train_entries.append(
            tensorio.ManifestEntry(f"{cfg.class_name}/{stem}", 0, (height, width), None, rels)
        )

    test_entries = []
    for i in range(cfg.n_test_normal):
        stem = f"test_good_{i:03d}"
        rels = write_maps(stem, make_maps(counter))
        counter += 1
        test_entries.append(
            tensorio.ManifestEntry(f"{cfg.class_name}/{stem}", 0, (height, width), None, rels)
        )

    rh, rw = cfg.defect_cells
    region_rng = np.random.default_rng(np.random.SeedSequence([int(seed), _TAG_REGION]))
    for i in range(cfg.n_test_anomalous):
        stem = f"test_defect_{i:03d}"
        maps = make_maps(counter)
        counter += 1
        r0 = int(region_rng.integers(0, cfg.grid - rh + 1))
        c0 = int(region_rng.integers(0, cfg.grid - rw + 1))
        for li, factor in enumerate((1, 2)):
            t, l, h, w = _level_region(r0, c0, rh, rw, factor)
            maps[li][:, t : t + h, l : l + w] += cfg.defect_offset * cfg.noise_sigma
        rels = write_maps(stem, maps)

        mask = np.zeros((height, width), dtype=np.float32)
        ppc = cfg.pixels_per_cell
        mask[r0 * ppc : (r0 + rh) * ppc, c0 * ppc : (c0 + rw) * ppc] = 1.0
        mask_rel = f"masks/{stem}.tnsr"
        tensorio.write_tensor(mask, os.path.join(out_dir, mask_rel))
        test_entries.append(
            tensorio.ManifestEntry(f"{cfg.class_name}/{stem}", 1, (height, width), mask_rel, rels)
        )

    train_path = os.path.join(out_dir, "train_manifest.tsv")
    test_path = os.path.join(out_dir, "test_manifest.tsv")
    tensorio.write_manifest(
        tensorio.DatasetManifest("train", os.path.abspath(out_dir), tuple(train_entries)), train_path
    )
    tensorio.write_manifest(
        tensorio.DatasetManifest("test", os.path.abspath(out_dir), tuple(test_entries)), test_path
    )
    return train_path, test_path
