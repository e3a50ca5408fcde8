"""Locally aware patch features and the patch memory bank.

Each spatial position of a feature map is replaced by the average of its
p x p neighborhood (zero padding outside the map, uniform 1/p^2 weights),
optionally strided, then squeezed to a target channel count by adaptive
average pooling over contiguous channel segments. Maps from several
hierarchy levels are merged by rescaling the coarser ones to the finest
grid, concatenating channels, and pooling to the output dimension.

A MemoryBank is the row-stack of every patch feature of a nominal train
split plus provenance (which image and grid cell each row came from).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensorio
from .errors import ConfigError, DataError

DEFAULT_LEVELS = (2, 3)


@dataclass(frozen=True)
class PatchConfig:
    """Knobs for patch extraction and hierarchy merging.

    patch_size: neighborhood width p, odd and positive.
    stride: grid subsampling step, >= 1.
    level_dim: per-level channel count after adaptive pooling.
    output_dim: channel count after merging hierarchy levels.
    levels: hierarchy levels to consume, strictly increasing; the first
        is the finest and defines the output grid resolution.
    """

    patch_size: int = 3
    stride: int = 1
    level_dim: int = 1024
    output_dim: int = 1024
    levels: tuple[int, ...] = DEFAULT_LEVELS

    def __post_init__(self):
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ConfigError(f"patch_size must be odd and positive, got {self.patch_size}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.level_dim < 1:
            raise ConfigError(f"level_dim must be >= 1, got {self.level_dim}")
        if self.output_dim < 1:
            raise ConfigError(f"output_dim must be >= 1, got {self.output_dim}")
        levels = tuple(self.levels)
        if not levels:
            raise ConfigError("levels must not be empty")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ConfigError(f"levels must be strictly increasing, got {levels}")
        object.__setattr__(self, "levels", levels)


@dataclass(frozen=True)
class PatchGrid:
    """Patch features of one image on a rows x cols grid."""

    rows: int
    cols: int
    dim: int
    features: np.ndarray  # (rows*cols, dim) float32, row-major over the grid
    source_shape: tuple[int, int]  # spatial shape of the map the grid came from

    def __post_init__(self):
        if self.features.shape != (self.rows * self.cols, self.dim):
            raise DataError(
                f"feature block {self.features.shape} does not match "
                f"{self.rows}x{self.cols} grid with dim {self.dim}"
            )

    def as_grid(self) -> np.ndarray:
        return self.features.reshape(self.rows, self.cols, self.dim)


@dataclass(frozen=True)
class MemoryBank:
    """Stacked nominal patch features plus row provenance."""

    features: np.ndarray  # (N, dim) float32
    provenance: tuple[tuple[str, int, int], ...]  # (image_id, grid_row, grid_col)
    subsampled_from: int | None = None

    def __post_init__(self):
        if self.features.ndim != 2:
            raise DataError(f"bank features must be rank 2, got {self.features.ndim}")
        if len(self.provenance) != self.features.shape[0]:
            raise DataError(
                f"provenance rows {len(self.provenance)} != feature rows {self.features.shape[0]}"
            )

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def neighborhood(row: int, col: int, patch_size: int, bounds: tuple[int, int]):
    """The p x p index window centered at (row, col).

    Returns a list of (r, c, is_padding) triples in row-major order;
    is_padding marks coordinates that fall outside bounds.
    """
    if patch_size < 1 or patch_size % 2 == 0:
        raise ConfigError(f"patch_size must be odd and positive, got {patch_size}")
    height, width = bounds
    reach = patch_size // 2
    out = []
    for r in range(row - reach, row + reach + 1):
        for c in range(col - reach, col + reach + 1):
            out.append((r, c, not (0 <= r < height and 0 <= c < width)))
    return out


def _adaptive_pool_channels(block: np.ndarray, out_dim: int) -> np.ndarray:
    """Average contiguous channel segments down (or up) to out_dim.

    block is (positions, channels) float64. Segment k covers input indices
    [floor(k*c/out_dim), ceil((k+1)*c/out_dim)); segments may overlap when
    out_dim > c, which duplicates channels instead of failing.
    """
    channels = block.shape[1]
    if out_dim == channels:
        return block
    k = np.arange(out_dim, dtype=np.int64)
    starts = (k * channels) // out_dim
    ends = -((-(k + 1) * channels) // out_dim)  # ceil division
    csum = np.zeros((block.shape[0], channels + 1), dtype=np.float64)
    np.cumsum(block, axis=1, out=csum[:, 1:])
    return (csum[:, ends] - csum[:, starts]) / (ends - starts)


def local_patch_features(feature_map: np.ndarray, cfg: PatchConfig) -> PatchGrid:
    """Aggregate a (channels, h, w) map into a strided grid of patch features.

    The neighborhood average uses zero padding and a uniform 1/p^2 weight,
    so border patches are pulled toward zero rather than renormalized.
    """
    fm = np.asarray(feature_map)
    if fm.ndim != 3:
        raise DataError(f"feature map must be rank 3 (channels, h, w), got rank {fm.ndim}")
    channels, height, width = fm.shape
    if channels < 1 or height < 1 or width < 1:
        raise DataError(f"feature map has empty axis: shape {fm.shape}")
    if not np.all(np.isfinite(fm)):
        raise DataError("feature map contains NaN or Inf")
    fm = fm.astype(np.float64, copy=False)

    reach = cfg.patch_size // 2
    padded = np.pad(fm, ((0, 0), (reach, reach), (reach, reach)))
    windows = sliding_window_view(padded, (cfg.patch_size, cfg.patch_size), axis=(1, 2))
    pooled = windows.mean(axis=(3, 4))  # (channels, h, w)
    pooled = pooled[:, :: cfg.stride, :: cfg.stride]
    rows, cols = pooled.shape[1], pooled.shape[2]

    block = pooled.reshape(channels, rows * cols).T  # (positions, channels)
    block = _adaptive_pool_channels(block, cfg.level_dim)
    return PatchGrid(
        rows=rows,
        cols=cols,
        dim=cfg.level_dim,
        features=block.astype(np.float32),
        source_shape=(height, width),
    )


def bilinear_resize(field_hw_c: np.ndarray, out_rows: int, out_cols: int) -> np.ndarray:
    """Resize an (h, w, c) field with half-pixel-center bilinear sampling.

    Source coordinate for output index k along an axis of length m mapped
    to length n is (k + 0.5) * m / n - 0.5, clamped to [0, m - 1].
    """
    if out_rows < 1 or out_cols < 1:
        raise ConfigError(f"output size must be positive, got {out_rows}x{out_cols}")
    arr = np.asarray(field_hw_c, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    h, w, _ = arr.shape

    def axis_coords(n_out: int, n_in: int):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(np.int64)
        lo = np.minimum(lo, n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (src - lo)[:, None]

    r_lo, r_hi, r_frac = axis_coords(out_rows, h)
    rows = arr[r_lo] * (1.0 - r_frac[:, :, None]) + arr[r_hi] * r_frac[:, :, None]
    c_lo, c_hi, c_frac = axis_coords(out_cols, w)
    out = rows[:, c_lo] * (1.0 - c_frac[None, :, :]) + rows[:, c_hi] * c_frac[None, :, :]
    return out[:, :, 0] if squeeze else out


def merge_hierarchies(grids: list[PatchGrid], cfg: PatchConfig) -> PatchGrid:
    """Merge per-level grids into one grid at the finest resolution.

    The first grid defines the output resolution; coarser grids are
    bilinearly rescaled to it, channels are concatenated in input order,
    and the stack is pooled to cfg.output_dim.
    """
    if not grids:
        raise DataError("merge_hierarchies needs at least one grid")
    base = grids[0]
    for g in grids[1:]:
        if g.dim != base.dim:
            raise DataError(f"grid dims differ: {g.dim} vs {base.dim}")
        if g.rows > base.rows or g.cols > base.cols:
            raise DataError(
                f"first grid must be the finest: {g.rows}x{g.cols} exceeds {base.rows}x{base.cols}"
            )
    fields = [base.as_grid().astype(np.float64)]
    for g in grids[1:]:
        fields.append(bilinear_resize(g.as_grid(), base.rows, base.cols))
    stacked = np.concatenate(fields, axis=2).reshape(base.rows * base.cols, -1)
    block = _adaptive_pool_channels(stacked, cfg.output_dim)
    return PatchGrid(
        rows=base.rows,
        cols=base.cols,
        dim=cfg.output_dim,
        features=block.astype(np.float32),
        source_shape=base.source_shape,
    )


def image_patch_grid(
    manifest: tensorio.DatasetManifest, entry: tensorio.ManifestEntry, cfg: PatchConfig
) -> PatchGrid:
    """Full front half of the pipeline for one image: load, patchify, merge."""
    maps = tensorio.load_feature_maps(manifest, entry)
    missing = [lvl for lvl in cfg.levels if lvl not in maps]
    if missing:
        raise DataError(f"{entry.image_id}: manifest lacks hierarchy levels {missing}")
    grids = [local_patch_features(maps[lvl], cfg) for lvl in cfg.levels]
    return merge_hierarchies(grids, cfg)


def build_memory_bank(
    manifest: tensorio.DatasetManifest, cfg: PatchConfig, threads: int = 1
) -> MemoryBank:
    """Stack patch features of every train image, in manifest order."""
    if manifest.split != "train":
        raise DataError(f"memory bank must be built from a train split, got {manifest.split!r}")
    if not manifest.entries:
        raise DataError("manifest has no entries")
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")

    def one(entry):
        return entry.image_id, image_patch_grid(manifest, entry, cfg)

    if threads == 1:
        results = [one(e) for e in manifest.entries]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, manifest.entries))

    blocks = []
    provenance: list[tuple[str, int, int]] = []
    for image_id, grid in results:
        blocks.append(grid.features)
        rr, cc = np.divmod(np.arange(grid.rows * grid.cols), grid.cols)
        provenance.extend((image_id, int(r), int(c)) for r, c in zip(rr, cc))
    return MemoryBank(features=np.concatenate(blocks, axis=0), provenance=tuple(provenance))


BANK_FEATURES_FILE = "bank_features.tnsr"
BANK_PROVENANCE_FILE = "bank_provenance.tsv"


def save_memory_bank(bank: MemoryBank, directory) -> None:
    """Write a bank as a tensor file plus a provenance side table."""
    os.makedirs(directory, exist_ok=True)
    tensorio.write_tensor(bank.features, os.path.join(directory, BANK_FEATURES_FILE))
    lines = [f"# subsampled_from\t{bank.subsampled_from if bank.subsampled_from is not None else '-'}"]
    lines += [f"{img}\t{r}\t{c}" for img, r, c in bank.provenance]
    with open(os.path.join(directory, BANK_PROVENANCE_FILE), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_memory_bank(directory) -> MemoryBank:
    features = tensorio.read_tensor(os.path.join(directory, BANK_FEATURES_FILE))
    prov_path = os.path.join(directory, BANK_PROVENANCE_FILE)
    subsampled_from: int | None = None
    provenance: list[tuple[str, int, int]] = []
    with open(prov_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                fields = line[1:].strip().split("\t")
                if len(fields) == 2 and fields[0] == "subsampled_from" and fields[1] != "-":
                    subsampled_from = int(fields[1])
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DataError(f"{prov_path} line {lineno}: expected 3 fields")
            provenance.append((fields[0], int(fields[1]), int(fields[2])))
    return MemoryBank(
        features=features,
        provenance=tuple(provenance),
        subsampled_from=subsampled_from,
    )
