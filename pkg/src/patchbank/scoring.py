"""Test-time scoring against a memory bank.

A test image's anomaly score is the distance from its most anomalous
patch (the one farthest from the bank) to its nearest bank entry. That
raw distance is shrunk when the matched bank entry sits in a dense
region: with the b nearest bank entries to the worst test patch at
distances d_1..d_b and the raw score d*,

    score = (1 - exp(d*) / sum_j exp(d_j)) * d*

so scores stay in [0, d*] and isolated matches keep more of the raw
value. Pixel maps come from the per-patch distance grid, bilinearly
upsampled to image size and smoothed with a Gaussian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DataError
from .patchify import MemoryBank, PatchGrid, bilinear_resize

_BATCH_CELLS = 1 << 23  # cap on the float64 distance-block size per batch


@dataclass(frozen=True)
class ScoringConfig:
    """Scoring knobs.

    neighbors: bank entries in the reweighting pool (b).
    blur_sigma: Gaussian smoothing of the upsampled map, 0 disables.
    output_size: pixel size of anomaly maps; None keeps the image's own.
    reweight: turn the density reweighting off to keep raw distances.
    reweight_pool: "test-nn" pools the b nearest bank entries to the worst
        test patch; "bank-nn" pools the b nearest to its matched bank entry.
    """

    neighbors: int = 3
    blur_sigma: float = 4.0
    output_size: tuple[int, int] | None = None
    reweight: bool = True
    reweight_pool: str = "test-nn"

    def __post_init__(self):
        if self.neighbors < 1:
            raise ConfigError(f"neighbors must be >= 1, got {self.neighbors}")
        if self.reweight and self.neighbors < 2:
            raise ConfigError("reweighting needs neighbors >= 2; the factor degenerates at 1")
        if self.blur_sigma < 0:
            raise ConfigError(f"blur_sigma must be >= 0, got {self.blur_sigma}")
        if self.output_size is not None and any(v < 1 for v in self.output_size):
            raise ConfigError(f"output_size must be positive, got {self.output_size}")
        if self.reweight_pool not in ("test-nn", "bank-nn"):
            raise ConfigError(f"reweight_pool must be test-nn or bank-nn, got {self.reweight_pool!r}")


def nearest_neighbors(queries: np.ndarray, bank, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact k nearest bank rows for each query row.

    Returns (distances, indices), each (Q, k), sorted by distance with
    ties broken toward the lower index. Distances are true Euclidean,
    computed in float64; candidate sets are found with the Gram-matrix
    trick, then re-measured directly so cancellation can't reorder them.
    """
    bank_arr = bank.features if isinstance(bank, MemoryBank) else bank
    q = np.asarray(queries, dtype=np.float64)
    b = np.asarray(bank_arr, dtype=np.float64)
    if q.ndim != 2 or b.ndim != 2:
        raise DataError(f"queries and bank must be rank 2, got {q.ndim} and {b.ndim}")
    if q.shape[1] != b.shape[1]:
        raise DataError(f"query dim {q.shape[1]} != bank dim {b.shape[1]}")
    n = b.shape[0]
    if not (1 <= k <= n):
        raise ConfigError(f"k must be in [1, {n}], got {k}")

    b_sq = np.einsum("ij,ij->i", b, b)
    b_sq_max = float(b_sq.max())
    out_dist = np.empty((q.shape[0], k), dtype=np.float64)
    out_idx = np.empty((q.shape[0], k), dtype=np.int64)
    rows_per_batch = max(1, _BATCH_CELLS // n)
    for start in range(0, q.shape[0], rows_per_batch):
        chunk = q[start : start + rows_per_batch]
        q_sq = np.einsum("ij,ij->i", chunk, chunk)
        sq = q_sq[:, None] + b_sq[None, :] - 2.0 * (chunk @ b.T)
        np.maximum(sq, 0.0, out=sq)
        for r in range(chunk.shape[0]):
            row = sq[r]
            kth = np.partition(row, k - 1)[k - 1]
            # keep everything whose Gram-trick value could have rounded past
            # the kth, then settle the order with directly recomputed
            # distances; the slack scales with the cancellation magnitude
            slack = 1e-9 * kth + 1e-12 * (q_sq[r] + b_sq_max) + 1e-300
            cand = np.flatnonzero(row <= kth + slack)
            diff = b[cand] - chunk[r]
            exact = np.sqrt(np.einsum("ij,ij->i", diff, diff))
            order = np.lexsort((cand, exact))[:k]
            out_dist[start + r] = exact[order]
            out_idx[start + r] = cand[order]
    return out_dist, out_idx


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian smoothing with replicated borders.

    Kernel radius is ceil(4*sigma); weights are normalized to sum to one,
    so constant inputs pass through unchanged.
    """
    if sigma < 0:
        raise ConfigError(f"sigma must be >= 0, got {sigma}")
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"blur expects a 2-d map, got rank {arr.ndim}")
    if sigma == 0:
        return arr.copy()
    radius = math.ceil(4.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(x * x) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()

    def along_rows(a):
        padded = np.pad(a, ((radius, radius), (0, 0)), mode="edge")
        return np.einsum("ijw,w->ij", sliding_window_view(padded, 2 * radius + 1, axis=0), kernel)

    return along_rows(along_rows(arr).T).T


@dataclass(frozen=True)
class ScoreMap:
    """Scoring output for one image."""

    image_id: str
    image_score: float
    raw_score: float  # distance before density reweighting
    argmax_patch: tuple[int, int]
    patch_scores: np.ndarray  # (rows, cols) float64 nearest-bank distances
    pixel_map: np.ndarray | None  # (H, W) float32 after upsample + blur


def _reweighted_score(
    grid: PatchGrid, bank: MemoryBank, cfg: ScoringConfig, patch_dist: np.ndarray, nn_idx: np.ndarray
) -> tuple[float, float, tuple[int, int]]:
    flat = int(np.argmax(patch_dist))  # first occurrence = row-major lowest cell
    raw = float(patch_dist[flat])
    argmax_rc = (flat // grid.cols, flat % grid.cols)
    if not cfg.reweight or raw == 0.0:
        return raw, raw, argmax_rc
    if cfg.neighbors > bank.size:
        raise ConfigError(f"neighbors {cfg.neighbors} exceeds bank size {bank.size}")
    worst = grid.features[flat].astype(np.float64)
    if cfg.reweight_pool == "test-nn":
        pool_dist, _ = nearest_neighbors(worst[None, :], bank, cfg.neighbors)
        pool_dist = pool_dist[0]
    else:
        anchor = bank.features[int(nn_idx[flat])].astype(np.float64)
        _, pool_idx = nearest_neighbors(anchor[None, :], bank, cfg.neighbors)
        diff = bank.features[pool_idx[0]].astype(np.float64) - worst
        pool_dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    shift = max(raw, float(pool_dist.max()))
    weight = math.exp(raw - shift) / float(np.exp(pool_dist - shift).sum())
    return (1.0 - weight) * raw, raw, argmax_rc


def image_score(grid: PatchGrid, bank: MemoryBank, cfg: ScoringConfig) -> tuple[float, float, tuple[int, int]]:
    """(score, raw score, argmax patch cell) for one image."""
    if grid.dim != bank.dim:
        raise DataError(f"grid dim {grid.dim} != bank dim {bank.dim}")
    patch_dist, nn_idx = nearest_neighbors(grid.features, bank, 1)
    return _reweighted_score(grid, bank, cfg, patch_dist[:, 0], nn_idx[:, 0])


def score_map(
    grid: PatchGrid,
    bank: MemoryBank,
    cfg: ScoringConfig,
    image_id: str = "",
    render_pixels: bool = True,
) -> ScoreMap:
    """Image score plus the anomaly map, from a single bank lookup pass."""
    if grid.dim != bank.dim:
        raise DataError(f"grid dim {grid.dim} != bank dim {bank.dim}")
    patch_dist, nn_idx = nearest_neighbors(grid.features, bank, 1)
    score, raw, argmax_rc = _reweighted_score(grid, bank, cfg, patch_dist[:, 0], nn_idx[:, 0])
    patches = patch_dist[:, 0].reshape(grid.rows, grid.cols)

    pixel_map = None
    if render_pixels:
        out_h, out_w = cfg.output_size if cfg.output_size is not None else grid.source_shape
        if out_h < grid.rows or out_w < grid.cols:
            raise ConfigError(
                f"output size {out_h}x{out_w} smaller than patch grid {grid.rows}x{grid.cols}"
            )
        up = bilinear_resize(patches, out_h, out_w)
        pixel_map = gaussian_blur(up, cfg.blur_sigma).astype(np.float32)
    return ScoreMap(
        image_id=image_id,
        image_score=score,
        raw_score=raw,
        argmax_patch=argmax_rc,
        patch_scores=patches,
        pixel_map=pixel_map,
    )
