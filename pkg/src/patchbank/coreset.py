"""Memory bank reduction: greedy minimax coreset and baselines.

The greedy selector repeatedly adds the point farthest from everything
picked so far, which keeps the bank's coverage radius within twice the
best achievable for the same budget. Selection can run in a random
low-dimensional projection of the bank to cut the per-step cost while
the stored bank keeps its original features.

Baselines for ablations: uniform random subsampling and a set of learned
proxy vectors trained to reconstruct every bank entry from a soft blend
of its nearest proxies.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ProxyDivergenceError
from .patchify import MemoryBank

log = logging.getLogger(__name__)

METHODS = ("greedy_coreset", "random", "learned_proxy")

# Fixed tags that split one user seed into independent per-stage streams.
_SEED_TAG_PROJECTION = 1
_SEED_TAG_SELECTION = 2
_SEED_TAG_PROXY = 3


def derive_seed(seed: int, tag: int) -> int:
    """Stable 64-bit sub-seed for stage `tag` of a run seeded with `seed`."""
    return int(np.random.SeedSequence([int(seed), int(tag)]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class CoresetConfig:
    """How to shrink a bank. Exactly one of fraction or count is set."""

    method: str = "greedy_coreset"
    fraction: float | None = 0.1
    count: int | None = None
    projection_dim: int | None = 128  # None disables the random projection
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if (self.fraction is None) == (self.count is None):
            raise ConfigError("exactly one of fraction or count must be set")
        if self.fraction is not None and not (0.0 < self.fraction <= 1.0):
            raise ConfigError(f"fraction must be in (0, 1], got {self.fraction}")
        if self.count is not None and self.count < 1:
            raise ConfigError(f"count must be >= 1, got {self.count}")
        if self.projection_dim is not None and self.projection_dim < 1:
            raise ConfigError(f"projection_dim must be >= 1, got {self.projection_dim}")

    def target_size(self, bank_size: int) -> int:
        if self.count is not None:
            if self.count > bank_size:
                raise ConfigError(f"count {self.count} exceeds bank size {bank_size}")
            return self.count
        return max(1, math.floor(self.fraction * bank_size))


@dataclass(frozen=True)
class ProxyTrainConfig:
    epochs: int = 200
    learning_rate: float = 0.01
    seed: int = 0
    # "softmin" blends each entry from its *nearest* proxies; "softmax"
    # keeps the printed-formula variant that weights the farthest ones.
    weighting: str = "softmin"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.weighting not in ("softmin", "softmax"):
            raise ConfigError(f"weighting must be softmin or softmax, got {self.weighting!r}")


def jl_project(points: np.ndarray, out_dim: int, seed: int) -> np.ndarray:
    """Random linear map to out_dim dims, entries N(0, 1/out_dim).

    Pairwise distances are approximately preserved with high probability.
    Deterministic for a given seed.
    """
    if out_dim < 1:
        raise ConfigError(f"projection dim must be >= 1, got {out_dim}")
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ConfigError(f"points must be rank 2, got {pts.ndim}")
    if out_dim >= pts.shape[1]:
        warnings.warn(
            f"projection dim {out_dim} >= input dim {pts.shape[1]}; projection buys nothing",
            stacklevel=2,
        )
    rng = np.random.default_rng(seed)
    gauss = rng.standard_normal((pts.shape[1], out_dim)) / math.sqrt(out_dim)
    return pts @ gauss


def greedy_coreset(
    points: np.ndarray, count: int, seed: int, first_index: int | None = None
) -> np.ndarray:
    """Greedy minimax selection of `count` row indices, in pick order.

    Each step takes the point with the largest distance to the current
    selection, maintained incrementally so a step costs O(N d) instead of
    re-scanning all pairs. Ties resolve to the lowest index. Squared
    distances are used internally; the argmax is the same point.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ConfigError(f"points must be rank 2, got {pts.ndim}")
    n = pts.shape[0]
    if not (1 <= count <= n):
        raise ConfigError(f"count must be in [1, {n}], got {count}")
    if first_index is None:
        first_index = int(np.random.default_rng(seed).integers(n))
    elif not (0 <= first_index < n):
        raise ConfigError(f"first_index {first_index} outside [0, {n})")

    selected = np.empty(count, dtype=np.int64)
    selected[0] = first_index
    diff = pts - pts[first_index]
    min_sq = np.einsum("ij,ij->i", diff, diff)
    min_sq[first_index] = -np.inf
    for step in range(1, count):
        pick = int(np.argmax(min_sq))  # argmax returns the first (lowest) index on ties
        selected[step] = pick
        diff = pts - pts[pick]
        np.minimum(min_sq, np.einsum("ij,ij->i", diff, diff), out=min_sq)
        min_sq[pick] = -np.inf
    return selected


def random_subsample(n: int, count: int, seed: int) -> np.ndarray:
    """Uniform sample without replacement, returned sorted ascending."""
    if not (1 <= count <= n):
        raise ConfigError(f"count must be in [1, {n}], got {count}")
    picks = np.random.default_rng(seed).choice(n, size=count, replace=False)
    return np.sort(picks).astype(np.int64)


def coverage_radius(points: np.ndarray, selected_indices: np.ndarray) -> float:
    """Largest distance from any point to its nearest selected point."""
    pts = np.asarray(points, dtype=np.float64)
    sel = np.asarray(selected_indices, dtype=np.int64)
    if sel.size == 0:
        raise ConfigError("selection is empty")
    best = np.full(pts.shape[0], np.inf)
    for idx in sel:
        diff = pts - pts[idx]
        np.minimum(best, np.einsum("ij,ij->i", diff, diff), out=best)
    return float(np.sqrt(best.max()))


def _pairwise_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact-ish Euclidean distance matrix in float64, clipped at zero."""
    sq = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T)
    np.maximum(sq, 0.0, out=sq)
    return np.sqrt(sq)


def learned_proxies(
    points: np.ndarray, count: int, cfg: ProxyTrainConfig
) -> tuple[np.ndarray, list[float]]:
    """Train `count` proxy vectors by full-batch gradient descent.

    The loss is the mean squared reconstruction error of every input row
    from the weighted blend of the proxies, with weights given by a
    softmax over signed distances (negative sign = nearest proxies
    dominate). Returns the proxies and the per-epoch loss trace.
    """
    pts = np.asarray(points, dtype=np.float64)
    n, dim = pts.shape
    if not (1 <= count <= n):
        raise ConfigError(f"count must be in [1, {n}], got {count}")
    sign = -1.0 if cfg.weighting == "softmin" else 1.0
    rng = np.random.default_rng(cfg.seed)
    proxies = pts[rng.choice(n, size=count, replace=False)].copy()

    trace: list[float] = []
    eps = 1e-12
    batch = max(1, int(2**22) // max(count * dim, 1))
    # non-finite values are how divergence is detected, so let them flow
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            grad = np.zeros_like(proxies)
            loss_sum = 0.0
            for start in range(0, n, batch):
                chunk = pts[start : start + batch]
                dist = _pairwise_dist(chunk, proxies)  # (B, count)
                z = sign * dist
                z -= z.max(axis=1, keepdims=True)
                weights = np.exp(z)
                weights /= weights.sum(axis=1, keepdims=True)
                blended = weights @ proxies  # (B, dim)
                resid = chunk - blended
                loss_sum += float(np.sum(resid * resid))
                # d(loss)/d(proxy_k) has a direct blend term and a term from
                # the weights' dependence on the distances.
                grad -= 2.0 * (weights.T @ resid)
                align = resid @ proxies.T - np.sum(resid * blended, axis=1, keepdims=True)
                coeff = weights * align * sign  # (B, count)
                safe = np.where(dist < eps, np.inf, dist)
                scale = coeff / safe
                grad += 2.0 * ((scale.T @ chunk) - (scale.sum(axis=0)[:, None] * proxies))
            grad /= n
            loss = loss_sum / n
            if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise ProxyDivergenceError(epoch)
            trace.append(loss)
            proxies -= cfg.learning_rate * grad
            if epoch % 50 == 0 or epoch == cfg.epochs - 1:
                log.info("proxy training epoch %d: loss %.6g", epoch, loss)
    return proxies, trace


def subsample_memory_bank(
    bank: MemoryBank,
    cfg: CoresetConfig,
    proxy_cfg: ProxyTrainConfig | None = None,
) -> MemoryBank:
    """Shrink a bank with the configured method.

    Greedy and random keep original rows (features and provenance);
    learned proxies replace rows with synthetic vectors. The result
    records the pre-reduction size.
    """
    count = cfg.target_size(bank.size)
    if cfg.method == "greedy_coreset":
        space = bank.features.astype(np.float64)
        if cfg.projection_dim is not None and cfg.projection_dim < bank.dim:
            space = jl_project(space, cfg.projection_dim, derive_seed(cfg.seed, _SEED_TAG_PROJECTION))
        elif cfg.projection_dim is not None:
            warnings.warn(
                f"projection_dim {cfg.projection_dim} >= bank dim {bank.dim}; skipping projection",
                stacklevel=2,
            )
        picks = greedy_coreset(space, count, derive_seed(cfg.seed, _SEED_TAG_SELECTION))
    elif cfg.method == "random":
        picks = random_subsample(bank.size, count, derive_seed(cfg.seed, _SEED_TAG_SELECTION))
    else:
        pcfg = proxy_cfg or ProxyTrainConfig(seed=derive_seed(cfg.seed, _SEED_TAG_PROXY))
        proxies, trace = learned_proxies(bank.features, count, pcfg)
        log.info("proxy training finished: first loss %.6g, last %.6g", trace[0], trace[-1])
        return MemoryBank(
            features=proxies.astype(np.float32),
            provenance=tuple(("<synthetic>", k, -1) for k in range(count)),
            subsampled_from=bank.size,
        )
    return MemoryBank(
        features=bank.features[picks],
        provenance=tuple(bank.provenance[int(i)] for i in picks),
        subsampled_from=bank.size,
    )
