"""Patch-feature memory banks for cold-start anomaly detection.

The pipeline consumes pre-extracted multi-level feature maps, turns them
into locally aggregated patch features, stores the nominal ones in a
memory bank, optionally shrinks the bank with a greedy minimax coreset,
and scores test images by nearest-neighbor distance, producing both
image-level scores and pixel-level anomaly maps.
"""

from .coreset import (
    CoresetConfig,
    ProxyTrainConfig,
    coverage_radius,
    greedy_coreset,
    jl_project,
    learned_proxies,
    random_subsample,
    subsample_memory_bank,
)
from .errors import (
    ConfigError,
    DataError,
    FormatError,
    PatchBankError,
    ProxyDivergenceError,
    TruncationError,
    UndefinedMetricError,
)
from .metrics import (
    auroc,
    connected_components,
    f1_optimal_threshold,
    pixel_auroc,
    precision_recall_curve,
    pro_score,
    roc_curve,
)
from .patchify import (
    MemoryBank,
    PatchConfig,
    PatchGrid,
    bilinear_resize,
    build_memory_bank,
    image_patch_grid,
    load_memory_bank,
    local_patch_features,
    merge_hierarchies,
    neighborhood,
    save_memory_bank,
)
from .scoring import ScoreMap, ScoringConfig, gaussian_blur, image_score, nearest_neighbors, score_map
from .tensorio import (
    DatasetManifest,
    ManifestEntry,
    load_feature_maps,
    load_manifest,
    load_mask,
    read_tensor,
    write_manifest,
    write_tensor,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CoresetConfig",
    "DataError",
    "DatasetManifest",
    "FormatError",
    "ManifestEntry",
    "MemoryBank",
    "PatchBankError",
    "PatchConfig",
    "PatchGrid",
    "ProxyDivergenceError",
    "ProxyTrainConfig",
    "ScoreMap",
    "ScoringConfig",
    "TruncationError",
    "UndefinedMetricError",
    "auroc",
    "bilinear_resize",
    "build_memory_bank",
    "connected_components",
    "coverage_radius",
    "f1_optimal_threshold",
    "gaussian_blur",
    "greedy_coreset",
    "image_patch_grid",
    "image_score",
    "jl_project",
    "learned_proxies",
    "load_feature_maps",
    "load_manifest",
    "load_mask",
    "load_memory_bank",
    "local_patch_features",
    "merge_hierarchies",
    "nearest_neighbors",
    "neighborhood",
    "pixel_auroc",
    "precision_recall_curve",
    "pro_score",
    "random_subsample",
    "read_tensor",
    "roc_curve",
    "save_memory_bank",
    "score_map",
    "subsample_memory_bank",
    "write_manifest",
    "write_tensor",
]
