"""Binary tensor container and dataset manifests.

The on-disk tensor layout is deliberately tiny so that other tools can
produce it without linking against this package:

    magic   8 bytes   ASCII "PBTNSR01"
    rank    1 byte    unsigned, 1..4
    dims    rank x 4  unsigned 32-bit little-endian, each >= 1
    data    prod(dims) x 4   IEEE-754 float32 little-endian, row-major

Manifests are plain tab-separated text, one image per line:

    image_id <TAB> label <TAB> H <TAB> W <TAB> mask_path_or_dash <TAB> level:path[,level:path...]

Lines starting with '#' are comments. All paths are resolved relative to
the directory containing the manifest file.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, FormatError, TruncationError

MAGIC = b"PBTNSR01"
MAX_RANK = 4


def write_tensor(t: np.ndarray, path) -> None:
    """Serialize an array (rank 1..4, finite values) as float32."""
    arr = np.asarray(t)
    if arr.ndim < 1 or arr.ndim > MAX_RANK:
        raise DataError(f"tensor rank must be 1..{MAX_RANK}, got {arr.ndim}")
    if any(d < 1 for d in arr.shape):
        raise DataError(f"tensor dims must be positive, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        raise DataError(f"tensor dtype must be floating, got {arr.dtype}")
    if not np.all(np.isfinite(arr)):
        raise DataError("tensor contains NaN or Inf")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    header = MAGIC + struct.pack("<B", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())


def read_tensor(path) -> np.ndarray:
    """Load a tensor written by write_tensor. Returns float32, C-order."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 1:
        raise TruncationError(f"{path}: file shorter than header")
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:len(MAGIC)]!r}")
    rank = blob[len(MAGIC)]
    if rank < 1 or rank > MAX_RANK:
        raise FormatError(f"{path}: rank {rank} outside 1..{MAX_RANK}")
    dim_end = len(MAGIC) + 1 + 4 * rank
    if len(blob) < dim_end:
        raise TruncationError(f"{path}: header cut off inside dims")
    dims = struct.unpack(f"<{rank}I", blob[len(MAGIC) + 1 : dim_end])
    if any(d < 1 for d in dims):
        raise FormatError(f"{path}: non-positive dim in {dims}")
    expected = 4 * int(np.prod(dims, dtype=np.int64))
    payload = blob[dim_end:]
    if len(payload) != expected:
        raise TruncationError(
            f"{path}: payload is {len(payload)} bytes, dims {dims} need {expected}"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{path}: payload contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class ManifestEntry:
    """One image: identity, label, pixel size, optional mask, feature files."""

    image_id: str
    label: int
    original_size: tuple[int, int]
    mask_path: str | None
    feature_paths: dict[int, str]


@dataclass(frozen=True)
class DatasetManifest:
    split: str
    root: str
    entries: tuple[ManifestEntry, ...]

    @property
    def levels(self) -> tuple[int, ...]:
        return tuple(sorted(self.entries[0].feature_paths)) if self.entries else ()

    def resolve(self, rel: str) -> str:
        return os.path.normpath(os.path.join(self.root, rel))


def _parse_feature_field(raw: str, lineno: int) -> dict[int, str]:
    paths: dict[int, str] = {}
    for piece in raw.split(","):
        level_str, sep, rel = piece.partition(":")
        if not sep or not rel:
            raise FormatError(f"manifest line {lineno}: bad feature field {piece!r}")
        try:
            level = int(level_str)
        except ValueError:
            raise FormatError(f"manifest line {lineno}: bad level {level_str!r}") from None
        if level in paths:
            raise FormatError(f"manifest line {lineno}: duplicate level {level}")
        paths[level] = rel
    return paths


def load_manifest(path, split: str) -> DatasetManifest:
    """Parse and validate a manifest file.

    Checks: labels in {0,1}, no anomalous images in a train split, unique
    image ids, one shared contiguous level set, and that every referenced
    file exists. Loading is pure; loading the same file twice gives equal
    structures.
    """
    if split not in ("train", "test"):
        raise ConfigError(f"split must be 'train' or 'test', got {split!r}")
    root = os.path.dirname(os.path.abspath(path))
    entries: list[ManifestEntry] = []
    seen_ids: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 6:
                raise FormatError(f"manifest line {lineno}: expected 6 fields, got {len(fields)}")
            image_id, label_s, h_s, w_s, mask_rel, feat_raw = fields
            try:
                label = int(label_s)
                height, width = int(h_s), int(w_s)
            except ValueError:
                raise FormatError(f"manifest line {lineno}: non-integer label or size") from None
            if label not in (0, 1):
                raise DataError(f"manifest line {lineno}: label must be 0 or 1, got {label}")
            if split == "train" and label != 0:
                raise DataError(f"manifest line {lineno}: anomalous image {image_id!r} in train split")
            if height < 1 or width < 1:
                raise DataError(f"manifest line {lineno}: non-positive image size {height}x{width}")
            if image_id in seen_ids:
                raise DataError(f"manifest line {lineno}: duplicate image id {image_id!r}")
            seen_ids.add(image_id)
            mask_path = None if mask_rel == "-" else mask_rel
            feature_paths = _parse_feature_field(feat_raw, lineno)
            entries.append(
                ManifestEntry(image_id, label, (height, width), mask_path, feature_paths)
            )
    if not entries:
        raise DataError(f"{path}: manifest has no entries")

    level_set = tuple(sorted(entries[0].feature_paths))
    lo, hi = level_set[0], level_set[-1]
    if level_set != tuple(range(lo, hi + 1)):
        raise DataError(f"{path}: level set {level_set} is not contiguous")
    manifest = DatasetManifest(split=split, root=root, entries=tuple(entries))
    for entry in entries:
        if tuple(sorted(entry.feature_paths)) != level_set:
            raise DataError(f"{entry.image_id}: level set differs from first entry")
        for level, rel in entry.feature_paths.items():
            full = manifest.resolve(rel)
            if not os.path.isfile(full):
                raise DataError(f"{entry.image_id}: missing feature file {full}")
        if entry.mask_path is not None and not os.path.isfile(manifest.resolve(entry.mask_path)):
            raise DataError(f"{entry.image_id}: missing mask file {manifest.resolve(entry.mask_path)}")
    return manifest


def write_manifest(manifest: DatasetManifest, path) -> None:
    """Write entries back out in the tab-separated line format."""
    lines = []
    for e in manifest.entries:
        feats = ",".join(f"{lvl}:{e.feature_paths[lvl]}" for lvl in sorted(e.feature_paths))
        mask = e.mask_path if e.mask_path is not None else "-"
        lines.append(f"{e.image_id}\t{e.label}\t{e.original_size[0]}\t{e.original_size[1]}\t{mask}\t{feats}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_feature_maps(manifest: DatasetManifest, entry: ManifestEntry) -> dict[int, np.ndarray]:
    """Load every feature tensor for one entry, keyed by hierarchy level."""
    maps: dict[int, np.ndarray] = {}
    for level, rel in entry.feature_paths.items():
        arr = read_tensor(manifest.resolve(rel))
        if arr.ndim != 3:
            raise DataError(f"{entry.image_id} level {level}: feature map must be rank 3, got {arr.ndim}")
        maps[level] = arr
    return maps


def load_mask(manifest: DatasetManifest, entry: ManifestEntry) -> np.ndarray:
    """Boolean ground-truth mask at the image's original size.

    Entries without a mask yield all-False. Stored masks are binarized at
    0.5 so float encodings of {0,1} round-trip safely.
    """
    if entry.mask_path is None:
        return np.zeros(entry.original_size, dtype=bool)
    arr = read_tensor(manifest.resolve(entry.mask_path))
    if arr.ndim != 2 or arr.shape != entry.original_size:
        raise DataError(
            f"{entry.image_id}: mask shape {arr.shape} does not match image size {entry.original_size}"
        )
    return arr >= 0.5
