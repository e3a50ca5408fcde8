"""Tour of the binary tensor container and the dataset manifest.

Run: python3 demos/01_tensor_container.py
"""

import os
import tempfile

import numpy as np

from patchbank.tensorio import (
    DatasetManifest,
    ManifestEntry,
    load_manifest,
    read_tensor,
    write_manifest,
    write_tensor,
)

work = tempfile.mkdtemp(prefix="container_demo_")

# A tensor file is magic + rank + dims + float32 payload, nothing else.
arr = np.arange(6, dtype=np.float32).reshape(2, 3)
path = os.path.join(work, "tiny.tnsr")
write_tensor(arr, path)
raw = open(path, "rb").read()
print(f"2x3 tensor -> {len(raw)} bytes on disk")
print(f"  magic={raw[:8]!r} rank={raw[8]} dims={np.frombuffer(raw[9:17], '<u4')}")

back = read_tensor(path)
print(f"  round trip exact: {np.array_equal(back, arr)}, dtype {back.dtype}")

# Manifests are plain TSV: id, label, size, mask (or -), level:path pairs.
os.makedirs(os.path.join(work, "features"), exist_ok=True)
rels = {}
for level, shape in ((2, (4, 8, 8)), (3, (8, 4, 4))):
    rel = f"features/demo.L{level}.tnsr"
    write_tensor(np.zeros(shape, dtype=np.float32), os.path.join(work, rel))
    rels[level] = rel
entry = ManifestEntry("demo/train_000", 0, (32, 32), None, rels)
manifest_path = os.path.join(work, "train.tsv")
write_manifest(DatasetManifest("train", work, (entry,)), manifest_path)
print("\nmanifest line:")
print(" ", open(manifest_path).read().strip())

loaded = load_manifest(manifest_path, "train")
print(f"validated manifest: {len(loaded.entries)} entry, levels {loaded.levels}")

# Everything suspicious is rejected loudly rather than carried along.
from patchbank.errors import DataError, FormatError

try:
    open(path, "r+b").write(b"NOTMAGIC")
    read_tensor(path)
except FormatError as exc:
    print(f"\ncorrupt magic -> FormatError: {exc}")

nan_path = os.path.join(work, "bad.tnsr")
try:
    write_tensor(np.array([np.nan]), nan_path)
except DataError as exc:
    print(f"NaN payload   -> DataError: {exc}")
