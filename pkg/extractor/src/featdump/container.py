"""Writer for the binary tensor container consumed by the scoring engine.

Layout: 8-byte magic "PBTNSR01", one u8 rank in 1..4, `rank` u32
little-endian dimensions, then the float32 little-endian payload in C
order. Values must be finite.
"""

import struct

import numpy as np

MAGIC = b"PBTNSR01"
MAX_RANK = 4


class ContainerError(ValueError):
    pass


def write_tensor(arr, path) -> None:
    data = np.asarray(arr)
    if not (1 <= data.ndim <= MAX_RANK):
        raise ContainerError(f"rank must be 1..{MAX_RANK}, got {data.ndim}")
    if data.size == 0:
        raise ContainerError("empty tensors are not representable")
    if not np.issubdtype(data.dtype, np.floating):
        raise ContainerError(f"payload must be floating point, got {data.dtype}")
    if not np.all(np.isfinite(data)):
        raise ContainerError("payload contains NaN or Inf")
    payload = np.ascontiguousarray(data, dtype="<f4")
    header = MAGIC + struct.pack("<B", data.ndim) + struct.pack(f"<{data.ndim}I", *data.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())
