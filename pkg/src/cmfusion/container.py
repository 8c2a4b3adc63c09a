"""Binary container for named float32 tensors.

Layout (little-endian): 4-byte magic, u16 version, u16 entry count, then per
entry: u16 name length, UTF-8 name bytes, u8 rank, u32 dims[rank], f32 data
row-major.  Feature bundles use magic ``CMFB``, model checkpoints ``CMFC``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

VERSION = 1
BUNDLE_MAGIC = b"CMFB"
CHECKPOINT_MAGIC = b"CMFC"


def write_container(path, entries: dict[str, np.ndarray], magic: bytes = BUNDLE_MAGIC) -> None:
    """Write named arrays as float32; entry order follows dict order."""
    if len(magic) != 4:
        raise FormatError(f"magic must be 4 bytes, got {magic!r}")
    chunks = [magic, struct.pack("<HH", VERSION, len(entries))]
    for name, array in entries.items():
        encoded = name.encode("utf-8")
        arr = np.ascontiguousarray(array, dtype=np.float32)
        if arr.ndim > 255:
            raise FormatError(f"entry '{name}' rank {arr.ndim} exceeds format limit")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def read_container(path, magic: bytes = BUNDLE_MAGIC) -> dict[str, np.ndarray]:
    """Read a container back into an ordered name -> float32 array map."""
    blob = Path(path).read_bytes()
    offset = 0

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise FormatError(f"{path}: truncated while reading {what} at offset {offset}")
        piece = blob[offset:offset + n]
        offset += n
        return piece

    found = take(4, "magic")
    if found != magic:
        raise FormatError(f"{path}: bad magic {found!r} at offset 0, expected {magic!r}")
    version, count = struct.unpack("<HH", take(4, "header"))
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    entries: dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = struct.unpack("<H", take(2, f"entry {i} name length"))
        name = take(name_len, f"entry {i} name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, f"'{name}' rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"'{name}' dims"))
        n_values = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(4 * n_values, f"'{name}' data"), dtype="<f4")
        entries[name] = data.reshape(dims).copy()
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes at offset {offset}")
    return entries
