"""
Weight archive format.

    magic        8 bytes  b"CIDNETW1"
    fingerprint 32 bytes  SHA-256 of the network spec
    count        u32      number of arrays
    table        per array: u32 ndim, then ndim x u32 extents
    data         per array, in table order: little-endian f32, row-major

Arrays follow network.parameters(): layers in declaration order, each as
w_re, w_im, b_re, b_im (real layers: w, b).
"""

import logging
import struct
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from errors import (
    ArchiveError,
    ArchiveMagicError,
    ArchiveTruncatedError,
    DimensionError,
    FingerprintMismatchError,
)

logger = logging.getLogger("compounding.archive")

MAGIC = b"CIDNETW1"
FINGERPRINT_BYTES = 32
_U32 = struct.Struct("<I")


def archive_size(shapes: Sequence[Tuple[int, ...]]) -> int:
    table = sum(4 + 4 * len(s) for s in shapes)
    values = sum(int(np.prod(s, dtype=np.int64)) for s in shapes)
    return len(MAGIC) + FINGERPRINT_BYTES + 4 + table + 4 * values


def encode_archive(fingerprint: bytes, arrays: Sequence[np.ndarray]) -> bytes:
    if len(fingerprint) != FINGERPRINT_BYTES:
        raise ArchiveError(f"fingerprint must be {FINGERPRINT_BYTES} bytes")
    parts = [MAGIC, fingerprint, _U32.pack(len(arrays))]
    for arr in arrays:
        parts.append(_U32.pack(arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    for arr in arrays:
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_archive(payload: bytes) -> Tuple[bytes, List[np.ndarray]]:
    if payload[: len(MAGIC)] != MAGIC:
        raise ArchiveMagicError("not a weight archive (bad magic)")
    pos = len(MAGIC)

    def take(size: int) -> bytes:
        nonlocal pos
        if pos + size > len(payload):
            raise ArchiveTruncatedError(f"archive ends at byte {len(payload)}, needed {pos + size}")
        chunk = payload[pos : pos + size]
        pos += size
        return chunk

    fingerprint = take(FINGERPRINT_BYTES)
    (count,) = _U32.unpack(take(4))
    shapes = []
    for _ in range(count):
        (ndim,) = _U32.unpack(take(4))
        shapes.append(struct.unpack(f"<{ndim}I", take(4 * ndim)))
    arrays = []
    for shape in shapes:
        n = int(np.prod(shape, dtype=np.int64))
        raw = np.frombuffer(take(4 * n), dtype="<f4").reshape(shape)
        arrays.append(raw.astype(np.float64))
    if pos != len(payload):
        raise ArchiveError(f"{len(payload) - pos} trailing bytes after the last array")
    return fingerprint, arrays


def save_weights(network, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = encode_archive(network.spec.fingerprint(), network.parameters())
    path.write_bytes(payload)
    logger.info("wrote %s (%d bytes)", path, len(payload))
    return path


def read_archive(path) -> Tuple[bytes, List[np.ndarray]]:
    return decode_archive(Path(path).read_bytes())


def load_weights(path, network):
    """Fill a network built from the matching spec with archived weights."""
    fingerprint, arrays = read_archive(path)
    if fingerprint != network.spec.fingerprint():
        raise FingerprintMismatchError(f"{path} was written for a different network spec")
    try:
        network.set_parameters(arrays)
    except DimensionError as exc:
        raise ArchiveError(f"{path}: {exc}") from exc
    return network
