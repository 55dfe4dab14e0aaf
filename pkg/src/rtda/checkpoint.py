"""Binary checkpoint format.

Layout: magic `RTDA`, u32 version, u64 iteration, u32 tensor count,
then per tensor a u16 name length, the UTF-8 name, a u8 rank, one u32
per dimension, and the float32 payload, all little-endian; the file ends
with a u64 checksum equal to the sum of every preceding byte mod 2^64.
Tensors are written in sorted name order so identical contents always
produce identical bytes.

Everything stored is float32. Integer state (iteration counters, RNG
seeds) rides along exactly as long as each stored limb stays below 2^24;
callers split wider values into 16-bit limbs.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"RTDA"
VERSION = 1


class CheckpointError(ValueError):
    pass


def seed_to_limbs(seed: int) -> np.ndarray:
    """64-bit value as four base-2^16 limbs, low first, exact in float32."""
    if not 0 <= seed < 2**64:
        raise ValueError("seed must fit in 64 bits")
    return np.array([(seed >> (16 * i)) & 0xFFFF for i in range(4)], dtype=np.float32)


def limbs_to_seed(limbs: np.ndarray) -> int:
    vals = [int(v) for v in np.asarray(limbs).reshape(-1)]
    if len(vals) != 4 or any(not 0 <= v < 2**16 for v in vals):
        raise CheckpointError("malformed seed limbs")
    return sum(v << (16 * i) for i, v in enumerate(vals))


def serialize(iteration: int, tensors: dict) -> bytes:
    if iteration < 0:
        raise ValueError("iteration must be nonnegative")
    parts = [MAGIC, struct.pack("<IQ I", VERSION, iteration, len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        if arr.dtype != np.float32:
            raise CheckpointError(f"tensor {name} must be float32, got {arr.dtype}")
        if arr.ndim > 255:
            raise CheckpointError(f"tensor {name} rank {arr.ndim} exceeds format limit")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:32]}...")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    checksum = sum(body) & 0xFFFFFFFFFFFFFFFF
    return body + struct.pack("<Q", checksum)


def deserialize(blob: bytes):
    if len(blob) < 28:
        raise CheckpointError("truncated checkpoint")
    if blob[:4] != MAGIC:
        raise CheckpointError("bad magic")
    body, (stored,) = blob[:-8], struct.unpack("<Q", blob[-8:])
    if sum(body) & 0xFFFFFFFFFFFFFFFF != stored:
        raise CheckpointError("checksum mismatch")
    version, iteration, count = struct.unpack("<IQ I", blob[4:20])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 20
    tensors = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<B", blob, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            n = int(np.prod(dims, dtype=np.int64)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(dims)
            off += 4 * n
            tensors[name] = arr.astype(np.float32, copy=True)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    if off != len(body):
        raise CheckpointError("trailing bytes after last tensor")
    return iteration, tensors


def save_checkpoint(path: str, iteration: int, tensors: dict) -> None:
    blob = serialize(iteration, tensors)
    with open(path, "wb") as f:
        f.write(blob)


def load_checkpoint(path: str):
    with open(path, "rb") as f:
        return deserialize(f.read())
