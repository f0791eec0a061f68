"""Multi-chain sample archive and its binary ``.bnns`` file format.

Layout (all integers little-endian)::

    magic    b"BNNS"                          4 bytes
    version  u32 (= 1)
    n_layers u32
    per affine layer: rows u32, cols u32, has_bias u8
    K        u32    number of chains
    S        u64    samples per chain
    seed     u64
    config   32-byte hash of the resolved run configuration
    payload  K * S * d float64, chain-major, then sample-major, then flat layout
    checksum u64    FNV-1a over the payload bytes

The checksum is written last so a file is only valid once complete.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

MAGIC = b"BNNS"
VERSION = 1
FNV_OFFSET = np.uint64(0xCBF29CE484222325)
FNV_PRIME = np.uint64(0x100000001B3)


class StoreError(Exception):
    code = "store"


class BadMagicError(StoreError):
    code = "bad_magic"


class VersionError(StoreError):
    code = "version_mismatch"


class TruncatedError(StoreError):
    code = "truncated"


class ChecksumError(StoreError):
    code = "checksum"


@numba.njit(cache=True)
def _fnv1a(data, h, prime):
    for b in data:
        h = (h ^ np.uint64(b)) * prime
    return h


def fnv1a64(data: bytes | np.ndarray) -> int:
    buf = np.frombuffer(data, dtype=np.uint8) if isinstance(data, (bytes, bytearray, memoryview)) else data.view(np.uint8).reshape(-1)
    return int(_fnv1a(buf, FNV_OFFSET, FNV_PRIME))


def config_hash(text: str) -> bytes:
    return hashlib.sha256(text.encode("utf-8")).digest()


@dataclass
class SampleStore:
    """Posterior draws ``samples[k, s, :]`` of ``K`` chains with ``S`` retained draws each.

    ``layer_shapes`` is a list of ``(rows, cols, has_bias)`` describing the
    flat layout; ``chain_meta`` holds per-chain dicts (acceptance rate,
    warmup length, init kind, ...) that are persisted next to the binary file.
    """

    samples: np.ndarray
    layer_shapes: list[tuple[int, int, bool]]
    seed: int = 0
    config_hash: bytes = b"\x00" * 32
    chain_meta: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 3:
            raise ValueError("samples must have shape (K, S, d)")
        d = sum(r * c + (r if b else 0) for r, c, b in self.layer_shapes)
        if d != self.samples.shape[2]:
            raise ValueError(f"layer shapes describe d={d}, samples have d={self.samples.shape[2]}")
        if len(self.config_hash) != 32:
            raise ValueError("config hash must be 32 bytes")
        if not self.chain_meta:
            self.chain_meta = [{} for _ in range(self.n_chains)]

    @classmethod
    def empty(cls, n_chains: int, n_samples: int, layer_shapes, **kw) -> "SampleStore":
        d = sum(r * c + (r if b else 0) for r, c, b in layer_shapes)
        return cls(np.full((n_chains, n_samples, d), np.nan), list(layer_shapes), **kw)

    @classmethod
    def for_spec(cls, spec, samples, **kw) -> "SampleStore":
        shapes = [(r, c, b) for (r, c), b in zip(spec.shapes, spec.layer_bias)]
        return cls(samples, shapes, **kw)

    @classmethod
    def flat(cls, samples, **kw) -> "SampleStore":
        """Store for a non-network target: one bias-free 1 x d 'layer'."""
        samples = np.asarray(samples, dtype=np.float64)
        return cls(samples, [(1, samples.shape[2], False)], **kw)

    def write_chain(self, k: int, draws: np.ndarray) -> None:
        """Fill chain slot ``k``; slots are disjoint so writers never interleave."""
        self.samples[k] = draws

    @property
    def n_chains(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def dim(self) -> int:
        return self.samples.shape[2]

    def pooled(self) -> np.ndarray:
        return self.samples.reshape(-1, self.dim)

    @property
    def failed_chains(self) -> list[int]:
        return [k for k, m in enumerate(self.chain_meta) if m.get("failed")]

    def header_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<II", VERSION, len(self.layer_shapes))]
        for r, c, b in self.layer_shapes:
            parts.append(struct.pack("<IIB", r, c, 1 if b else 0))
        parts.append(struct.pack("<IQQ", self.n_chains, self.n_samples, self.seed))
        parts.append(self.config_hash)
        return b"".join(parts)

    def to_bytes(self) -> bytes:
        payload = np.ascontiguousarray(self.samples, dtype="<f8")
        return self.header_bytes() + payload.tobytes() + struct.pack("<Q", fnv1a64(payload))


def save(store: SampleStore, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(store.to_bytes())
    os.replace(tmp, path)


def _take(buf: memoryview, pos: int, n: int, what: str):
    if pos + n > len(buf):
        raise TruncatedError(f"file truncated while reading {what}")
    return buf[pos:pos + n], pos + n


def from_bytes(data: bytes) -> SampleStore:
    buf = memoryview(data)
    raw, pos = _take(buf, 0, 4, "magic")
    if bytes(raw) != MAGIC:
        raise BadMagicError(f"bad magic {bytes(raw)!r}")
    raw, pos = _take(buf, pos, 8, "version")
    version, n_layers = struct.unpack("<II", raw)
    if version != VERSION:
        raise VersionError(f"unsupported store version {version}")
    shapes = []
    for _ in range(n_layers):
        raw, pos = _take(buf, pos, 9, "layer shape")
        r, c, b = struct.unpack("<IIB", raw)
        shapes.append((r, c, bool(b)))
    raw, pos = _take(buf, pos, 20, "counts")
    K, S, seed = struct.unpack("<IQQ", raw)
    chash, pos = _take(buf, pos, 32, "config hash")
    d = sum(r * c + (r if b else 0) for r, c, b in shapes)
    payload, pos = _take(buf, pos, K * S * d * 8, "payload")
    raw, pos = _take(buf, pos, 8, "checksum")
    (checksum,) = struct.unpack("<Q", raw)
    if pos != len(buf):
        raise StoreError(f"{len(buf) - pos} trailing bytes after checksum")
    arr = np.frombuffer(payload, dtype="<f8")
    if fnv1a64(arr) != checksum:
        raise ChecksumError("payload checksum mismatch")
    samples = arr.astype(np.float64).reshape(K, S, d)
    return SampleStore(samples, shapes, seed, bytes(chash))


def load(path) -> SampleStore:
    return from_bytes(Path(path).read_bytes())
