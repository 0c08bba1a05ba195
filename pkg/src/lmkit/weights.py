"""Bit-exact weight container (`.lmkw`) and canonical-name validation.

Layout, all little-endian:

    magic "LMKW" (4 bytes) | format version u32 = 1 | tensor count u64
    per tensor:
        name length u32 | name bytes (UTF-8)
        dtype u8 (0 = f32, 1 = f16) | rank u8 | extents u64 each
        raw row-major data, zero-padded so the next record starts at an
        8-byte file offset
    CRC32 of every preceding byte, u32

Round trips are bit-exact, including dtype and entry order.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .arch import weight_schema
from .config import ModelConfig
from .tensor import MAX_RANK, Tensor

MAGIC = b"LMKW"
FORMAT_VERSION = 1

_DTYPE_CODES = {"f32": 0, "f16": 1}
_CODE_DTYPES = {0: np.float32, 1: np.float16}
_CODE_NAMES = {0: "f32", 1: "f16"}


class ContainerError(ValueError):
    """Base class for container format failures."""


class BadMagicError(ContainerError):
    pass


class UnsupportedVersionError(ContainerError):
    pass


class TruncatedContainerError(ContainerError):
    pass


class ChecksumError(ContainerError):
    pass


class WeightStore:
    """Ordered, immutable mapping of canonical names to tensors."""

    def __init__(self, entries=()):
        self._entries: dict[str, Tensor] = {}
        for name, value in entries:
            self.add(name, value)

    def add(self, name: str, value) -> None:
        if name in self._entries:
            raise ValueError(f"duplicate weight name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        self._entries[name] = t

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries.items())

    @property
    def names(self) -> list[str]:
        return list(self._entries)

    def get(self, name: str) -> Tensor:
        try:
            return self._entries[name]
        except KeyError:
            raise KeyError(f"missing weight {name!r}") from None

    def subset(self, prefix: str) -> dict[str, Tensor]:
        """Entries under `prefix.`, keyed by the remaining suffix."""
        p = prefix + "."
        return {name[len(p):]: t for name, t in self._entries.items() if name.startswith(p)}

    def element_count(self) -> int:
        return sum(t.size for t in self._entries.values())

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeightStore):
            return NotImplemented
        if self.names != other.names:
            return False
        return all(self._entries[n] == other._entries[n] for n in self._entries)


def save(store: WeightStore, path) -> None:
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", FORMAT_VERSION)
    buf += struct.pack("<Q", len(store))
    for name, t in store:
        raw = name.encode("utf-8")
        buf += struct.pack("<I", len(raw))
        buf += raw
        buf += struct.pack("<BB", _DTYPE_CODES[t.dtype], t.rank)
        buf += struct.pack(f"<{t.rank}Q", *t.shape)
        data = t.data.tobytes()
        if not _little_endian_native():  # pragma: no cover - x86/arm are LE
            data = t.data.byteswap().tobytes()
        buf += data
        if len(buf) % 8:
            buf += bytes(8 - len(buf) % 8)
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    with open(path, "wb") as f:
        f.write(bytes(buf))


def load(path) -> WeightStore:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a LMKW container (magic {blob[:4]!r})")
    if len(blob) < 20:
        raise TruncatedContainerError(f"{path}: {len(blob)} bytes is shorter than header + checksum")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    actual_crc = zlib.crc32(blob[:-4])
    if stored_crc != actual_crc:
        raise ChecksumError(f"{path}: CRC mismatch (stored {stored_crc:#010x}, computed {actual_crc:#010x})")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    count = struct.unpack("<Q", blob[8:16])[0]
    body = blob[:-4]
    pos = 16
    store = WeightStore()
    for _ in range(count):
        pos, name_len = _take(body, pos, 4, path, "name length")
        (n,) = struct.unpack("<I", name_len)
        pos, raw = _take(body, pos, n, path, "name")
        name = raw.decode("utf-8")
        pos, meta = _take(body, pos, 2, path, f"{name}: dtype/rank")
        code, rank = struct.unpack("<BB", meta)
        if code not in _CODE_DTYPES:
            raise ContainerError(f"{path}: {name}: unknown dtype code {code}")
        if rank < 1 or rank > MAX_RANK:
            raise ContainerError(f"{path}: {name}: rank {rank} outside 1..{MAX_RANK}")
        pos, ext = _take(body, pos, 8 * rank, path, f"{name}: extents")
        shape = struct.unpack(f"<{rank}Q", ext)
        dtype = _CODE_DTYPES[code]
        nbytes = int(np.prod(shape)) * np.dtype(dtype).itemsize
        pos, data = _take(body, pos, nbytes, path, f"{name}: data")
        arr = np.frombuffer(data, dtype=dtype).reshape(shape)
        if not _little_endian_native():  # pragma: no cover
            arr = arr.byteswap()
        store.add(name, Tensor(arr.copy(), dtype=_CODE_NAMES[code]))
        if pos % 8:
            pos, _ = _take(body, pos, 8 - pos % 8, path, f"{name}: padding")
    if pos != len(body):
        raise ContainerError(f"{path}: {len(body) - pos} trailing bytes after last tensor")
    return store


def _take(body: bytes, pos: int, n: int, path, what: str) -> tuple[int, bytes]:
    if pos + n > len(body):
        raise TruncatedContainerError(f"{path}: truncated while reading {what}")
    return pos + n, body[pos:pos + n]


def _little_endian_native() -> bool:
    return np.dtype(np.float32).byteorder in ("<", "=") and struct.pack("=I", 1) == struct.pack("<I", 1)


# ---------------------------------------------------------------------------
# schema validation and initialization


class ValidationReport:
    def __init__(self, missing, extra, mismatched):
        self.missing = list(missing)
        self.extra = list(extra)
        self.mismatched = list(mismatched)  # (name, actual_shape, expected_shape)

    @property
    def ok(self) -> bool:
        return not (self.missing or self.extra or self.mismatched)

    def summary(self) -> str:
        if self.ok:
            return "weights match the config schema"
        lines = []
        for n in self.missing:
            lines.append(f"missing: {n}")
        for n in self.extra:
            lines.append(f"extra: {n}")
        for n, actual, expected in self.mismatched:
            lines.append(f"shape mismatch: {n} has {actual}, expected {expected}")
        return "\n".join(lines)


def validate_against_config(store: WeightStore, config: ModelConfig) -> ValidationReport:
    schema = weight_schema(config)
    names = set(store.names)
    missing = [n for n in schema if n not in names]
    extra = [n for n in store.names if n not in schema]
    mismatched = []
    for n, expected in schema.items():
        if n in names and store.get(n).shape != expected:
            mismatched.append((n, store.get(n).shape, expected))
    return ValidationReport(missing, extra, mismatched)


def random_init_store(config: ModelConfig, seed: int = 0, dtype: str = "f32") -> WeightStore:
    """He-style random weights for every name in the canonical schema."""
    rng = np.random.default_rng(seed)
    store = WeightStore()
    for name, shape in weight_schema(config).items():
        if name.endswith(".gamma"):
            arr = np.ones(shape, dtype=np.float32)
        elif name.endswith(".beta") or name.endswith(".bias"):
            arr = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            std = np.sqrt(2.0 / max(fan_in, 1))
            arr = rng.normal(0.0, std, size=shape).astype(np.float32)
        store.add(name, Tensor(arr, dtype=dtype))
    return store
