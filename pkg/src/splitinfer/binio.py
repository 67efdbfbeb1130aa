"""Little-endian binary IO helpers shared by the file formats.

All multi-byte integers in file formats are little-endian; network framing
(transport module) is big-endian and does not use these helpers.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ChecksumMismatch, TruncatedFile

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_U64_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes, state: int = FNV64_OFFSET) -> int:
    """FNV-1a 64-bit hash of ``data``, continuing from ``state``."""
    h = state
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _U64_MASK
    return h


class Writer:
    """Accumulates little-endian fields; the byte blob is checksummed last."""

    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def raw(self, data: bytes) -> None:
        self._parts.append(data)

    def u8(self, value: int) -> None:
        self.raw(struct.pack("<B", value))

    def u16(self, value: int) -> None:
        self.raw(struct.pack("<H", value))

    def u32(self, value: int) -> None:
        self.raw(struct.pack("<I", value))

    def u64(self, value: int) -> None:
        self.raw(struct.pack("<Q", value))

    def f32(self, value: float) -> None:
        self.raw(struct.pack("<f", value))

    def f32_array(self, values: np.ndarray) -> None:
        arr = np.ascontiguousarray(values, dtype="<f4")
        self.raw(arr.tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self._parts)

    def finish_with_checksum(self) -> bytes:
        """Append the FNV-1a-64 of everything written so far and return all bytes."""
        body = self.getvalue()
        return body + struct.pack("<Q", fnv1a64(body))


class Reader:
    """Cursor over a byte blob; raises TruncatedFile on short reads."""

    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(
                f"need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self.raw(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.raw(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.raw(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.raw(8))[0]

    def f32(self) -> float:
        return struct.unpack("<f", self.raw(4))[0]

    def f32_array(self, count: int) -> np.ndarray:
        raw = self.raw(4 * count)
        return np.frombuffer(raw, dtype="<f4").astype(np.float32)

    def remaining(self) -> int:
        return len(self.data) - self.pos


def check_trailing_fnv(data: bytes) -> bytes:
    """Verify the trailing 8-byte FNV-1a-64 checksum; return the body bytes."""
    if len(data) < 8:
        raise TruncatedFile("file shorter than its checksum")
    body, tail = data[:-8], data[-8:]
    (stored,) = struct.unpack("<Q", tail)
    actual = fnv1a64(body)
    if stored != actual:
        raise ChecksumMismatch(f"checksum {stored:#018x} != computed {actual:#018x}")
    return body
