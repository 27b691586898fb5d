"""Shared primitives for the binary parsers: structured errors and a
bounds-checked little-endian byte reader.

Every read goes through ByteReader so corrupt or truncated inputs always
surface as ApkParseError with a byte offset, never as an IndexError or
a silent out-of-bounds slice.
"""

from __future__ import annotations

import struct


class ApkParseError(ValueError):
    """Structured parse failure with the offending byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset:#x})"
        super().__init__(message)


class NotAZipError(ApkParseError):
    """The input file is not a readable ZIP archive."""


class ByteReader:
    """Little-endian reads over an immutable buffer with strict bounds."""

    def __init__(self, data: bytes, context: str = ""):
        self.data = data
        self.context = context

    def __len__(self) -> int:
        return len(self.data)

    def _check(self, offset: int, size: int) -> None:
        if offset < 0 or offset + size > len(self.data):
            where = f" in {self.context}" if self.context else ""
            raise ApkParseError(
                f"read of {size} bytes past end of data{where}", offset
            )

    def bytes_at(self, offset: int, size: int) -> bytes:
        self._check(offset, size)
        return self.data[offset : offset + size]

    def u8(self, offset: int) -> int:
        self._check(offset, 1)
        return self.data[offset]

    def u16(self, offset: int) -> int:
        self._check(offset, 2)
        return struct.unpack_from("<H", self.data, offset)[0]

    def u32(self, offset: int) -> int:
        self._check(offset, 4)
        return struct.unpack_from("<I", self.data, offset)[0]

    def uleb128(self, offset: int) -> tuple[int, int]:
        """Decode an unsigned LEB128 value; returns (value, new_offset)."""
        result = 0
        shift = 0
        position = offset
        for _ in range(5):
            byte = self.u8(position)
            position += 1
            result |= (byte & 0x7F) << shift
            if byte < 0x80:
                return result, position
            shift += 7
        raise ApkParseError("uleb128 value longer than 5 bytes", offset)
