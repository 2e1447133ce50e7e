"""Self-describing container for PPM-coded fields.

On-disk layout: a 64-byte little-endian header followed by the arithmetic-coded
payload::

    magic    4s   b"WPPM"
    version  u16
    flags    u16  bit 0: payload codes raw float32 bytes (no quantization)
    height   u32
    width    u32
    min      f64  field minimum used for ranging to [-1, 1]
    max      f64  field maximum
    mu       f64  companding constant (0 when unused)
    alphabet u32  number of quantization levels Q (256 in raw mode)
    order    u8   PPM context order
    (3 pad bytes)
    length   u32  payload length in bytes
    crc32    u32  CRC-32 of the payload
    (8 reserved bytes)
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from ..errors import DecodeError
from . import ppm

MAGIC = b"WPPM"
VERSION = 1
FLAG_RAW_FLOAT32 = 1
FLAG_RAW_FLOAT64 = 2
HEADER = struct.Struct("<4sHHIIdddIB3xII8x")
HEADER_SIZE = HEADER.size
assert HEADER_SIZE == 64


@dataclass(frozen=True)
class CompressedBlob:
    payload: bytes
    shape: tuple[int, int]
    vmin: float = 0.0
    vmax: float = 0.0
    mu: float = 0.0
    alphabet: int = 256
    order: int = 3
    flags: int = 0
    version: int = VERSION

    @property
    def n_symbols(self) -> int:
        n = self.shape[0] * self.shape[1]
        if self.flags & FLAG_RAW_FLOAT64:
            return 8 * n
        return 4 * n if self.flags & FLAG_RAW_FLOAT32 else n

    def to_bytes(self) -> bytes:
        header = HEADER.pack(MAGIC, self.version, self.flags, self.shape[0], self.shape[1],
                             self.vmin, self.vmax, self.mu, self.alphabet, self.order,
                             len(self.payload), zlib.crc32(self.payload))
        return header + self.payload

    def __len__(self) -> int:
        return HEADER_SIZE + len(self.payload)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CompressedBlob":
        if len(data) < HEADER_SIZE:
            raise DecodeError(f"blob shorter than the {HEADER_SIZE}-byte header")
        (magic, version, flags, h, w, vmin, vmax, mu, alphabet, order, length,
         crc) = HEADER.unpack_from(data)
        if magic != MAGIC:
            raise DecodeError(f"bad magic {magic!r}")
        if version != VERSION:
            raise DecodeError(f"unsupported blob version {version}")
        payload = bytes(data[HEADER_SIZE:])
        if len(payload) != length:
            raise DecodeError(f"payload length {len(payload)} != header length {length}")
        if zlib.crc32(payload) != crc:
            raise DecodeError("payload CRC-32 mismatch")
        return cls(payload, (h, w), vmin, vmax, mu, alphabet, order, flags, version)


def ppm_compress(symbols, alphabet: int, order: int = 3, *, shape: tuple[int, int] | None = None,
                 vmin: float = 0.0, vmax: float = 0.0, mu: float = 0.0, flags: int = 0) -> CompressedBlob:
    """PPM-code a symbol sequence into a :class:`CompressedBlob`.

    A flat sequence is stored with shape ``(1, n)``.
    """
    s = np.asarray(symbols).ravel()
    if shape is None:
        shape = (1, s.size)
    payload = ppm.encode_symbols(s, alphabet, order)
    return CompressedBlob(payload, (int(shape[0]), int(shape[1])), float(vmin), float(vmax),
                          float(mu), int(alphabet), int(order), int(flags))


def ppm_decompress(blob: CompressedBlob | bytes) -> np.ndarray:
    """Recover the exact symbol sequence (flat) stored in ``blob``."""
    if not isinstance(blob, CompressedBlob):
        blob = CompressedBlob.from_bytes(blob)
    return ppm.decode_symbols(blob.payload, blob.n_symbols, blob.alphabet, blob.order)
