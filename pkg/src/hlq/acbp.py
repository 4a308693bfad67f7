"""Bit-exact container for compressed activations.

Layout (all integers little-endian):

    magic   4 bytes   b"ACBP"
    version u16       currently 1
    bits    u8        quantizer width (4 or 8)
    block_n u8        transform block size (power of two, <= 16)
    rank    u16       number of kept bases
    bitmap  u16       kept-basis bitmap (bit i set <=> basis i kept)
    ndims   u8        always 3 in version 1
    dims    u32 * 3   ORIGINAL activation shape (B, L, I)
    nscales u32       always 1 in version 1 (per-tensor scale)
    scales  f32 * 1
    payload           int8 values raw, or int4 packed two per byte
                      (low nibble first, final high nibble zero when odd)
    crc     u32       CRC32 of every prior byte

The payload extent is not stored: it is derived from (B, L, I), block_n and
rank through the same axis rule the compressor uses, so a container is
self-describing and the pack/unpack round trip is byte-exact.
"""
from __future__ import annotations

import struct
import zlib

import numpy as np

from .backprop import ACBPActivation, ht_axis_for
from .errors import FormatError, ParameterError
from .hadamard import HadamardPlan
from .quantize import QuantizedTensor
from .tensor import padded_extent

MAGIC = b"ACBP"
VERSION = 1
_HEAD = struct.Struct("<4sHBBHHB")  # magic, version, bits, block_n, rank, bitmap, ndims


def _container_axis(B: int, L: int, block: int) -> int:
    """Deterministic axis rule used for both packing and size derivation."""
    if L >= block or B >= block:
        return ht_axis_for(B, L, block)
    return 1 if L >= B else 0


def projected_shape(orig_shape: tuple, plan: HadamardPlan, axis: int) -> tuple:
    extent = orig_shape[axis]
    blocks = padded_extent(extent, plan.block_size) // plan.block_size
    shape = list(orig_shape)
    shape[axis] = blocks * plan.rank
    return tuple(shape)


def _pack_nibbles(payload: np.ndarray) -> bytes:
    flat = payload.reshape(-1).astype(np.int64)
    if flat.size % 2:
        flat = np.concatenate([flat, np.zeros(1, dtype=np.int64)])
    nib = (flat & 0xF).reshape(-1, 2)
    return (nib[:, 0] | (nib[:, 1] << 4)).astype(np.uint8).tobytes()


def _unpack_nibbles(raw: bytes, count: int) -> np.ndarray:
    b = np.frombuffer(raw, dtype=np.uint8)
    lo = (b & 0xF).astype(np.int16)
    hi = ((b >> 4) & 0xF).astype(np.int16)
    vals = np.empty(b.size * 2, dtype=np.int16)
    vals[0::2] = lo
    vals[1::2] = hi
    vals = vals[:count]
    vals[vals >= 8] -= 16
    return vals.astype(np.int8)


def acbp_pack(acbp: ACBPActivation) -> bytes:
    """Serialize a compressed activation; see the module docstring for layout."""
    q = acbp.quantized
    plan = acbp.plan
    if plan.block_size > 16:
        raise ParameterError("container format supports block sizes up to 16")
    if q.per_axis is not None:
        raise ParameterError("container format supports per-tensor scales only")
    if len(acbp.orig_shape) != 3:
        raise ParameterError(f"expected an original shape (B, L, I), got {acbp.orig_shape}")
    B, L, I = acbp.orig_shape
    if _container_axis(B, L, plan.block_size) != acbp.axis:
        raise ParameterError("activation axis is inconsistent with the container axis rule")
    out = bytearray()
    out += _HEAD.pack(MAGIC, VERSION, q.bits, plan.block_size, plan.rank,
                      plan.basis_bitmap(), 3)
    out += struct.pack("<3I", B, L, I)
    out += struct.pack("<I", 1)
    out += struct.pack("<f", float(q.scale))
    if q.bits == 8:
        out += q.payload.astype(np.int8).tobytes()
    else:
        out += _pack_nibbles(q.payload)
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated container: missing {what}", self.pos)
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def f32(self, what: str) -> float:
        return struct.unpack("<f", self.take(4, what))[0]


def acbp_unpack(buf: bytes) -> ACBPActivation:
    """Parse and validate a container, reporting the offset of the first
    violation; corrupt input raises FormatError, never crashes."""
    r = _Reader(buf)
    at = r.pos
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic", at)
    at = r.pos
    version = r.u16("version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", at)
    at = r.pos
    bits = r.u8("bits")
    if bits not in (4, 8):
        raise FormatError(f"unsupported bit width {bits}", at)
    at = r.pos
    block = r.u8("block size")
    if block not in (2, 4, 8, 16):
        raise FormatError(f"unsupported block size {block}", at)
    at = r.pos
    rank = r.u16("rank")
    if not 1 <= rank <= block:
        raise FormatError(f"rank {rank} out of range for block size {block}", at)
    at = r.pos
    bitmap = r.u16("basis bitmap")
    if bitmap >> block:
        raise FormatError(f"basis bitmap {bitmap:#06x} has bits beyond the block", at)
    if bin(bitmap).count("1") != rank:
        raise FormatError(f"basis bitmap {bitmap:#06x} does not select {rank} bases", at)
    at = r.pos
    ndims = r.u8("ndims")
    if ndims != 3:
        raise FormatError(f"unsupported ndims {ndims}", at)
    at = r.pos
    dims = struct.unpack("<3I", r.take(12, "dims"))
    at = r.pos
    nscales = r.u32("scale count")
    if nscales != 1:
        raise FormatError(f"unsupported scale count {nscales}", at)
    at = r.pos
    scale = r.f32("scale")
    if not np.isfinite(scale) or scale <= 0:
        raise FormatError(f"scale must be positive and finite, got {scale}", at)

    plan = HadamardPlan.from_bitmap(block, bitmap)
    B, L, I = (int(d) for d in dims)
    axis = _container_axis(B, L, block)
    shape = projected_shape((B, L, I), plan, axis)
    count = shape[0] * shape[1] * shape[2]
    payload_bytes = count if bits == 8 else (count + 1) // 2
    at = r.pos
    expected = r.pos + payload_bytes + 4
    if len(buf) != expected:
        raise FormatError(
            f"container length {len(buf)} does not match the declared shape "
            f"(expected {expected})", at)
    raw = r.take(payload_bytes, "payload")
    if bits == 8:
        payload = np.frombuffer(raw, dtype=np.int8).copy()
        bad = np.flatnonzero(payload == -128)
        if bad.size:
            raise FormatError("payload value out of the symmetric int8 range", at + int(bad[0]))
    else:
        payload = _unpack_nibbles(raw, count)
        bad = np.flatnonzero(payload == -8)
        if bad.size:
            raise FormatError("payload value out of the symmetric int4 range",
                              at + int(bad[0]) // 2)
        if count % 2 and payload_bytes and (raw[-1] >> 4):
            raise FormatError("nonzero padding nibble", at + payload_bytes - 1)
    at = r.pos
    stored_crc = r.u32("crc")
    actual_crc = zlib.crc32(buf[:at]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise FormatError(
            f"crc mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}", at)

    q = QuantizedTensor(payload=payload.reshape(shape), bits=bits,
                        scale=np.asarray(scale, dtype=np.float32))
    return ACBPActivation(quantized=q, orig_shape=(B, L, I), axis=axis, plan=plan)


def header_nbytes(ndims: int = 3, num_scales: int = 1) -> int:
    """Container overhead excluding the payload (header, scales and CRC)."""
    return _HEAD.size + 4 * ndims + 4 + 4 * num_scales + 4
