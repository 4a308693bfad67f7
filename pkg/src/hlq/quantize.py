"""Symmetric min-max quantizers and simulated integer matrix multiply.

Two rounding modes are provided: true stochastic rounding driven by an
explicit, splittable counter-based RNG, and a deterministic pseudo-stochastic
mode that reuses the low 11 mantissa bits of each input value as its uniform
draw. Both share the same symmetric scale rule: scale = max|t| / qmax with a
zero point of 0, so integer products need no cross terms.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError
from .tensor import DTYPE, Tensor

SUPPORTED_BITS = (4, 8)
# Contraction bounds that keep a 32-bit accumulator safe (we use 64-bit
# internally, so these are the advertised contract, not an implementation limit).
MAX_K = {8: 10**6, 4: 10**7}

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


@dataclass
class RngState:
    """Deterministic, splittable stream: a 64-bit seed plus a draw counter.

    Identical seeds give identical rounding decisions on every platform
    (counter-based Philox underneath). Derive independent child streams with
    ``split`` instead of sharing one state across concurrent call sites.
    """

    seed: int
    counter: int = 0

    def __post_init__(self):
        self.seed = int(self.seed) & _MASK64

    def split(self, *path: int) -> "RngState":
        key = self.seed
        for p in path:
            key = _splitmix64(key ^ _splitmix64(int(p) & _MASK64))
        return RngState(seed=key)

    def uniform(self, shape) -> np.ndarray:
        """Uniform [0, 1) draws; advances the counter."""
        key = np.array([self.seed, self.counter], dtype=np.uint64)
        self.counter += 1
        gen = np.random.Generator(np.random.Philox(key=key))
        return gen.random(size=shape)


@dataclass(frozen=True)
class QuantizedTensor:
    """Signed integer payload with a symmetric scale (zero point is always 0).

    ``scale`` is a float32 array: 0-d for per-tensor, or shaped with keepdims
    so it broadcasts against the payload for per-row granularity.
    """

    payload: np.ndarray
    bits: int
    scale: np.ndarray
    per_axis: int | None = None

    def __post_init__(self):
        self.payload.flags.writeable = False
        self.scale.flags.writeable = False

    @property
    def shape(self) -> tuple:
        return self.payload.shape

    @property
    def qmax(self) -> int:
        return (1 << (self.bits - 1)) - 1


def _check_bits(bits: int) -> int:
    if bits not in SUPPORTED_BITS:
        raise ParameterError(f"bits must be one of {SUPPORTED_BITS}, got {bits}")
    return (1 << (bits - 1)) - 1


def _scale_of(arr: np.ndarray, qmax: int, per_axis: int | None) -> np.ndarray:
    if per_axis is None:
        amax = np.max(np.abs(arr)) if arr.size else DTYPE(0)
        scale = np.asarray(amax, dtype=DTYPE) / DTYPE(qmax)
        if scale == 0:
            scale = np.asarray(1.0, dtype=DTYPE)
        return np.asarray(scale, dtype=DTYPE)
    axes = tuple(i for i in range(arr.ndim) if i != per_axis)
    amax = np.max(np.abs(arr), axis=axes, keepdims=True)
    scale = (amax / DTYPE(qmax)).astype(DTYPE)
    scale[amax == 0] = 1.0
    return scale


def _finish(q_up: np.ndarray, qmax: int, bits: int, scale: np.ndarray,
            per_axis: int | None) -> QuantizedTensor:
    payload = np.clip(q_up, -qmax, qmax).astype(np.int8)
    return QuantizedTensor(payload=payload, bits=bits, scale=scale, per_axis=per_axis)


def quant_stochastic(t: Tensor, bits: int, rng: RngState,
                     per_axis: int | None = None) -> QuantizedTensor:
    """Unbiased stochastic rounding: round up with probability frac(v/scale)."""
    qmax = _check_bits(bits)
    arr = t.data
    if not np.isfinite(arr).all():
        raise ValueError("cannot quantize non-finite values")
    scale = _scale_of(arr, qmax, per_axis)
    q = arr / scale
    lo = np.floor(q)
    up = (q - lo) > rng.uniform(arr.shape)
    return _finish(lo + up, qmax, bits, scale, per_axis)


def quant_pseudo_stochastic(t: Tensor, bits: int,
                            per_axis: int | None = None) -> QuantizedTensor:
    """Deterministic surrogate for stochastic rounding.

    The low 11 bits of each value's float32 pattern act as a uniform draw in
    [0, 2048): round up iff frac(v/scale) * 2048 > u. Exact lattice points
    (frac = 0) never round up, and repeated calls are bit-identical.
    """
    qmax = _check_bits(bits)
    arr = t.data
    if not np.isfinite(arr).all():
        raise ValueError("cannot quantize non-finite values")
    scale = _scale_of(arr, qmax, per_axis)
    q = arr / scale
    lo = np.floor(q)
    u = (arr.view(np.uint32) & np.uint32(0x7FF)).astype(DTYPE)
    up = (q - lo) * DTYPE(2048.0) > u
    return _finish(lo + up, qmax, bits, scale, per_axis)


def dequant(q: QuantizedTensor) -> Tensor:
    return Tensor._wrap(q.payload.astype(DTYPE) * q.scale)


def int_matmul(a: QuantizedTensor, b: QuantizedTensor):
    """Exact integer product of two quantized matrices.

    Returns ``(accumulator, combined_scale)`` where the int64 accumulator is
    the exact sum of payload products and combined_scale broadcasts against
    it (per-row scales of ``a`` ride on axis 0, per-column scales of ``b`` on
    axis 1). Internally the product runs through float64 BLAS, which is exact
    here because every intermediate is an integer far below 2**53.
    """
    if a.payload.ndim != 2 or b.payload.ndim != 2:
        raise DimensionError(
            f"int_matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner extents differ: {a.shape} @ {b.shape}")
    k = a.shape[1]
    k_bound = min(MAX_K[a.bits], MAX_K[b.bits])
    if k > k_bound:
        raise ParameterError(
            f"contraction extent {k} exceeds the overflow-safe bound {k_bound} "
            f"for {a.bits}x{b.bits}-bit operands")
    if a.per_axis not in (None, 0):
        raise ParameterError("left operand scales must be per-tensor or per-row (axis 0)")
    if b.per_axis not in (None, 1):
        raise ParameterError("right operand scales must be per-tensor or per-column (axis 1)")
    acc = (a.payload.astype(np.float64) @ b.payload.astype(np.float64)).astype(np.int64)
    combined = (a.scale * b.scale).astype(DTYPE)
    return acc, combined


def int_matmul_dequant(a: QuantizedTensor, b: QuantizedTensor,
                       extra_scale: float = 1.0) -> Tensor:
    """Integer product followed by dequantization, with an optional extra
    factor (e.g. a 1/B mean) folded into the combined scale."""
    acc, combined = int_matmul(a, b)
    out = acc.astype(np.float64) * (combined.astype(np.float64) * float(extra_scale))
    return Tensor._wrap(out.astype(DTYPE))
