"""Dense float32 tensors and the small shape algebra every other module relies on.

Values are immutable after construction, stored row-major, and carry 32-bit
float semantics end to end so that bit-level tricks downstream (pseudo-random
rounding from mantissa bits) are well defined.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError

DTYPE = np.float32
MAX_NDIM = 4


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=DTYPE)
    arr.flags.writeable = False
    return arr


class Tensor:
    """Immutable dense array of 32-bit floats, row-major, up to 4 axes."""

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.array(data, dtype=DTYPE, order="C")
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.ndim > MAX_NDIM:
            raise DimensionError(f"rank {arr.ndim} exceeds the supported maximum of {MAX_NDIM}")
        if not np.isfinite(arr).all():
            raise ValueError("tensor values must be finite (no NaN/Inf)")
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Internal fast path: trusts the caller, skips the finiteness scan.
        t = object.__new__(cls)
        t._data = _freeze(arr)
        return t

    @classmethod
    def zeros(cls, shape) -> "Tensor":
        return cls._wrap(np.zeros(shape, dtype=DTYPE))

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def tolist(self):
        return self._data.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


@dataclass(frozen=True)
class LayerDims:
    """Layer geometry: batch B, sequence length L (H*W for conv), input I, output O."""

    B: int
    L: int
    I: int
    O: int

    def __post_init__(self):
        for name in ("B", "L", "I", "O"):
            v = getattr(self, name)
            if not isinstance(v, int) or v <= 0:
                raise ParameterError(f"LayerDims.{name} must be a positive integer, got {v!r}")


def padded_extent(extent: int, multiple: int) -> int:
    """Smallest multiple of ``multiple`` that is >= extent."""
    if multiple < 1:
        raise ParameterError(f"multiple must be >= 1, got {multiple}")
    return -(-extent // multiple) * multiple


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """c[m, n] = sum_k a[m, k] * b[k, n] for 2-D operands."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner extents differ: {a.shape} @ {b.shape}")
    return Tensor._wrap(a.data @ b.data)


def reshape(t: Tensor, shape) -> Tensor:
    """Row-major data relocation; element count must be preserved."""
    shape = tuple(int(s) for s in shape)
    n = 1
    for s in shape:
        n *= s
    if n != t.size:
        raise DimensionError(f"cannot reshape {t.shape} ({t.size} elements) to {shape} ({n})")
    if len(shape) > MAX_NDIM:
        raise DimensionError(f"rank {len(shape)} exceeds the supported maximum of {MAX_NDIM}")
    return Tensor._wrap(t.data.reshape(shape))


def transpose(t: Tensor, axes=None) -> Tensor:
    """Permute axes (reverse them when ``axes`` is None)."""
    return Tensor._wrap(np.transpose(t.data, axes))


def pad_axis(t: Tensor, axis: int, to_multiple: int) -> Tensor:
    """Zero-pad ``axis`` so its extent becomes a multiple of ``to_multiple``."""
    axis = axis if axis >= 0 else t.ndim + axis
    if not 0 <= axis < t.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {t.shape}")
    target = padded_extent(t.shape[axis], to_multiple)
    if target == t.shape[axis]:
        return t
    widths = [(0, 0)] * t.ndim
    widths[axis] = (0, target - t.shape[axis])
    return Tensor._wrap(np.pad(t.data, widths))
