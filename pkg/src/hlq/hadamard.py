"""Walsh-Hadamard machinery: dense matrices, the fast butterfly transform,
block-diagonal application along one axis, and low-rank basis selection /
projection.

Everything uses the orthonormal convention (entries +-1/sqrt(n)) so a
transform pair cancels exactly without extra rescaling. The transform is
symmetric, hence its own inverse. Basis indices refer to rows of the
Kronecker-ordered matrix; ties in selection break toward the lower index.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, ParameterError
from .tensor import DTYPE, Tensor, pad_axis, padded_extent

DEFAULT_BLOCK = 16
DEFAULT_RANK = 8
MAX_LOG2 = 10


def sequency_order(block_size: int) -> tuple:
    """Row indices of the Kronecker-ordered matrix sorted by sequency
    (number of sign changes), ties toward the lower index.

    The matrix itself stays in natural order; this is the static "keep the
    low frequencies" selection rule used when no calibration data exists.
    """
    if block_size < 2 or (block_size & (block_size - 1)) != 0:
        raise ParameterError(f"block size must be a power of two >= 2, got {block_size}")
    k = block_size.bit_length() - 1
    seqs = []
    for i in range(block_size):
        # Sequency of natural-order row i: Gray-decode the bit-reversed index.
        rev = int(format(i, f"0{k}b")[::-1], 2)
        g = rev
        g ^= g >> 1
        g ^= g >> 2
        g ^= g >> 4
        g ^= g >> 8
        seqs.append(g)
    return tuple(sorted(range(block_size), key=lambda i: (seqs[i], i)))


def lowest_sequency_bases(block_size: int, rank: int) -> tuple:
    """The ``rank`` lowest-sequency basis indices, sorted ascending."""
    return tuple(sorted(sequency_order(block_size)[:rank]))


@dataclass(frozen=True)
class HadamardPlan:
    """Configuration for block transforms: block size, target axis, kept bases."""

    block_size: int = DEFAULT_BLOCK
    axis: int = -1
    basis_indices: tuple = field(
        default_factory=lambda: lowest_sequency_bases(DEFAULT_BLOCK, DEFAULT_RANK))

    def __post_init__(self):
        n = self.block_size
        if n < 2 or (n & (n - 1)) != 0:
            raise ParameterError(f"block_size must be a power of two >= 2, got {n}")
        if n > (1 << MAX_LOG2):
            raise ParameterError(f"block_size {n} exceeds the supported maximum {1 << MAX_LOG2}")
        idx = tuple(int(i) for i in self.basis_indices)
        if not 1 <= len(idx) <= n:
            raise ParameterError(f"need between 1 and {n} basis indices, got {len(idx)}")
        if len(set(idx)) != len(idx) or list(idx) != sorted(idx):
            raise ParameterError("basis_indices must be distinct and sorted ascending")
        if idx[0] < 0 or idx[-1] >= n:
            raise ParameterError(f"basis indices must lie in [0, {n}), got {idx}")
        object.__setattr__(self, "basis_indices", idx)

    @property
    def rank(self) -> int:
        return len(self.basis_indices)

    @property
    def log2_block(self) -> int:
        return self.block_size.bit_length() - 1

    @property
    def full_rank(self) -> bool:
        return self.rank == self.block_size

    def with_rank(self, rank: int) -> "HadamardPlan":
        """Same block/axis with the ``rank`` lowest-sequency bases."""
        if not 1 <= rank <= self.block_size:
            raise ParameterError(f"rank must be in [1, {self.block_size}], got {rank}")
        return replace(self, basis_indices=lowest_sequency_bases(self.block_size, rank))

    def with_bases(self, basis_indices) -> "HadamardPlan":
        return replace(self, basis_indices=tuple(sorted(int(i) for i in basis_indices)))

    def basis_bitmap(self) -> int:
        bitmap = 0
        for i in self.basis_indices:
            bitmap |= 1 << i
        return bitmap

    @classmethod
    def from_bitmap(cls, block_size: int, bitmap: int, axis: int = -1) -> "HadamardPlan":
        idx = tuple(i for i in range(block_size) if bitmap >> i & 1)
        return cls(block_size=block_size, axis=axis, basis_indices=idx)


def walsh_matrix(k: int) -> Tensor:
    """Orthonormal 2^k x 2^k Walsh-Hadamard matrix via repeated Kronecker products."""
    if not isinstance(k, int) or not 1 <= k <= MAX_LOG2:
        raise ParameterError(f"k must be an integer in [1, {MAX_LOG2}], got {k!r}")
    h = np.array([[1]], dtype=np.int64)
    base = np.array([[1, 1], [1, -1]], dtype=np.int64)
    for _ in range(k):
        h = np.kron(base, h)
    n = 1 << k
    return Tensor._wrap(h.astype(DTYPE) * DTYPE(1.0 / np.sqrt(n)))


def _fwht_last_axis(arr: np.ndarray) -> np.ndarray:
    """In the last axis: n*log2(n) butterfly add/sub ops, then one 1/sqrt(n) pass."""
    n = arr.shape[-1]
    lead = arr.shape[:-1]
    x = np.ascontiguousarray(arr, dtype=DTYPE).reshape(-1, n)
    h = 1
    while h < n:
        x = x.reshape(-1, n // (2 * h), 2, h)
        a = x[:, :, 0, :]
        b = x[:, :, 1, :]
        x = np.concatenate((a + b, a - b), axis=2).reshape(-1, n)
        h *= 2
    x = x * DTYPE(1.0 / np.sqrt(n))
    return x.reshape(*lead, n)


def fwht(v: Tensor) -> Tensor:
    """Fast orthonormal Walsh-Hadamard transform of a power-of-two-length vector."""
    if v.ndim != 1:
        raise DimensionError(f"fwht expects a 1-D tensor, got shape {v.shape}")
    n = v.shape[0]
    if n < 2 or (n & (n - 1)) != 0:
        raise DimensionError(f"fwht length must be a power of two >= 2, got {n}")
    return Tensor._wrap(_fwht_last_axis(v.data))


def _block_transform_last(arr: np.ndarray, n: int) -> np.ndarray:
    """Independent n-point transforms over consecutive blocks of the last axis."""
    extent = arr.shape[-1]
    blocks = extent // n
    shaped = arr.reshape(*arr.shape[:-1], blocks, n)
    return _fwht_last_axis(shaped).reshape(*arr.shape[:-1], extent)


def block_ht(t: Tensor, plan: HadamardPlan, axis: int | None = None) -> Tensor:
    """Block-diagonal transform along one axis; the axis extent must already be
    a multiple of the block size (see ``pad_axis``). Symmetric: applying twice
    recovers the input."""
    axis = plan.axis if axis is None else axis
    axis = axis if axis >= 0 else t.ndim + axis
    if not 0 <= axis < t.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {t.shape}")
    extent = t.shape[axis]
    if extent % plan.block_size != 0:
        raise DimensionError(
            f"axis extent {extent} is not a multiple of block size {plan.block_size}; "
            "pad_axis first"
        )
    moved = np.moveaxis(t.data, axis, -1)
    out = _block_transform_last(np.ascontiguousarray(moved), plan.block_size)
    return Tensor._wrap(np.moveaxis(out, -1, axis))


def select_bases(calib: Tensor, rank: int) -> tuple:
    """Pick the ``rank`` indices with the largest mean absolute coefficient.

    ``calib`` holds per-block coefficient magnitudes (num_blocks x n) gathered
    from one calibration batch after a block transform. Ties break toward the
    lower index. Returns indices sorted ascending.
    """
    if calib.ndim != 2:
        raise DimensionError(f"calibration tensor must be 2-D, got shape {calib.shape}")
    n = calib.shape[1]
    if not 1 <= rank <= n:
        raise ParameterError(f"rank must be in [1, {n}], got {rank}")
    means = np.abs(calib.data).mean(axis=0)
    order = np.argsort(-means, kind="stable")
    return tuple(sorted(int(i) for i in order[:rank]))


def project_lowrank(t: Tensor, plan: HadamardPlan, axis: int | None = None) -> Tensor:
    """Block transform along the target axis, then keep only the selected bases
    per block. The axis shrinks by rank/block_size; non-multiple extents are
    zero-padded first."""
    if plan.full_rank:
        raise ParameterError("plan is full-rank; use block_ht instead of project_lowrank")
    axis = plan.axis if axis is None else axis
    axis = axis if axis >= 0 else t.ndim + axis
    if not 0 <= axis < t.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {t.shape}")
    n = plan.block_size
    padded = pad_axis(t, axis, n)
    moved = np.ascontiguousarray(np.moveaxis(padded.data, axis, -1))
    blocks = moved.shape[-1] // n
    coeffs = _fwht_last_axis(moved.reshape(*moved.shape[:-1], blocks, n))
    kept = coeffs[..., list(plan.basis_indices)]
    out = kept.reshape(*moved.shape[:-1], blocks * plan.rank)
    return Tensor._wrap(np.moveaxis(out, -1, axis))


def unproject_lowrank(
    t: Tensor, plan: HadamardPlan, original_extent: int, axis: int | None = None
) -> Tensor:
    """Scatter selected coefficients back to full blocks, inverse-transform,
    and crop the axis to ``original_extent``."""
    if plan.full_rank:
        raise ParameterError("plan is full-rank; use block_ht instead of unproject_lowrank")
    axis = plan.axis if axis is None else axis
    axis = axis if axis >= 0 else t.ndim + axis
    if not 0 <= axis < t.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {t.shape}")
    n, r = plan.block_size, plan.rank
    extent = t.shape[axis]
    if extent % r != 0:
        raise DimensionError(f"axis extent {extent} is not a multiple of rank {r}")
    blocks = extent // r
    if padded_extent(original_extent, n) != blocks * n:
        raise DimensionError(
            f"original extent {original_extent} is inconsistent with {blocks} blocks of {n}"
        )
    moved = np.ascontiguousarray(np.moveaxis(t.data, axis, -1))
    coeffs = np.zeros((*moved.shape[:-1], blocks, n), dtype=DTYPE)
    coeffs[..., list(plan.basis_indices)] = moved.reshape(*moved.shape[:-1], blocks, r)
    full = _fwht_last_axis(coeffs).reshape(*moved.shape[:-1], blocks * n)
    out = full[..., :original_extent]
    return Tensor._wrap(np.moveaxis(out, -1, axis))
