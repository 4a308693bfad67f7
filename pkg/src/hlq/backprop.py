"""Backward-pass strategies for linear (or im2col'd convolution) layers.

For an input x (B, L, I), weight w (O, I) and upstream gradient gy (B, L, O),
the exact backward is

    grad_weight = (1/B) * gy_flat^T @ x_flat        (O, I)
    grad_input  = gy @ w                            (B, L, I)

Every strategy here reshapes one or both of these products: plain operand
quantization, Hadamard-transformed quantization (outlier suppression before
the quantizer), low-rank basis truncation along L (or B when L is short), and
the combined scheme that quantizes the input-gradient product to int4 at full
rank while running the weight-gradient product at int8 on half the bases.
The forward-time compressed activation (projected + quantized, raw input
dropped) is what gets retained for the weight-gradient path.

Quantized paths take an optional RngState: pass one for true stochastic
rounding (splitting per operand), omit it for the deterministic
pseudo-stochastic mode.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, ParameterError, StateError
from .hadamard import (
    DEFAULT_BLOCK,
    DEFAULT_RANK,
    HadamardPlan,
    _fwht_last_axis,
    lowest_sequency_bases,
)
from .quantize import QuantizedTensor, RngState, int_matmul_dequant, quant_pseudo_stochastic, quant_stochastic
from .tensor import DTYPE, Tensor, pad_axis, padded_extent

GX_MODES = ("fp", "quant", "ht_quant", "lowrank")
GW_MODES = ("fp", "quant", "ht_quant", "lowrank", "lowrank_quant")

# Fixed stream tags so each quantization site draws from its own split.
_TAG_GX_LEFT, _TAG_GX_RIGHT = 11, 12
_TAG_GW_LEFT, _TAG_GW_RIGHT = 21, 22


@dataclass(frozen=True)
class GradPair:
    """Gradients matching the layer's input and weight shapes exactly."""

    grad_input: Tensor
    grad_weight: Tensor


@dataclass(frozen=True)
class PathSpec:
    """One gradient path: computation mode plus quantizer width.

    ``bits=None`` on a quantizing mode means "transforms only, float GEMM" —
    the debug configuration used to check exact degeneration.
    """

    mode: str
    bits: int | None = None


@dataclass(frozen=True)
class BackwardStrategy:
    """Per-layer backward configuration; exactly one variant active at a time."""

    name: str
    grad_input_path: PathSpec
    grad_weight_path: PathSpec
    plan: HadamardPlan = field(default_factory=HadamardPlan)
    pad_small_axes: bool = False
    store_compressed: bool = True

    def __post_init__(self):
        gx, gw = self.grad_input_path, self.grad_weight_path
        if gx.mode not in GX_MODES:
            raise ParameterError(f"unknown grad_input mode {gx.mode!r}")
        if gw.mode not in GW_MODES:
            raise ParameterError(f"unknown grad_weight mode {gw.mode!r}")
        for spec in (gx, gw):
            if spec.mode in ("fp", "lowrank") and spec.bits is not None:
                raise ParameterError(f"mode {spec.mode!r} does not quantize; bits must be None")
            if spec.bits is not None and spec.bits not in (4, 8):
                raise ParameterError(f"bits must be 4 or 8, got {spec.bits}")

    # -- presets --------------------------------------------------------

    @classmethod
    def vanilla(cls) -> "BackwardStrategy":
        return cls("vanilla", PathSpec("fp"), PathSpec("fp"))

    @classmethod
    def naive_quant(cls, bits: int = 4) -> "BackwardStrategy":
        return cls(f"int{bits}", PathSpec("quant", bits), PathSpec("quant", bits))

    @classmethod
    def hq(cls, bits_gx: int = 4, bits_gw: int = 4,
           block: int = DEFAULT_BLOCK) -> "BackwardStrategy":
        plan = HadamardPlan(block_size=block, basis_indices=tuple(range(block)))
        return cls("hq", PathSpec("ht_quant", bits_gx), PathSpec("ht_quant", bits_gw), plan)

    @classmethod
    def lbp_wht(cls, rank: int = DEFAULT_RANK, block: int = DEFAULT_BLOCK) -> "BackwardStrategy":
        plan = HadamardPlan(block_size=block,
                            basis_indices=lowest_sequency_bases(block, rank))
        return cls("lbp-wht", PathSpec("lowrank"), PathSpec("lowrank"), plan)

    @classmethod
    def hlq(cls, bits_gx: int = 4, bits_gw: int = 8, rank: int = DEFAULT_RANK,
            block: int = DEFAULT_BLOCK) -> "BackwardStrategy":
        plan = HadamardPlan(block_size=block,
                            basis_indices=lowest_sequency_bases(block, rank))
        return cls("hlq", PathSpec("ht_quant", bits_gx), PathSpec("lowrank_quant", bits_gw), plan)

    # -- derived configurations ----------------------------------------

    def float_pipeline(self) -> "BackwardStrategy":
        """Quantizers removed, transforms and rank kept: the unbiased target
        that seed-averaged stochastic runs converge to."""
        return replace(
            self,
            name=f"{self.name}[float]",
            grad_input_path=replace(self.grad_input_path, bits=None),
            grad_weight_path=replace(self.grad_weight_path, bits=None),
        )

    def debug_exact(self) -> "BackwardStrategy":
        """No quantization, full rank: must reproduce the vanilla backward."""
        full = self.plan.with_rank(self.plan.block_size)
        return replace(
            self.float_pipeline(),
            name=f"{self.name}[exact]",
            plan=full,
        )

    def with_warmup_bits(self, bits: int = 8) -> "BackwardStrategy":
        """Widen every active quantizer (precision warmup); ranks unchanged."""
        def widen(spec: PathSpec) -> PathSpec:
            return spec if spec.bits is None else replace(spec, bits=bits)
        return replace(
            self,
            name=f"{self.name}[warmup-int{bits}]",
            grad_input_path=widen(self.grad_input_path),
            grad_weight_path=widen(self.grad_weight_path),
        )

    def with_plan(self, plan: HadamardPlan) -> "BackwardStrategy":
        return replace(self, plan=plan)

    @property
    def uses_compressed_activation(self) -> bool:
        return self.grad_weight_path.mode == "lowrank_quant" and self.store_compressed


@dataclass(frozen=True)
class ACBPActivation:
    """Forward-time compressed activation retained for the weight-gradient path.

    Holds the projected-and-quantized input (stages 1-2 run during the
    forward pass), the original activation shape, and the projection axis so
    the backward stages can validate against the plan they expect.
    """

    quantized: QuantizedTensor
    orig_shape: tuple
    axis: int
    plan: HadamardPlan

    @property
    def payload_nbytes(self) -> int:
        if self.quantized.bits == 8:
            return self.quantized.payload.size
        return (self.quantized.payload.size + 1) // 2


def ht_axis_for(B: int, L: int, block: int, pad_small_axes: bool = False) -> int:
    """Transform axis rule: L when long enough, else B; refuse tiny layers
    unless padding was explicitly requested."""
    if L >= block:
        return 1
    if B >= block:
        return 0
    if not pad_small_axes:
        raise DimensionError(
            f"both L={L} and B={B} are below the block size {block}; "
            "set pad_small_axes to zero-pad")
    return 1 if L >= B else 0


def _check_shapes(x: Tensor, w: Tensor, gy: Tensor) -> tuple:
    if x.ndim != 3 or gy.ndim != 3 or w.ndim != 2:
        raise DimensionError(
            f"expected x (B,L,I), w (O,I), gy (B,L,O); got {x.shape}, {w.shape}, {gy.shape}")
    B, L, I = x.shape
    O = w.shape[0]
    if w.shape[1] != I:
        raise DimensionError(f"weight {w.shape} does not match input channels {I}")
    if gy.shape != (B, L, O):
        raise DimensionError(f"gy shape {gy.shape} does not match ({B}, {L}, {O})")
    return B, L, I, O


def _quant(t: Tensor, bits: int, rng: RngState | None, tag: int) -> QuantizedTensor:
    if rng is None:
        return quant_pseudo_stochastic(t, bits)
    return quant_stochastic(t, bits, rng.split(tag))


def _block_axis(arr: np.ndarray, axis: int, plan: HadamardPlan) -> np.ndarray:
    """Zero-pad ``axis`` to a block multiple and transform it in place."""
    padded = pad_axis(Tensor._wrap(arr), axis, plan.block_size).data
    moved = np.ascontiguousarray(np.moveaxis(padded, axis, -1))
    n = plan.block_size
    blocks = moved.shape[-1] // n
    out = _fwht_last_axis(moved.reshape(*moved.shape[:-1], blocks, n))
    out = out.reshape(*moved.shape[:-1], blocks * n)
    return np.moveaxis(out, -1, axis)


def _project_axis(arr: np.ndarray, axis: int, plan: HadamardPlan) -> np.ndarray:
    """Block transform + basis selection along ``axis`` (full plans skip the
    selection, leaving the padded transformed axis)."""
    padded = pad_axis(Tensor._wrap(arr), axis, plan.block_size).data
    moved = np.ascontiguousarray(np.moveaxis(padded, axis, -1))
    n = plan.block_size
    blocks = moved.shape[-1] // n
    coeffs = _fwht_last_axis(moved.reshape(*moved.shape[:-1], blocks, n))
    if not plan.full_rank:
        coeffs = coeffs[..., list(plan.basis_indices)]
    out = coeffs.reshape(*moved.shape[:-1], blocks * len(plan.basis_indices))
    return np.moveaxis(out, -1, axis)


def _unproject_axis(arr: np.ndarray, axis: int, plan: HadamardPlan,
                    original_extent: int) -> np.ndarray:
    """Scatter coefficients back to full blocks, inverse-transform, crop."""
    moved = np.ascontiguousarray(np.moveaxis(arr, axis, -1))
    n, r = plan.block_size, plan.rank
    blocks = moved.shape[-1] // r
    if plan.full_rank:
        coeffs = moved.reshape(*moved.shape[:-1], blocks, n)
    else:
        coeffs = np.zeros((*moved.shape[:-1], blocks, n), dtype=DTYPE)
        coeffs[..., list(plan.basis_indices)] = moved.reshape(*moved.shape[:-1], blocks, r)
    full = _fwht_last_axis(coeffs).reshape(*moved.shape[:-1], blocks * n)
    return np.moveaxis(full[..., :original_extent], -1, axis)


# ---------------------------------------------------------------------------
# grad_weight path
# ---------------------------------------------------------------------------

def _gw_operands(x3: np.ndarray, gy3: np.ndarray, spec: PathSpec,
                 strategy: BackwardStrategy) -> tuple:
    """Shared-transform stage: returns flattened (K, I) and (K, O) operands."""
    B, L, I = x3.shape
    O = gy3.shape[2]
    if spec.mode in ("ht_quant", "lowrank", "lowrank_quant"):
        axis = ht_axis_for(B, L, strategy.plan.block_size, strategy.pad_small_axes)
        if spec.mode == "ht_quant":
            x3 = _block_axis(x3, axis, strategy.plan)
            gy3 = _block_axis(gy3, axis, strategy.plan)
        else:
            x3 = _project_axis(x3, axis, strategy.plan)
            gy3 = _project_axis(gy3, axis, strategy.plan)
    return x3.reshape(-1, I), gy3.reshape(-1, O)


def _gw_from_operands(x2: np.ndarray, gy2: np.ndarray, B: int, spec: PathSpec,
                      rng: RngState | None) -> Tensor:
    if spec.bits is None:
        out = (gy2.T @ x2) * DTYPE(1.0 / B)
        return Tensor._wrap(out)
    qg = _quant(Tensor._wrap(np.ascontiguousarray(gy2.T)), spec.bits, rng, _TAG_GW_LEFT)
    qx = _quant(Tensor._wrap(x2), spec.bits, rng, _TAG_GW_RIGHT)
    return int_matmul_dequant(qg, qx, extra_scale=1.0 / B)


def _grad_weight(x: Tensor, gy: Tensor, strategy: BackwardStrategy,
                 rng: RngState | None) -> Tensor:
    spec = strategy.grad_weight_path
    B = x.shape[0]
    x2, gy2 = _gw_operands(x.data, gy.data, spec, strategy)
    return _gw_from_operands(x2, gy2, B, spec, rng)


# ---------------------------------------------------------------------------
# grad_input path
# ---------------------------------------------------------------------------

def _grad_input(gy: Tensor, w: Tensor, strategy: BackwardStrategy,
                rng: RngState | None) -> Tensor:
    spec = strategy.grad_input_path
    B, L, O = gy.shape
    I = w.shape[1]
    if spec.mode == "fp":
        out = gy.data.reshape(-1, O) @ w.data
        return Tensor._wrap(out.reshape(B, L, I))
    if spec.mode == "quant":
        if spec.bits is None:
            out = gy.data.reshape(-1, O) @ w.data
            return Tensor._wrap(out.reshape(B, L, I))
        qg = _quant(Tensor._wrap(gy.data.reshape(-1, O)), spec.bits, rng, _TAG_GX_LEFT)
        qw = _quant(w, spec.bits, rng, _TAG_GX_RIGHT)
        out = int_matmul_dequant(qg, qw)
        return Tensor._wrap(out.data.reshape(B, L, I))
    if spec.mode == "ht_quant":
        return hq_grad_input(gy, w, spec.bits, rng=rng, block=strategy.plan.block_size)
    # lowrank: truncate bases along L (or B), multiply, inverse-project
    axis = ht_axis_for(B, L, strategy.plan.block_size, strategy.pad_small_axes)
    ghat = _project_axis(gy.data, axis, strategy.plan)
    ghat2 = ghat.reshape(-1, O)
    gx_hat = (ghat2 @ w.data).reshape(*ghat.shape[:-1], I)
    orig = gy.shape[axis]
    out = _unproject_axis(gx_hat, axis, strategy.plan, orig)
    return Tensor._wrap(out)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def vanilla_backward(x: Tensor, w: Tensor, gy: Tensor) -> GradPair:
    """Exact chain-rule backward for one linear layer."""
    B, L, I, O = _check_shapes(x, w, gy)
    gw = (gy.data.reshape(-1, O).T @ x.data.reshape(-1, I)) * DTYPE(1.0 / B)
    gx = (gy.data.reshape(-1, O) @ w.data).reshape(B, L, I)
    return GradPair(Tensor._wrap(gx), Tensor._wrap(gw))


def naive_quant_backward(x: Tensor, w: Tensor, gy: Tensor, bits: int,
                         rng: RngState | None = None) -> GradPair:
    """Both products with both operands quantized directly (no transform)."""
    return strategy_backward(x, w, gy, BackwardStrategy.naive_quant(bits), rng=rng)


def lbp_wht_backward(x: Tensor, w: Tensor, gy: Tensor, plan: HadamardPlan,
                     pad_small_axes: bool = False) -> GradPair:
    """Low-rank basis truncation on both gradient paths (float GEMMs)."""
    if plan.full_rank:
        raise ParameterError("plan is full-rank; low-rank backward needs rank < block size")
    strategy = BackwardStrategy("lbp-wht", PathSpec("lowrank"), PathSpec("lowrank"),
                                plan=plan, pad_small_axes=pad_small_axes)
    return strategy_backward(x, w, gy, strategy)


def hq_grad_input(gy: Tensor, w: Tensor, bits: int | None, rng: RngState | None = None,
                  block: int = DEFAULT_BLOCK) -> Tensor:
    """Input gradient with both operands Hadamard-transformed along the output
    channel axis before quantization; full rank, so with bits=None this equals
    gy @ w up to float roundoff."""
    if gy.ndim != 3 or w.ndim != 2:
        raise DimensionError(f"expected gy (B,L,O) and w (O,I), got {gy.shape}, {w.shape}")
    if gy.shape[2] != w.shape[0]:
        raise DimensionError(f"output channels differ: gy {gy.shape} vs w {w.shape}")
    B, L, O = gy.shape
    I = w.shape[1]
    plan = HadamardPlan(block_size=block, basis_indices=tuple(range(block)))
    ghat = _block_axis(gy.data, 2, plan)
    what = _block_axis(w.data, 0, plan)
    if bits is None:
        out = ghat.reshape(-1, ghat.shape[-1]) @ what
        return Tensor._wrap(out.reshape(B, L, I))
    qg = _quant(Tensor._wrap(ghat.reshape(-1, ghat.shape[-1])), bits, rng, _TAG_GX_LEFT)
    qw = _quant(Tensor._wrap(what), bits, rng, _TAG_GX_RIGHT)
    out = int_matmul_dequant(qg, qw)
    return Tensor._wrap(out.data.reshape(B, L, I))


def acbp_compress(x: Tensor, plan: HadamardPlan, bits: int = 8,
                  rng: RngState | None = None,
                  pad_small_axes: bool = False) -> ACBPActivation:
    """Stages 1-2 of the weight-gradient pipeline, run at forward time:
    project the activation onto the selected bases, quantize, and keep only
    the compressed payload."""
    if x.ndim != 3:
        raise DimensionError(f"expected x (B,L,I), got {x.shape}")
    B, L, I = x.shape
    axis = ht_axis_for(B, L, plan.block_size, pad_small_axes)
    proj = _project_axis(x.data, axis, plan)
    q = _quant(Tensor._wrap(proj), bits, rng, _TAG_GW_RIGHT)
    return ACBPActivation(quantized=q, orig_shape=(B, L, I), axis=axis, plan=plan)


def hlq_grad_weight(acbp: ACBPActivation, gy: Tensor, bits: int = 8,
                    rng: RngState | None = None) -> Tensor:
    """Stages 3-6: project the upstream gradient onto the same bases, quantize,
    run the integer GEMM against the stored activation payload, dequantize
    with the combined scale and the 1/B mean factor."""
    B, L, I = acbp.orig_shape
    if gy.ndim != 3 or gy.shape[0] != B or gy.shape[1] != L:
        raise StateError(
            f"gy shape {gy.shape} does not match the compressed activation ({B}, {L}, ...)")
    if acbp.quantized.bits != bits:
        raise StateError(
            f"compressed activation is {acbp.quantized.bits}-bit but backward wants {bits}-bit")
    plan, axis = acbp.plan, acbp.axis
    ghat = _project_axis(gy.data, axis, plan)
    gy2 = ghat.reshape(-1, gy.shape[2])
    x2 = acbp.quantized.payload.reshape(-1, I)
    if gy2.shape[0] != x2.shape[0]:
        raise StateError(
            "projected extents differ between forward and backward; the plans do not match")
    qg = _quant(Tensor._wrap(np.ascontiguousarray(gy2.T)), bits, rng, _TAG_GW_LEFT)
    qx = QuantizedTensor(payload=x2, bits=acbp.quantized.bits,
                         scale=acbp.quantized.scale, per_axis=None)
    return int_matmul_dequant(qg, qx, extra_scale=1.0 / B)


def strategy_backward(x_or_acbp, w: Tensor, gy: Tensor, strategy: BackwardStrategy,
                      rng: RngState | None = None) -> GradPair:
    """Dispatch both gradient paths according to the strategy."""
    if isinstance(x_or_acbp, ACBPActivation):
        acbp = x_or_acbp
        if strategy.grad_weight_path.mode != "lowrank_quant":
            raise StateError(
                f"strategy {strategy.name!r} expects the raw activation, not a compressed one")
        if (acbp.plan.block_size != strategy.plan.block_size
                or acbp.plan.basis_indices != strategy.plan.basis_indices):
            raise StateError("compressed activation was built with a different plan")
        B, L, I = acbp.orig_shape
        if gy.ndim != 3 or gy.shape[:2] != (B, L) or w.shape[1] != I:
            raise DimensionError(
                f"gy {gy.shape} / w {w.shape} do not match activation {acbp.orig_shape}")
        gw = hlq_grad_weight(acbp, gy, bits=strategy.grad_weight_path.bits or 8, rng=rng)
        gx = _grad_input(gy, w, strategy, rng)
        return GradPair(gx, gw)
    x = x_or_acbp
    _check_shapes(x, w, gy)
    gx = _grad_input(gy, w, strategy, rng)
    gw = _grad_weight(x, gy, strategy, rng)
    return GradPair(gx, gw)


def hlq_backward(x_or_acbp, w: Tensor, gy: Tensor,
                 strategy: BackwardStrategy | None = None,
                 rng: RngState | None = None) -> GradPair:
    """The combined scheme: int4 Hadamard-quantized input gradient at full
    rank, int8 low-rank weight gradient (from the compressed activation when
    one is supplied)."""
    strategy = strategy or BackwardStrategy.hlq()
    if strategy.grad_weight_path.mode != "lowrank_quant" or strategy.grad_input_path.mode != "ht_quant":
        raise ParameterError(f"hlq_backward requires the combined strategy, got {strategy.name!r}")
    return strategy_backward(x_or_acbp, w, gy, strategy, rng=rng)
