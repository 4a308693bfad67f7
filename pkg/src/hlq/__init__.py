"""Hadamard low-rank quantized backpropagation.

Selective backward-pass optimization for linear and convolutional layers:
4-bit Hadamard quantization on the input-gradient path, 8-bit low-rank
approximation on the weight-gradient path, baselines to compare against,
an analytic cost model, and a desk-scale training harness.
"""

from .acbp import acbp_pack, acbp_unpack, header_nbytes
from .backprop import (
    ACBPActivation,
    BackwardStrategy,
    GradPair,
    PathSpec,
    acbp_compress,
    hlq_backward,
    hlq_grad_weight,
    hq_grad_input,
    ht_axis_for,
    lbp_wht_backward,
    naive_quant_backward,
    strategy_backward,
    vanilla_backward,
)
from .errors import ConfigError, DimensionError, FormatError, ParameterError, StateError
from .hadamard import (
    DEFAULT_BLOCK,
    DEFAULT_RANK,
    HadamardPlan,
    block_ht,
    fwht,
    project_lowrank,
    select_bases,
    unproject_lowrank,
    walsh_matrix,
)
from .quantize import (
    QuantizedTensor,
    RngState,
    dequant,
    int_matmul,
    int_matmul_dequant,
    quant_pseudo_stochastic,
    quant_stochastic,
)
from .tensor import LayerDims, Tensor, matmul, pad_axis, padded_extent, reshape, transpose

__version__ = "0.1.0"
