"""Analytic FLOPs, bit-operation, and memory accounting per layer and strategy.

Closed forms for one linear (or im2col'd conv) layer with batch-folded
sequence length L' = B*L, block size n, kept rank r, and padded extents
Lp = pad(L', n), Op = pad(O, n), K = Lp * r / n:

    vanilla backward GEMMs      4 * L' * I * O
    input-grad overhead         2*L'*Op*log2(n) + 2*I*Op*log2(n) + 2*L'*Op + 2*I*Op
    weight-grad overhead        2*Lp*I*log2(n) + 2*Lp*O*log2(n) + 2*I*K + 2*O*K
    dequantize                  2*I*O + 2*L'*I

Bit-operations weight each GEMM by its operand widths (MACs * b_a * b_b,
fp32 counted as 32*32) and each overhead flop as one 32-bit operation
(32 bit-ops: transforms are add/sub, quant/dequant are scale ops).

Activation storage per element: 4 bytes raw fp32; bits * r/n / 8 bytes for
the compressed forward-time activation (plus one container header per layer);
projected fp32 (4 * r/n bytes) for the float low-rank baseline, which can run
its projection at forward time but keeps float precision.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ParameterError
from .tensor import LayerDims, padded_extent

STRATEGIES = ("vanilla", "int4", "int8", "hq", "lbp-wht", "hlq", "hlq-no-acbp")

_CONTAINER_HEADER_BYTES = 37  # fixed v1 header + 1 scale + crc


def _log2(n: int) -> int:
    if n < 1 or (n & (n - 1)) != 0:
        raise ParameterError(f"block size must be a power of two >= 1, got {n}")
    return n.bit_length() - 1


@dataclass(frozen=True)
class LayerCost:
    """Cost breakdown for one layer under one strategy."""

    name: str
    dims: LayerDims
    strategy: str
    gemm_flops: int
    overhead_flops: int
    gemm_macs: tuple  # ((macs, bits_a, bits_b), ...)
    activation_bytes: int
    weight_bytes: int
    grad_bytes: int

    @property
    def total_flops(self) -> int:
        return self.gemm_flops + self.overhead_flops

    @property
    def bops(self) -> int:
        gemm = sum(m * ba * bb for m, ba, bb in self.gemm_macs)
        return gemm + self.overhead_flops * 32

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "B": self.dims.B, "L": self.dims.L, "I": self.dims.I, "O": self.dims.O,
            "strategy": self.strategy,
            "gemm_flops": self.gemm_flops,
            "overhead_flops": self.overhead_flops,
            "total_flops": self.total_flops,
            "bops": self.bops,
            "activation_bytes": self.activation_bytes,
            "weight_bytes": self.weight_bytes,
            "grad_bytes": self.grad_bytes,
        }


@dataclass
class CostReport:
    """Per-layer breakdowns plus totals; serializable as JSON or CSV rows."""

    strategy: str
    layers: list = field(default_factory=list)

    @property
    def total_flops(self) -> int:
        return sum(c.total_flops for c in self.layers)

    @property
    def overhead_flops(self) -> int:
        return sum(c.overhead_flops for c in self.layers)

    @property
    def bops(self) -> int:
        return sum(c.bops for c in self.layers)

    @property
    def activation_bytes(self) -> int:
        return sum(c.activation_bytes for c in self.layers)

    @property
    def weight_bytes(self) -> int:
        return sum(c.weight_bytes for c in self.layers)

    @property
    def grad_bytes(self) -> int:
        return sum(c.grad_bytes for c in self.layers)

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "totals": {
                "total_flops": self.total_flops,
                "overhead_flops": self.overhead_flops,
                "bops": self.bops,
                "activation_bytes": self.activation_bytes,
                "weight_bytes": self.weight_bytes,
                "grad_bytes": self.grad_bytes,
            },
            "layers": [c.to_dict() for c in self.layers],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    CSV_COLUMNS = ("name", "B", "L", "I", "O", "strategy", "gemm_flops",
                   "overhead_flops", "total_flops", "bops",
                   "activation_bytes", "weight_bytes", "grad_bytes")

    def to_csv(self) -> str:
        lines = [",".join(self.CSV_COLUMNS)]
        for c in self.layers:
            d = c.to_dict()
            lines.append(",".join(str(d[k]) for k in self.CSV_COLUMNS))
        t = self.to_dict()["totals"]
        lines.append(",".join([
            "TOTAL", "", "", "", "", self.strategy,
            "", str(t["overhead_flops"]), str(t["total_flops"]), str(t["bops"]),
            str(t["activation_bytes"]), str(t["weight_bytes"]), str(t["grad_bytes"]),
        ]))
        return "\n".join(lines) + "\n"


def _check_strategy(strategy: str) -> str:
    if strategy not in STRATEGIES:
        raise ParameterError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    return strategy


def layer_flops(dims: LayerDims, strategy: str = "hlq", block: int = 16,
                rank: int = 8, bits_gx: int = 4, bits_gw: int = 8,
                name: str = "layer") -> LayerCost:
    """Closed-form backward cost of one layer under one strategy."""
    _check_strategy(strategy)
    logn = _log2(block)
    if not 1 <= rank <= block:
        raise ParameterError(f"rank must be in [1, {block}], got {rank}")
    L = dims.B * dims.L
    I, O = dims.I, dims.O
    Lp = padded_extent(L, block)
    Op = padded_extent(O, block)
    K = Lp // block * rank

    act = 4 * dims.B * dims.L * I
    weight = 4 * O * I
    grads = 4 * (O * I + dims.B * dims.L * I)

    if strategy == "vanilla":
        macs = ((L * I * O, 32, 32), (L * I * O, 32, 32))
        return LayerCost(name, dims, strategy, 4 * L * I * O, 0, macs, act, weight, grads)

    if strategy in ("int4", "int8"):
        b = 4 if strategy == "int4" else 8
        macs = ((L * I * O, b, b), (L * I * O, b, b))
        overhead = (2 * L * O + 2 * I * O) + (2 * L * O + 2 * L * I) + (2 * I * O + 2 * L * I)
        return LayerCost(name, dims, strategy, 4 * L * I * O, overhead, macs, act, weight, grads)

    if strategy == "hq":
        macs = ((L * Op * I, bits_gx, bits_gx), (Lp * I * O, bits_gw, bits_gw))
        gx = 2 * L * Op * logn + 2 * I * Op * logn + 2 * L * Op + 2 * I * Op
        gw = 2 * Lp * I * logn + 2 * Lp * O * logn + 2 * Lp * I + 2 * Lp * O
        dq = 2 * I * O + 2 * L * I
        gemm = 2 * L * Op * I + 2 * Lp * I * O
        return LayerCost(name, dims, strategy, gemm, gx + gw + dq, macs, act, weight, grads)

    if strategy == "lbp-wht":
        macs = ((K * O * I, 32, 32), (K * I * O, 32, 32))
        overhead = 2 * Lp * O * logn + 2 * Lp * I * logn + 2 * Lp * I * logn
        gemm = 2 * K * O * I + 2 * K * I * O
        act_lr = 4 * K * I  # projected fp32 retained for the backward
        return LayerCost(name, dims, strategy, gemm, overhead, macs, act_lr, weight, grads)

    # hlq / hlq-no-acbp
    macs = ((L * Op * I, bits_gx, bits_gx), (K * I * O, bits_gw, bits_gw))
    gx = 2 * L * Op * logn + 2 * I * Op * logn + 2 * L * Op + 2 * I * Op
    gw = 2 * Lp * I * logn + 2 * Lp * O * logn + 2 * I * K + 2 * O * K
    dq = 2 * I * O + 2 * L * I
    gemm = 2 * L * Op * I + 2 * K * I * O
    if strategy == "hlq":
        payload = K * I * bits_gw // 8 if bits_gw == 8 else (K * I + 1) // 2
        act = payload + _CONTAINER_HEADER_BYTES
    return LayerCost(name, dims, strategy, gemm, gx + gw + dq, macs, act, weight, grads)


def layer_bops(dims: LayerDims, strategy: str = "hlq", **kwargs) -> int:
    """Bit-operations of one layer's backward under one strategy."""
    return layer_flops(dims, strategy, **kwargs).bops


def cost_report(layers, strategy: str = "hlq", batch: int | None = None,
                **kwargs) -> CostReport:
    """Evaluate ``layer_flops`` over a catalog of (name, LayerDims) pairs."""
    report = CostReport(strategy=strategy)
    for name, dims in layers:
        if batch is not None:
            dims = LayerDims(batch, dims.L, dims.I, dims.O)
        report.layers.append(layer_flops(dims, strategy, name=name, **kwargs))
    return report


def memory_footprint(layers, strategy: str = "hlq", batch: int | None = None,
                     **kwargs) -> CostReport:
    """Storage accounting over a catalog; additive over layers, payload
    growth linear in the batch size."""
    return cost_report(layers, strategy, batch=batch, **kwargs)


def parse_layer_catalog(text: str):
    """One layer per line: ``name B L I O`` with an optional ``conv kH kW``
    suffix, in which case L is already H*W and I is the input channel count
    to be multiplied by kH*kW."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (5, 8) or (len(parts) == 8 and parts[5] != "conv"):
            raise ParameterError(
                f"catalog line {lineno}: expected 'name B L I O [conv kH kW]', got {raw!r}")
        name = parts[0]
        try:
            b, l, i, o = (int(p) for p in parts[1:5])
            if len(parts) == 8:
                kh, kw = int(parts[6]), int(parts[7])
                i *= kh * kw
        except ValueError as exc:
            raise ParameterError(f"catalog line {lineno}: {exc}") from exc
        out.append((name, LayerDims(b, l, i, o)))
    return out
