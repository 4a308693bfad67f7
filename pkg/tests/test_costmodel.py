"""Cost-model formulas: exact closed forms, ratio properties, memory accounting."""
import numpy as np
import pytest

from hlq import LayerDims, ParameterError, header_nbytes
from hlq.costmodel import (
    CostReport,
    cost_report,
    layer_bops,
    layer_flops,
    memory_footprint,
    parse_layer_catalog,
)


def hand_overhead(L, I, O, n, r):
    """Independent evaluation of the closed forms (multiples of n assumed)."""
    logn = n.bit_length() - 1
    gx = 2 * L * O * logn + 2 * I * O * logn + 2 * L * O + 2 * I * O
    gw = 2 * L * I * logn + 2 * L * O * logn + 2 * I * (L * r // n) + 2 * O * (L * r // n)
    dq = 2 * I * O + 2 * L * I
    return gx + gw + dq


class TestFlops:
    def test_vanilla_hand_value(self):
        c = layer_flops(LayerDims(1, 196, 224, 896), "vanilla")
        assert c.total_flops == 157_351_936  # 4 * 196 * 224 * 896

    def test_gx_overhead_hand_value(self):
        # L = I = O = 16, n = 16 (log n = 4):
        # 2*16*16*4 + 2*16*16*4 + 2*16*16 + 2*16*16 = 5120
        c = layer_flops(LayerDims(1, 16, 16, 16), "hlq", block=16, rank=8)
        gx_only = 2 * 16 * 16 * 4 * 2 + 2 * 16 * 16 * 2
        assert gx_only == 5120
        dq = 2 * 16 * 16 + 2 * 16 * 16
        gw = 2 * 16 * 16 * 4 * 2 + 2 * 16 * 8 * 2
        assert c.overhead_flops == gx_only + gw + dq

    def test_degenerate_units_block_one(self):
        c = layer_flops(LayerDims(1, 1, 1, 1), "hlq", block=1, rank=1)
        assert layer_flops(LayerDims(1, 1, 1, 1), "vanilla").total_flops == 4
        # log n = 0 wipes the transform terms; quant/dequant terms remain
        assert c.overhead_flops == (2 + 2) + (2 + 2) + (2 + 2)

    def test_matches_closed_forms_randomized(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            L = int(rng.integers(1, 40)) * 16
            I = int(rng.integers(1, 40)) * 16
            O = int(rng.integers(1, 40)) * 16
            dims = LayerDims(1, L, I, O)
            assert layer_flops(dims, "vanilla").total_flops == 4 * L * I * O
            assert layer_flops(dims, "vanilla").overhead_flops == 0
            c = layer_flops(dims, "hlq", block=16, rank=8)
            assert c.overhead_flops == hand_overhead(L, I, O, 16, 8)

    def test_batch_folds_into_sequence_length(self):
        a = layer_flops(LayerDims(4, 32, 16, 16), "vanilla")
        b = layer_flops(LayerDims(1, 128, 16, 16), "vanilla")
        assert a.total_flops == b.total_flops

    def test_overhead_ratio_vanishes_asymptotically(self):
        ratios = []
        for s in (64, 256, 1024):
            dims = LayerDims(1, s, s, s)
            c = layer_flops(dims, "hlq")
            ratios.append(c.overhead_flops / layer_flops(dims, "vanilla").total_flops)
        assert ratios[0] > ratios[1] > ratios[2]

    def test_profiled_layer_shapes_under_ten_percent(self):
        shapes = [(196, 224, 896), (196, 896, 224), (196, 224, 864),
                  (196, 864, 224), (784, 96, 432), (784, 96, 384)]
        for L, O, I in shapes:
            dims = LayerDims(1, L, I, O)
            van = layer_flops(dims, "vanilla").total_flops
            over = layer_flops(dims, "hlq").overhead_flops
            assert over / van < 0.10

    def test_unknown_strategy_and_bad_block(self):
        with pytest.raises(ParameterError):
            layer_flops(LayerDims(1, 16, 16, 16), "nope")
        with pytest.raises(ParameterError):
            layer_flops(LayerDims(1, 16, 16, 16), "hlq", block=12)


class TestBops:
    def test_vanilla_units(self):
        assert layer_bops(LayerDims(1, 1, 1, 1), "vanilla") == 2 * 32 * 32

    def test_hlq_gemm_ratio_formula(self):
        # GEMM-only ratio vs vanilla: (LIO*16 + (L*r/n)*I*O*64) / (2*L*I*O*1024)
        L = I = O = 64
        dims = LayerDims(1, L, I, O)
        van = layer_flops(dims, "vanilla")
        hlq = layer_flops(dims, "hlq", block=16, rank=8)
        gemm_van = sum(m * ba * bb for m, ba, bb in van.gemm_macs)
        gemm_hlq = sum(m * ba * bb for m, ba, bb in hlq.gemm_macs)
        expected = (L * I * O * 16 + (L * 8 // 16) * I * O * 64) / (2 * L * I * O * 1024)
        assert gemm_hlq / gemm_van == pytest.approx(expected)

    def test_ratio_below_one_ninth_for_large_dims(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            L = int(rng.integers(64, 512))
            I = int(rng.integers(64, 512))
            O = int(rng.integers(64, 512))
            dims = LayerDims(1, L, I, O)
            assert layer_bops(dims, "hlq") / layer_bops(dims, "vanilla") < 1 / 9


class TestMemory:
    def test_hlq_activation_exactly_one_eighth(self):
        dims = LayerDims(8, 32, 48, 64)
        c = layer_flops(dims, "hlq")
        payload = c.activation_bytes - header_nbytes()
        assert payload * 8 == 4 * 8 * 32 * 48
        raw = layer_flops(dims, "vanilla").activation_bytes
        assert raw == 4 * 8 * 32 * 48

    def test_footprint_additive_and_linear_in_batch(self):
        layers = [("a", LayerDims(1, 32, 16, 16)), ("b", LayerDims(1, 64, 16, 32))]
        r1 = memory_footprint(layers, "hlq", batch=8)
        r2 = memory_footprint(layers, "hlq", batch=16)
        r3 = memory_footprint(layers, "hlq", batch=24)
        assert r1.activation_bytes == sum(c.activation_bytes for c in r1.layers)
        # affine in batch: equal increments per batch step
        assert r2.activation_bytes - r1.activation_bytes == r3.activation_bytes - r2.activation_bytes

    def test_empty_catalog(self):
        r = memory_footprint([], "hlq")
        assert r.activation_bytes == 0
        assert r.total_flops == 0

    def test_no_acbp_keeps_raw_activation(self):
        dims = LayerDims(4, 32, 16, 16)
        raw = layer_flops(dims, "hlq-no-acbp").activation_bytes
        assert raw == layer_flops(dims, "vanilla").activation_bytes


class TestCatalog:
    def test_parse_linear_and_conv_lines(self):
        text = """
        # comment line
        fc1 1 196 224 896
        conv1 1 1024 64 128 conv 3 3
        """
        layers = parse_layer_catalog(text)
        assert layers[0] == ("fc1", LayerDims(1, 196, 224, 896))
        assert layers[1] == ("conv1", LayerDims(1, 1024, 576, 128))

    def test_parse_errors(self):
        with pytest.raises(ParameterError):
            parse_layer_catalog("bad line with stuff")
        with pytest.raises(ParameterError):
            parse_layer_catalog("x 1 2 3")
        with pytest.raises(ParameterError):
            parse_layer_catalog("x 1 2 3 4 conv 3")

    def test_report_serialization_roundtrip(self):
        layers = parse_layer_catalog("fc 2 32 16 16\n")
        rep = cost_report(layers, "hlq")
        d = rep.to_dict()
        assert d["strategy"] == "hlq"
        assert d["totals"]["total_flops"] == rep.total_flops
        csv = rep.to_csv()
        assert csv.splitlines()[0].startswith("name,")
        assert csv.splitlines()[-1].startswith("TOTAL")
        assert rep.to_json().endswith("\n")
