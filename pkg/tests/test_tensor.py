"""Tensor construction, shape algebra, and the matmul determinism contract."""
import numpy as np
import pytest

from hlq import DimensionError, LayerDims, ParameterError, Tensor, matmul, pad_axis, reshape, transpose


def test_rejects_non_finite():
    with pytest.raises(ValueError):
        Tensor([1.0, np.nan])
    with pytest.raises(ValueError):
        Tensor([np.inf, 0.0])


def test_rejects_rank_above_four():
    with pytest.raises(DimensionError):
        Tensor(np.zeros((2, 2, 2, 2, 2)))


def test_immutable_and_float32():
    t = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert t.data.dtype == np.float32
    with pytest.raises(ValueError):
        t.data[0, 0] = 9.0


def test_construction_copies_external_buffer():
    src = np.ones((2, 2), dtype=np.float32)
    t = Tensor(src)
    src[0, 0] = 5.0
    assert t.data[0, 0] == 1.0


def test_matmul_identity():
    x = Tensor(np.arange(8, dtype=np.float32).reshape(2, 4))
    eye = Tensor(np.eye(2, dtype=np.float32))
    out = matmul(eye, x)
    assert np.array_equal(out.data, x.data)


def test_matmul_hand_values():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[5.0], [6.0]])
    out = matmul(a, b)
    assert out.tolist() == [[17.0], [39.0]]


def test_matmul_against_triple_loop_oracle():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((7, 5)).astype(np.float32)
    b = rng.standard_normal((5, 3)).astype(np.float32)
    out = matmul(Tensor(a), Tensor(b))
    ref = np.zeros((7, 3), dtype=np.float64)
    for m in range(7):
        for n in range(3):
            acc = 0.0
            for k in range(5):
                acc += float(a[m, k]) * float(b[k, n])
            ref[m, n] = acc
    assert np.max(np.abs(out.data - ref)) < 1e-6


def test_matmul_shape_errors():
    a = Tensor(np.zeros((2, 3)))
    b = Tensor(np.zeros((4, 2)))
    with pytest.raises(DimensionError):
        matmul(a, b)
    with pytest.raises(DimensionError):
        matmul(a, Tensor(np.zeros((3, 2, 2))))


def test_matmul_transpose_identity():
    rng = np.random.default_rng(3)
    a = Tensor(rng.standard_normal((6, 4)).astype(np.float32))
    b = Tensor(rng.standard_normal((4, 5)).astype(np.float32))
    lhs = transpose(matmul(a, b)).data
    rhs = matmul(transpose(b), transpose(a)).data
    assert np.max(np.abs(lhs - rhs)) < 1e-6


def test_reshape_row_major_and_roundtrip():
    t = Tensor(np.arange(24, dtype=np.float32).reshape(2, 3, 4))
    flat = reshape(t, (6, 4))
    assert flat.data[1, 0] == 4.0  # row-major order preserved
    back = reshape(flat, (2, 3, 4))
    assert np.array_equal(back.data, t.data)


def test_reshape_count_mismatch():
    with pytest.raises(DimensionError):
        reshape(Tensor(np.zeros((2, 3))), (4, 2))


def test_transpose_twice_is_identity():
    t = Tensor(np.arange(12, dtype=np.float32).reshape(3, 4))
    assert np.array_equal(transpose(transpose(t)).data, t.data)


def test_pad_axis_to_multiple():
    t = Tensor(np.ones((3, 20), dtype=np.float32))
    padded = pad_axis(t, 1, 16)
    assert padded.shape == (3, 32)
    assert np.all(padded.data[:, 20:] == 0)
    assert np.all(padded.data[:, :20] == 1)
    # already a multiple: unchanged object contents
    same = pad_axis(t, 0, 3)
    assert same.shape == (3, 20)


def test_layer_dims_validation():
    LayerDims(1, 2, 3, 4)
    with pytest.raises(ParameterError):
        LayerDims(0, 2, 3, 4)
    with pytest.raises(ParameterError):
        LayerDims(1, 2, -3, 4)
