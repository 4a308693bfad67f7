"""Transform correctness: dense matrices, butterflies, blocks, basis selection."""
import numpy as np
import pytest

from hlq import (
    DimensionError,
    HadamardPlan,
    ParameterError,
    Tensor,
    block_ht,
    fwht,
    pad_axis,
    project_lowrank,
    select_bases,
    unproject_lowrank,
    walsh_matrix,
)


def test_walsh_k1_exact():
    h = walsh_matrix(1).data
    s = 1.0 / np.sqrt(2.0, dtype=np.float32)
    assert np.allclose(h, np.array([[s, s], [s, -s]]), atol=0)


def test_walsh_k2_row3_hand_expansion():
    # Kronecker product of the 2x2 base with itself, row 3: (1/2) * [1, -1, -1, 1]
    h = walsh_matrix(2).data
    assert np.allclose(h[3], np.array([0.5, -0.5, -0.5, 0.5]), atol=1e-7)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_walsh_orthonormal_and_symmetric(k):
    h = walsh_matrix(k).data.astype(np.float64)
    n = 1 << k
    assert np.max(np.abs(h @ h.T - np.eye(n))) < 1e-6
    assert np.array_equal(h, h.T)


def test_walsh_parameter_guard():
    for bad in (0, -1, 11, 1.5):
        with pytest.raises(ParameterError):
            walsh_matrix(bad)


def test_fwht_unit_vector():
    e0 = np.zeros(4, dtype=np.float32)
    e0[0] = 1.0
    out = fwht(Tensor(e0)).data
    assert np.allclose(out, [0.5, 0.5, 0.5, 0.5], atol=1e-7)


def test_fwht_involution():
    rng = np.random.default_rng(11)
    v = Tensor(rng.standard_normal(32).astype(np.float32))
    back = fwht(fwht(v)).data
    assert np.max(np.abs(back - v.data)) < 1e-5


def test_fwht_matches_dense_oracle():
    rng = np.random.default_rng(5)
    h = walsh_matrix(4).data.astype(np.float64)
    for _ in range(50):
        v = rng.standard_normal(16).astype(np.float32)
        fast = fwht(Tensor(v)).data
        dense = h @ v.astype(np.float64)
        denom = max(np.max(np.abs(dense)), 1e-12)
        assert np.max(np.abs(fast - dense)) / denom < 1e-5


def test_fwht_rejects_non_power_of_two():
    with pytest.raises(DimensionError):
        fwht(Tensor(np.zeros(12, dtype=np.float32)))
    with pytest.raises(DimensionError):
        fwht(Tensor(np.zeros((4, 4), dtype=np.float32)))


def test_block_ht_is_per_block_fwht():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 32)).astype(np.float32)
    plan = HadamardPlan(block_size=16, axis=1)
    out = block_ht(Tensor(x), plan).data
    for row in range(3):
        left = fwht(Tensor(x[row, :16])).data
        right = fwht(Tensor(x[row, 16:])).data
        assert np.allclose(out[row, :16], left, atol=1e-6)
        assert np.allclose(out[row, 16:], right, atol=1e-6)


def test_block_ht_constant_block():
    c = 3.25
    x = np.full((1, 16), c, dtype=np.float32)
    out = block_ht(Tensor(x), HadamardPlan(axis=1)).data
    # (1/sqrt(16)) * sum of 16 copies of c = 4c in slot 0, zero elsewhere
    assert abs(out[0, 0] - 4 * c) < 1e-5
    assert np.max(np.abs(out[0, 1:])) < 1e-5


def test_block_ht_involution():
    rng = np.random.default_rng(9)
    x = Tensor(rng.standard_normal((4, 48)).astype(np.float32))
    plan = HadamardPlan(block_size=16, axis=1)
    back = block_ht(block_ht(x, plan), plan).data
    assert np.max(np.abs(back - x.data)) < 1e-5


def test_block_ht_requires_multiple():
    with pytest.raises(DimensionError):
        block_ht(Tensor(np.zeros((2, 20), dtype=np.float32)), HadamardPlan(axis=1))


def test_select_bases_decreasing_means():
    calib = np.tile(np.arange(16, 0, -1, dtype=np.float32), (5, 1))
    idx = select_bases(Tensor(calib), 8)
    assert idx == tuple(range(8))


def test_select_bases_tie_break_low_index():
    calib = np.ones((3, 16), dtype=np.float32)
    assert select_bases(Tensor(calib), 2) == (0, 1)


def test_select_bases_against_sort_oracle():
    rng = np.random.default_rng(21)
    planted = [0, 2, 5, 9]
    calib = rng.uniform(0.0, 0.1, size=(8, 16)).astype(np.float32)
    for j in planted:
        calib[:, j] += 5.0
    got = select_bases(Tensor(calib), 4)
    means = np.abs(calib).mean(axis=0)
    oracle = tuple(sorted(sorted(range(16), key=lambda i: (-means[i], i))[:4]))
    assert got == oracle == tuple(planted)


def test_select_bases_rank_guard():
    with pytest.raises(ParameterError):
        select_bases(Tensor(np.ones((2, 16), dtype=np.float32)), 17)


def test_project_shrinks_axis_and_rejects_full_rank():
    plan = HadamardPlan(block_size=16, axis=1, basis_indices=tuple(range(8)))
    x = Tensor(np.random.default_rng(0).standard_normal((2, 16, 3)).astype(np.float32))
    out = project_lowrank(x, plan)
    assert out.shape == (2, 8, 3)
    full = plan.with_rank(16)
    with pytest.raises(ParameterError):
        project_lowrank(x, full)
    with pytest.raises(ParameterError):
        unproject_lowrank(out, full, 16)


def test_project_unproject_exact_on_subspace():
    # Build a signal living entirely in the selected-basis span.
    rng = np.random.default_rng(4)
    plan = HadamardPlan(block_size=16, axis=0, basis_indices=(0, 1, 4, 7))
    coeffs = np.zeros((32, 5), dtype=np.float32)
    for j in plan.basis_indices:
        coeffs[j] = rng.standard_normal(5)
        coeffs[16 + j] = rng.standard_normal(5)
    x = block_ht(Tensor(coeffs), plan, axis=0)  # synthesize from coefficients
    back = unproject_lowrank(project_lowrank(x, plan), plan, 32)
    assert np.max(np.abs(back.data - x.data)) < 1e-5


def test_unproject_project_matches_dense_mask_oracle():
    rng = np.random.default_rng(13)
    plan = HadamardPlan(block_size=16, axis=0, basis_indices=(0, 1, 2, 3, 5, 8, 9, 12))
    x = rng.standard_normal((32, 6)).astype(np.float32)
    got = unproject_lowrank(project_lowrank(Tensor(x), plan), plan, 32).data

    h = np.zeros((32, 32))
    from hlq import walsh_matrix as wm
    h16 = wm(4).data.astype(np.float64)
    h[:16, :16] = h16
    h[16:, 16:] = h16
    mask = np.zeros(32)
    for b in (0, 16):
        for j in plan.basis_indices:
            mask[b + j] = 1.0
    oracle = h.T @ np.diag(mask) @ h @ x.astype(np.float64)
    assert np.max(np.abs(got - oracle)) < 1e-5


def test_unproject_zero_and_constant():
    plan = HadamardPlan(block_size=16, axis=0, basis_indices=tuple(range(8)))
    z = unproject_lowrank(Tensor(np.zeros((8, 4), dtype=np.float32)), plan, 13)
    assert z.shape == (13, 4)
    assert np.all(z.data == 0)
    const = Tensor(np.full((16, 2), 2.5, dtype=np.float32))
    back = unproject_lowrank(project_lowrank(const, plan), plan, 16)
    assert np.max(np.abs(back.data - const.data)) < 1e-5  # DC basis captures constants


def test_project_unproject_idempotent_and_contractive():
    rng = np.random.default_rng(17)
    plan = HadamardPlan(block_size=16, axis=0, basis_indices=(1, 2, 6, 11))
    x = Tensor(rng.standard_normal((48, 3)).astype(np.float32))
    once = unproject_lowrank(project_lowrank(x, plan), plan, 48)
    twice = unproject_lowrank(project_lowrank(once, plan), plan, 48)
    assert np.max(np.abs(twice.data - once.data)) < 1e-5
    assert np.linalg.norm(once.data) <= np.linalg.norm(x.data) + 1e-6


def test_padding_roundtrip_non_multiple_axis():
    rng = np.random.default_rng(6)
    plan = HadamardPlan(block_size=16, axis=0, basis_indices=tuple(range(16))[:8])
    x = Tensor(rng.standard_normal((20, 3)).astype(np.float32))
    proj = project_lowrank(x, plan)
    assert proj.shape == (16, 3)  # ceil(20/16)=2 blocks, 8 kept each
    back = unproject_lowrank(proj, plan, 20)
    assert back.shape == (20, 3)


def test_full_rank_pair_degenerates_to_identity():
    rng = np.random.default_rng(8)
    plan = HadamardPlan(block_size=16, axis=1)
    x = Tensor(rng.standard_normal((2, 20, 3)).astype(np.float32))
    padded = pad_axis(x, 1, 16)
    back = block_ht(block_ht(padded, plan), plan).data[:, :20, :]
    assert np.max(np.abs(back - x.data)) < 1e-5


def test_fwht_dense_property_1000_vectors():
    rng = np.random.default_rng(123)
    h = walsh_matrix(4).data.astype(np.float64)
    v = rng.standard_normal((1000, 16)).astype(np.float32)
    dense = v.astype(np.float64) @ h.T
    fast = np.stack([fwht(Tensor(row)).data for row in v])
    denom = np.maximum(np.max(np.abs(dense), axis=1, keepdims=True), 1e-12)
    assert np.max(np.abs(fast - dense) / denom) < 1e-5
