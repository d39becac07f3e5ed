import numpy as np
import pytest
import scipy.sparse as sp

from hetgrid.linalg import (
    ShapeError,
    col_normalize,
    csr,
    csr_from_coo,
    dense,
    empty_csr,
    identity_csr,
    row_normalize,
    sp_coarsen,
    sp_transpose,
    spmm,
)


def naive_spmm(a, b):
    """Triple-loop dense oracle."""
    ad = a.toarray()
    m, n = ad.shape
    c = b.shape[1]
    out = np.zeros((m, c), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            for k in range(c):
                out[i, k] += float(ad[i, j]) * float(b[j, k])
    return out


def test_dense_validates():
    with pytest.raises(ShapeError):
        dense([1.0, 2.0])
    with pytest.raises(ValueError):
        dense([[np.inf, 0.0]])
    assert dense([[1, 2]]).dtype == np.float32
    assert dense(np.zeros((2, 2), dtype=np.float64)).dtype == np.float64


def test_csr_canonical_form():
    a = csr_from_coo([0, 0, 1], [1, 1, 0], [1.0, 2.0, 0.0], (2, 2))
    # duplicates summed, explicit zero pruned
    assert a.nnz == 1
    assert a[0, 1] == 3.0
    with pytest.raises(ValueError):
        csr(sp.csr_matrix(np.array([[np.nan]])))


def test_spmm_identity():
    b = dense([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    out = spmm(identity_csr(3), b)
    assert np.array_equal(out, b)


def test_spmm_empty_gives_zero():
    out = spmm(empty_csr(2, 2), dense([[1.0], [2.0]]))
    assert np.array_equal(out, np.zeros((2, 1), dtype=np.float32))


def test_spmm_hand_case():
    a = csr([[0.0, 1.0], [0.0, 0.0]])
    out = spmm(a, dense([[5.0], [7.0]]))
    assert np.array_equal(out, np.array([[7.0], [0.0]], dtype=np.float32))


def test_spmm_shape_error():
    with pytest.raises(ShapeError):
        spmm(identity_csr(3), dense([[1.0], [2.0]]))


def test_spmm_matches_naive_oracle():
    rng = np.random.default_rng(11)
    for _ in range(20):
        mask = rng.random((8, 8)) < 0.3
        a = csr(np.where(mask, rng.normal(size=(8, 8)), 0.0).astype(np.float32))
        b = rng.normal(size=(8, 5)).astype(np.float32)
        assert np.max(np.abs(spmm(a, b) - naive_spmm(a, b))) <= 1e-5


def test_spmm_zero_rows_stay_zero():
    a = csr([[0.0, 0.0], [1.0, 2.0]])
    out = spmm(a, dense([[3.0], [4.0]]))
    assert out[0, 0] == 0.0


def test_sp_transpose_identity_and_single_entry():
    assert (sp_transpose(identity_csr(3)) != identity_csr(3)).nnz == 0
    a = csr_from_coo([0], [1], [2.5], (2, 2))
    at = sp_transpose(a)
    assert at.nnz == 1 and at[1, 0] == 2.5


def test_sp_transpose_roundtrip():
    rng = np.random.default_rng(5)
    mask = rng.random((5, 5)) < 0.4
    a = csr(np.where(mask, rng.normal(size=(5, 5)), 0.0))
    back = sp_transpose(sp_transpose(a))
    assert np.array_equal(back.toarray(), a.toarray())


def test_sp_coarsen_identity_grouping():
    a = csr([[0.0, 1.0], [1.0, 0.0]])
    out = sp_coarsen(identity_csr(2), a)
    assert np.array_equal(out.toarray(), a.toarray())


def test_sp_coarsen_hand_fixture():
    # 1x4 chain, hard groups {0,1} and {2,3}, right-neighbour adjacency
    s = csr([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    a = csr_from_coo([0, 1, 2], [1, 2, 3], [1.0, 1.0, 1.0], (4, 4))
    out = sp_coarsen(s, a)
    assert np.array_equal(out.toarray(), np.array([[1.0, 1.0], [0.0, 1.0]], dtype=np.float32))


def test_sp_coarsen_single_group_sums_everything():
    rng = np.random.default_rng(3)
    a = csr(rng.random((4, 4)).astype(np.float32))
    s = csr(np.ones((4, 1), dtype=np.float32))
    out = sp_coarsen(s, a)
    assert out.shape == (1, 1)
    assert abs(out[0, 0] - a.toarray().sum()) <= 1e-5


def test_sp_coarsen_matches_dense_oracle():
    rng = np.random.default_rng(7)
    for _ in range(15):
        sd = np.where(rng.random((6, 3)) < 0.5, rng.random((6, 3)), 0.0)
        ad = np.where(rng.random((6, 6)) < 0.4, rng.random((6, 6)), 0.0)
        got = sp_coarsen(csr(sd), csr(ad)).toarray()
        want = sd.T @ ad @ sd
        assert np.max(np.abs(got - want)) <= 1e-5


def test_sp_coarsen_shape_errors():
    with pytest.raises(ShapeError):
        sp_coarsen(csr(np.ones((3, 2))), csr(np.ones((4, 4))))
    with pytest.raises(ShapeError):
        sp_coarsen(csr(np.ones((3, 2))), csr(np.ones((3, 4))))


def test_col_normalize_hard_assignment():
    s = csr([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    out = col_normalize(s).toarray()
    assert np.array_equal(out, np.array(
        [[0.5, 0.0], [0.5, 0.0], [0.0, 0.5], [0.0, 0.5]], dtype=np.float32))


def test_row_normalize_already_stochastic_rows_unchanged():
    s = csr([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    assert np.array_equal(row_normalize(s).toarray(), s.toarray())


def test_normalize_zero_column_stays_zero():
    s = csr([[1.0, 0.0], [2.0, 0.0]])
    out = col_normalize(s).toarray()
    assert np.array_equal(out[:, 1], np.zeros(2, dtype=np.float32))


def test_normalize_rejects_negative():
    s = csr([[-1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        col_normalize(s)
    with pytest.raises(ValueError):
        row_normalize(s)


def test_normalized_sums_property():
    rng = np.random.default_rng(13)
    for _ in range(20):
        sd = np.where(rng.random((7, 4)) < 0.5, rng.random((7, 4)), 0.0)
        s = csr(sd.astype(np.float32))
        csums = np.asarray(col_normalize(s).sum(axis=0)).ravel()
        for v in csums:
            assert v == 0.0 or abs(v - 1.0) <= 1e-6
        rsums = np.asarray(row_normalize(s).sum(axis=1)).ravel()
        for v in rsums:
            assert v == 0.0 or abs(v - 1.0) <= 1e-6
