import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rdpp.linalg import (EigenError, NotPositiveDefiniteError, RowMatrix, as_symmetric, cholesky,
                         eigh, logdet_psd_plus_identity, quad_form)
from rdpp.mmio import MatrixFormatError, read_matrix, write_csv, write_mtx
from rdpp.rng import make_rng


def test_eigh_examples():
    e = eigh(np.eye(3))
    np.testing.assert_allclose(e.values, [1, 1, 1])
    np.testing.assert_allclose(e.vectors.T @ e.vectors, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(eigh(np.array([[2.0, 1.0], [1.0, 2.0]])).values, [3, 1])
    np.testing.assert_allclose(eigh(np.zeros((2, 2))).values, [0, 0])


def test_eigh_psd_rejects_negative():
    with pytest.raises(EigenError):
        eigh(np.diag([1.0, -1.0]), psd=True)
    e = eigh(np.diag([1.0, -1e-14]), psd=True)
    assert e.values.min() == 0.0


def test_cholesky_examples():
    c = cholesky(np.eye(3))
    np.testing.assert_allclose(c.L, np.eye(3))
    assert c.logdet == 0.0
    c = cholesky(np.array([[4.0]]))
    np.testing.assert_allclose(c.L, [[2.0]])
    assert math.isclose(c.logdet, math.log(4))
    assert math.isclose(cholesky(np.array([[3.0, 1.0], [1.0, 3.0]])).logdet, math.log(8))
    with pytest.raises(NotPositiveDefiniteError):
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_quad_form_examples():
    assert math.isclose(quad_form(np.array([1.0, 0.0]), cholesky(2 * np.eye(2))), 0.5)
    M = cholesky(np.array([[3.0, 1.0], [1.0, 3.0]]))
    assert math.isclose(quad_form(np.array([1.0, 1.0]), M), 0.5)
    assert quad_form(np.zeros(2), M) == 0.0
    with pytest.raises(ValueError):
        quad_form(np.zeros(3), M)


def test_as_symmetric_is_bitwise():
    M = make_rng(0).standard_normal((5, 5))
    S = as_symmetric(M)
    assert np.array_equal(S, S.T)
    with pytest.raises(ValueError):
        as_symmetric(np.zeros((2, 3)))


spd = st.integers(1, 6).flatmap(lambda d: st.tuples(
    st.just(d), arrays(np.float64, (d + 2, d), elements=st.floats(-3, 3, width=64))))


@settings(max_examples=60, deadline=None)
@given(spd)
def test_logdet_matches_eigenvalues(case):
    d, B = case
    M = B.T @ B + 0.1 * np.eye(d)
    c = cholesky(M)
    ref = float(np.sum(np.log(np.linalg.eigvalsh(M))))
    assert abs(c.logdet - ref) <= 1e-8 * max(1.0, abs(ref))
    x = B[0]
    assert abs(quad_form(x, c) - x @ np.linalg.solve(M, x)) <= 1e-10 * max(1.0, x @ x / 0.1)
    np.testing.assert_allclose(c.quad_forms(B), np.einsum("ij,ij->i", B, np.linalg.solve(M, B.T).T),
                               rtol=1e-9, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(spd)
def test_eigh_reconstructs(case):
    _, B = case
    M = B.T @ B
    e = eigh(M, psd=True)
    assert np.all(np.diff(e.values) <= 0)
    np.testing.assert_allclose(e.reconstruct(), M, atol=1e-9 * max(1.0, np.abs(M).max()))


def test_logdet_psd_plus_identity():
    G = np.array([[2.0, 1.0], [1.0, 2.0]])
    assert math.isclose(logdet_psd_plus_identity(G), math.log(8))


def test_rowmatrix_drops_zero_rows():
    X = RowMatrix(np.array([[1.0, 0.0], [0.0, 0.0], [2.0, 3.0]]))
    assert X.n == 2 and X.n_original == 3
    assert list(X.index_map) == [0, 2]
    np.testing.assert_array_equal(X.rows([1, 1, 0]), [[2, 3], [2, 3], [1, 0]])


def test_rowmatrix_sparse_and_dense_agree():
    A = sp.random(50, 4, density=0.3, random_state=1, format="csr")
    Xs = RowMatrix(A, dense_budget=0)
    Xd = RowMatrix(A.toarray())
    assert Xs.is_sparse and not Xd.is_sparse
    assert Xs.n == Xd.n
    np.testing.assert_array_equal(Xs.index_map, Xd.index_map)
    idx = np.array([0, 3, 3, Xs.n - 1])
    np.testing.assert_allclose(Xs.rows(idx), Xd.rows(idx))
    np.testing.assert_allclose(Xs.gram(), Xd.gram(), atol=1e-12)
    w = np.arange(1.0, Xs.n + 1)
    np.testing.assert_allclose(Xs.gram(w), Xd.gram(w), atol=1e-12)
    assert Xs.nnz == Xd.nnz


def test_rowmatrix_rejects_bad_input():
    with pytest.raises(ValueError):
        RowMatrix(np.array([[1.0, np.nan]]))
    with pytest.raises(ValueError):
        RowMatrix(np.zeros((2, 0)))


@pytest.mark.parametrize("sparse", [False, True])
def test_mtx_round_trip_is_lossless(tmp_path, sparse):
    X = make_rng(3).standard_normal((6, 3)) * 1e-3
    X[2] = 0.0
    data = sp.csr_matrix(X) if sparse else X
    path = tmp_path / "x.mtx"
    write_mtx(path, data)
    Y = read_matrix(path, dense_budget=np.inf)
    assert Y.n_original == 6 and Y.n == 5
    full = np.zeros((6, 3))
    full[Y.index_map] = Y.to_dense()
    assert np.array_equal(full, X)


def test_csv_round_trip(tmp_path):
    X = make_rng(4).standard_normal((4, 2))
    write_csv(tmp_path / "x.csv", X)
    assert np.array_equal(read_matrix(tmp_path / "x.csv").to_dense(), X)


def test_mtx_errors(tmp_path):
    p = tmp_path / "bad.mtx"
    p.write_text("not a banner\n")
    with pytest.raises(MatrixFormatError):
        read_matrix(p)
    p.write_text("%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 1.0\n")
    with pytest.raises(MatrixFormatError):
        read_matrix(p)
    with pytest.raises(FileNotFoundError):
        read_matrix(tmp_path / "missing.mtx")
