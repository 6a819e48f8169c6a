"""Row-matrix container and the small symmetric kernels the samplers rely on.

Everything here works on ``float64``. Symmetric matrices are plain ``(d, d)``
numpy arrays; :func:`as_symmetric` rebuilds them from the lower triangle so
that ``M[i, j] == M[j, i]`` holds bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_triangular

TOL_PSD_REL = 1e-10
TOL_EIG = 1e-8

# 64 MiB of float64 entries
DEFAULT_DENSE_BUDGET = 8 * 2**20


class LinAlgError(ArithmeticError):
    """Raised when a factorization cannot be completed."""


class NotPositiveDefiniteError(LinAlgError):
    pass


class EigenError(LinAlgError):
    def __init__(self, msg, residual=float("nan")):
        super().__init__(f"{msg} (residual={residual:.3e})")
        self.residual = residual


def tol_psd(M):
    """PSD tolerance for ``M``: ``1e-10`` times its largest diagonal entry."""
    if M.size == 0:
        return 0.0
    return TOL_PSD_REL * max(float(np.max(np.abs(np.diag(M)))), 0.0)


def as_symmetric(M):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    out = M.copy()
    iu = np.triu_indices(M.shape[0], 1)
    out[iu] = M.T[iu]
    return out


class RowMatrix:
    """An ``n x d`` matrix accessed by rows, stored dense or as CSR.

    Zero rows are dropped on construction (unless ``drop_zero_rows=False``);
    ``index_map[i]`` gives the original row number of retained row ``i`` so
    samplers can report indices in the caller's numbering.
    """

    def __init__(self, data, *, drop_zero_rows=True, dense_budget=DEFAULT_DENSE_BUDGET,
                 index_map=None, n_original=None):
        if sp.issparse(data):
            mat = sp.csr_matrix(data, dtype=np.float64)
            mat.eliminate_zeros()
            mat.sort_indices()
            if mat.shape[0] * mat.shape[1] <= dense_budget:
                mat = mat.toarray()
        else:
            mat = np.array(data, dtype=np.float64, copy=True)
            if mat.ndim == 1:
                mat = mat[None, :]
            if mat.ndim != 2:
                raise ValueError(f"expected a 2-d array, got {mat.ndim} dims")
            if mat.shape[0] * mat.shape[1] > dense_budget:
                mat = sp.csr_matrix(mat)
        if mat.shape[1] < 1:
            raise ValueError("matrix must have at least one column")
        if not np.all(np.isfinite(mat.data if sp.issparse(mat) else mat)):
            raise ValueError("matrix has non-finite entries")

        n0 = mat.shape[0]
        idx = np.arange(n0, dtype=np.int64) if index_map is None else np.asarray(index_map, dtype=np.int64)
        if drop_zero_rows:
            keep = _row_sq_norms(mat) > 0
            if not keep.all():
                mat = mat[keep]
                idx = idx[keep]
        if sp.issparse(mat):
            mat.sort_indices()
        else:
            mat.setflags(write=False)
        self._mat = mat
        self.index_map = idx
        self.index_map.setflags(write=False)
        self.n_original = int(n0 if n_original is None else n_original)

    @property
    def n(self) -> int:
        return self._mat.shape[0]

    @property
    def d(self) -> int:
        return self._mat.shape[1]

    @property
    def shape(self):
        return self._mat.shape

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self._mat)

    @property
    def nnz(self) -> int:
        if self.is_sparse:
            return int(self._mat.nnz)
        return int(np.count_nonzero(self._mat))

    @property
    def data(self):
        """Underlying storage (read-only ndarray or CSR matrix)."""
        return self._mat

    def to_dense(self):
        if self.is_sparse:
            return self._mat.toarray()
        return np.array(self._mat)

    def row(self, i):
        return self.rows(np.array([i]))[0]

    def rows(self, idx):
        """Dense ``(len(idx), d)`` copy of the selected rows (repeats allowed)."""
        idx = np.asarray(idx, dtype=np.int64)
        if not self.is_sparse:
            return self._mat[idx]
        m = self._mat
        out = np.zeros((idx.size, self.d))
        starts = m.indptr[idx]
        counts = m.indptr[idx + 1] - starts
        if counts.sum() == 0:
            return out
        which = np.repeat(np.arange(idx.size), counts)
        offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        pos = np.repeat(starts, counts) + offs
        out[which, m.indices[pos]] = m.data[pos]
        return out

    def row_sq_norms(self):
        return _row_sq_norms(self._mat)

    def gram(self, weights=None):
        """``X^T diag(weights) X`` as a dense symmetric ``(d, d)`` array."""
        X = self._mat
        if weights is None:
            G = X.T @ X
        elif self.is_sparse:
            G = X.T @ sp.diags(weights) @ X
        else:
            G = (X.T * weights) @ X
        if sp.issparse(G):
            G = G.toarray()
        return as_symmetric(np.asarray(G))

    def matmul(self, B):
        """Dense ``X @ B``; cost proportional to ``nnz(X) * B.shape[1]`` when sparse."""
        return np.asarray(self._mat @ B)

    def scaled(self, alpha):
        return RowMatrix(self._mat * float(alpha), drop_zero_rows=False,
                         index_map=self.index_map, n_original=self.n_original,
                         dense_budget=np.inf if not self.is_sparse else 0)

    def __repr__(self):
        kind = "csr" if self.is_sparse else "dense"
        return f"RowMatrix(n={self.n}, d={self.d}, nnz={self.nnz}, {kind})"


def _row_sq_norms(mat):
    if sp.issparse(mat):
        return np.asarray(mat.multiply(mat).sum(axis=1)).ravel()
    return np.einsum("ij,ij->i", mat, mat)


def as_row_matrix(X, **kwargs) -> RowMatrix:
    if isinstance(X, RowMatrix):
        return X
    return RowMatrix(X, **kwargs)


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues in descending order with matching orthonormal eigenvectors (columns)."""

    values: np.ndarray
    vectors: np.ndarray
    tol: float = 0.0

    @property
    def d(self) -> int:
        return self.values.shape[0]

    def reconstruct(self):
        return (self.vectors * self.values) @ self.vectors.T

    def positive(self):
        """Indices of eigenvalues strictly above the PSD tolerance."""
        return np.flatnonzero(self.values > self.tol)


def eigh_gram(G) -> EigenDecomposition:
    """Fast path for a freshly formed Gram matrix ``Y^T Y`` (symmetric, PSD).

    Skips the symmetrization and residual checks of :func:`eigh`.
    """
    w, V = np.linalg.eigh(G)
    w = np.maximum(w[::-1], 0.0)
    return EigenDecomposition(w, V[:, ::-1], TOL_PSD_REL * float(G.diagonal().max()))


def eigh(M, psd=False, check=True) -> EigenDecomposition:
    """Symmetric eigendecomposition, eigenvalues sorted descending.

    With ``psd=True`` eigenvalues in ``(-tol_psd, 0)`` are clamped to zero and
    anything more negative raises. ``check=False`` skips the reconstruction
    residual test (used on the sampler's tiny per-draw matrices).
    """
    M = as_symmetric(M)
    if check and not np.all(np.isfinite(M)):
        raise EigenError("matrix has non-finite entries")
    try:
        w, V = np.linalg.eigh(M)
    except np.linalg.LinAlgError as exc:
        raise EigenError(f"eigensolver did not converge: {exc}") from exc
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    tol = tol_psd(M)
    if psd:
        if w.size and w[-1] < -tol:
            raise EigenError("matrix is not positive semi-definite", residual=-w[-1])
        w = np.maximum(w, 0.0)
    scale = np.linalg.norm(M) if check else 0.0
    if scale > 0:
        resid = np.linalg.norm((V * w) @ V.T - M) / scale
        if resid > TOL_EIG:
            raise EigenError("eigendecomposition failed accuracy check", residual=resid)
    return EigenDecomposition(w, V, tol)


class CholeskyFactor:
    """Lower-triangular ``L`` with ``L @ L.T == M``."""

    def __init__(self, L):
        self.L = np.asarray(L, dtype=np.float64)
        self.L.setflags(write=False)

    @property
    def d(self) -> int:
        return self.L.shape[0]

    @cached_property
    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.L))))

    @cached_property
    def inv_L(self):
        """``L^{-1}``, so ``x^T M^{-1} x == ||L^{-1} x||^2``."""
        Li = solve_triangular(self.L, np.eye(self.d), lower=True)
        Li.setflags(write=False)
        return Li

    def solve(self, b):
        z = solve_triangular(self.L, b, lower=True)
        return solve_triangular(self.L.T, z, lower=False)

    def inverse(self):
        Li = self.inv_L
        return as_symmetric(Li.T @ Li)

    def quad_forms(self, rows):
        """``x^T M^{-1} x`` for every row of a ``(k, d)`` array."""
        Z = rows @ self.inv_L.T
        return np.einsum("ij,ij->i", Z, Z)


def cholesky(M) -> CholeskyFactor:
    M = as_symmetric(M)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"matrix is not positive definite: {exc}") from exc
    if np.any(np.diag(L) <= 0) or not np.all(np.isfinite(L)):
        raise NotPositiveDefiniteError("non-positive pivot in Cholesky factorization")
    return CholeskyFactor(L)


def quad_form(x, factor: CholeskyFactor) -> float:
    """``x^T M^{-1} x`` with one triangular solve, ``M = L L^T``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (factor.d,):
        raise ValueError(f"dimension mismatch: vector {x.shape} vs factor of size {factor.d}")
    z = solve_triangular(factor.L, x, lower=True)
    return float(z @ z)


def logdet_psd_plus_identity(G) -> float:
    """``log det(I + G)`` for PSD ``G`` via Cholesky."""
    d = G.shape[0]
    L = np.linalg.cholesky(np.eye(d) + G)
    return 2.0 * float(np.sum(np.log(np.diag(L))))
