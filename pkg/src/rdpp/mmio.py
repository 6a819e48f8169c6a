"""Matrix Market and CSV input/output for :class:`~rdpp.linalg.RowMatrix`.

Matrix Market goes through ``scipy.io``: sparse matrices are written in
``coordinate`` format, dense ones in ``array`` format, at full precision so
every finite double survives a write/read round trip.
"""
from __future__ import annotations

import os

import numpy as np
import scipy.io
import scipy.sparse as sp

from .linalg import RowMatrix


class MatrixFormatError(ValueError):
    pass


def read_mtx(path, **kwargs) -> RowMatrix:
    """Coordinate files load as CSR (kept sparse by default), array files as dense."""
    try:
        mat = scipy.io.mmread(path)
    except (ValueError, OSError, IndexError, TypeError) as exc:
        raise MatrixFormatError(f"{path}: {exc}") from None
    if np.iscomplexobj(mat.data if sp.issparse(mat) else mat):
        raise MatrixFormatError(f"{path}: complex matrices are not supported")
    if sp.issparse(mat):
        kwargs.setdefault("dense_budget", 0)
        return RowMatrix(sp.csr_matrix(mat, dtype=np.float64), **kwargs)
    return RowMatrix(np.asarray(mat, dtype=np.float64), **kwargs)


def write_mtx(path, X):
    """Write ``X`` (RowMatrix, ndarray or sparse) in Matrix Market format."""
    mat = X.data if isinstance(X, RowMatrix) else X
    if not sp.issparse(mat):
        mat = np.asarray(mat, dtype=np.float64)
    scipy.io.mmwrite(str(path), mat)


def read_csv(path, **kwargs) -> RowMatrix:
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
    except ValueError as exc:
        raise MatrixFormatError(f"{path}: {exc}") from None
    if arr.size == 0:
        raise MatrixFormatError(f"{path}: no data rows")
    return RowMatrix(arr, **kwargs)


def write_csv(path, X):
    arr = X.to_dense() if isinstance(X, RowMatrix) else np.asarray(X, dtype=np.float64)
    np.savetxt(path, np.atleast_2d(arr), delimiter=",", fmt="%.17g")


def read_matrix(path, **kwargs) -> RowMatrix:
    """Dispatch on extension: ``.mtx`` is Matrix Market, anything else is CSV."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    if str(path).lower().endswith(".mtx"):
        return read_mtx(path, **kwargs)
    return read_csv(path, **kwargs)
