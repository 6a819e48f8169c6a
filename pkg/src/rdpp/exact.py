"""Classical exact DPP sampling for ``DPP(X)``, ``Pr(S) ∝ det(X_S X_S^T)``.

Sampling goes through the elementary-DPP mixture: keep eigenvector ``i`` of
``X^T X`` with probability ``λ_i / (1 + λ_i)``, then volume-sample rows from
the matching orthonormal columns ``X v_i / sqrt(λ_i)`` with the bottom-up
projection sampler.
"""
from __future__ import annotations

import math

import numpy as np

from .linalg import EigenDecomposition, RowMatrix, TOL_EIG, eigh


class DegenerateDirectionError(ArithmeticError):
    pass


class RankDeficiencyError(ArithmeticError):
    pass


def elementary_indices(eig: EigenDecomposition, rng) -> np.ndarray:
    lam = eig.values
    u = rng.random(lam.shape[0])
    keep = (lam > eig.tol) & (u * (1.0 + lam) < lam)
    return np.flatnonzero(keep)


def build_ortho_columns(X, eig: EigenDecomposition, T) -> np.ndarray:
    """``n x |T|`` matrix whose ``j``-th column is ``X v_{T[j]} / sqrt(λ_{T[j]})``."""
    T = np.asarray(T, dtype=np.int64)
    lam = eig.values[T]
    if np.any(lam <= eig.tol):
        raise DegenerateDirectionError(
            f"selected eigenvalue {lam.min():.3e} is below tolerance {eig.tol:.3e}")
    vecs = eig.vectors[:, T] / np.sqrt(lam)
    if isinstance(X, RowMatrix):
        return X.matmul(vecs)
    return np.asarray(X) @ vecs


def volume_sample_bottom_up(V, rng) -> np.ndarray:
    """Draw ``S ~ VS(V)`` for ``V`` with orthonormal columns; ``|S| = V.shape[1]``.

    Each step samples a row with probability proportional to its squared
    distance from the span of the rows already picked. That span is kept as
    an orthonormal basis in ``R^k``, so a step costs one ``n x k`` product.
    Residual norms are updated incrementally and refreshed halfway through
    to bound drift.
    """
    V = np.asarray(V, dtype=np.float64)
    n, k = V.shape
    full = np.einsum("ij,ij->i", V, V)
    norms = full.copy()
    tol = 1e-10 * max(float(full.max(initial=0.0)), 1.0)
    u = rng.random(k)
    picked = np.empty(k, dtype=np.int64)
    basis = np.empty((k, k))
    refresh = k // 2
    for step in range(k):
        w = np.maximum(norms, 0.0)
        w[picked[:step]] = 0.0
        cum = w.cumsum()
        total = cum[-1]
        if total <= tol:
            raise RankDeficiencyError(
                f"residual row norms vanished after {step} of {k} picks")
        j = min(int(cum.searchsorted(u[step] * total, side="right")), n - 1)
        while w[j] == 0.0:
            j -= 1
        picked[step] = j
        if step + 1 == k:
            break
        r = V[j] - (basis[:step].T @ (basis[:step] @ V[j]))
        basis[step] = r / math.sqrt(r @ r)
        if step + 1 == refresh:
            P = V @ basis[:step + 1].T
            norms = full - np.einsum("ij,ij->i", P, P)
        else:
            proj = V @ basis[step]
            norms -= proj * proj
    picked.sort()
    return picked


def sample_dpp_exact(X, eig: EigenDecomposition | None = None, rng=None) -> list[int]:
    """Exact draw from ``DPP(X)``.

    ``X`` may be a :class:`RowMatrix` (indices are reported in its original
    numbering) or a plain 2-d array (row positions). ``eig`` is the
    eigendecomposition of ``X^T X``; it is computed when omitted.
    """
    if rng is None:
        raise TypeError("an explicit random generator is required")
    if eig is None:
        G = X.gram() if isinstance(X, RowMatrix) else np.asarray(X).T @ np.asarray(X)
        eig = eigh(G, psd=True)
    T = elementary_indices(eig, rng)
    if T.size == 0:
        return []
    V = build_ortho_columns(X, eig, T)
    S = volume_sample_bottom_up(V, rng)
    if isinstance(X, RowMatrix):
        S = np.sort(X.index_map[S])
    return [int(s) for s in S]


def expected_size(eig: EigenDecomposition) -> float:
    lam = np.maximum(eig.values, 0.0)
    return float(np.sum(lam / (1.0 + lam)))


def orthonormality_error(V) -> float:
    k = V.shape[1]
    return float(np.linalg.norm(V.T @ V - np.eye(k)))


def check_orthonormal(V):
    k = V.shape[1]
    err = orthonormality_error(V)
    if err > TOL_EIG * max(k, 1) * 10:
        raise DegenerateDirectionError(f"columns are not orthonormal (error {err:.3e})")
    return err
