"""Preprocessing for the fast sampler: the spectral approximation ``A ≈ X^T X``
and the ridge-score proposal ``l~``.

Two routes are provided. ``mode="exact"`` uses ``A = X^T X`` and exact ridge
scores (``O(n d^2)``). ``mode="sketched"`` follows the near input-sparsity
recipe:

1. approximate leverage scores from a count-sketch subspace embedding and a
   sign-random projection,
2. ``A`` from ``r(η)`` rows drawn i.i.d. from those scores and reweighted,
3. ridge scores ``x_i^T (I+A)^{-1} x_i`` estimated as row norms of
   ``X L^{-T} G`` for a random sign matrix ``G``.

``η`` is set in two passes: a rough ``A`` at ``η = 1/2`` estimates the
expected sample size, which then fixes the accuracy of the final ``A``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_triangular

from .alias import AliasTable
from .linalg import (CholeskyFactor, EigenDecomposition, RowMatrix, as_row_matrix,
                     as_symmetric, cholesky, eigh)

TV_CONSTANT = 160.0
ETA0 = 0.5
SBAR_INFLATION = 3.0
FAIL_PROB = 0.01


class SketchError(ArithmeticError):
    pass


def r_eta(d: int, eta: float) -> int:
    """Rows sampled for an ``η``-spectral approximation: ``ceil(8 d ln(2d) / η²)``."""
    return int(math.ceil(8.0 * d * math.log(2.0 * d) / (eta * eta)))


def embed_dim(d: int) -> int:
    return max(d * d + d, 100)


def jl_dim(n: int) -> int:
    return int(math.ceil(48.0 * math.log(max(n, 10))))


def eta_for(epsilon: float, s_bar: float) -> float:
    return epsilon / (4.0 * s_bar + TV_CONSTANT * math.log(9.0 / epsilon))


@dataclass(frozen=True)
class LeverageDistribution:
    p: np.ndarray
    guarantee_factor: float


def leverage_scores_exact(X) -> LeverageDistribution:
    X = as_row_matrix(X)
    eig = eigh(X.gram(), psd=True)
    pos = eig.positive()
    if pos.size == 0:
        raise ValueError("matrix has rank zero")
    Y = X.matmul(eig.vectors[:, pos] / np.sqrt(eig.values[pos]))
    lev = np.einsum("ij,ij->i", Y, Y)
    return LeverageDistribution(lev / pos.size, 1.0)


def count_sketch(X: RowMatrix, m: int, rng):
    """``S X`` for an ``m x n`` count-sketch ``S`` (one ±1 per column)."""
    n = X.n
    buckets = rng.integers(0, m, size=n)
    signs = rng.choice(np.array([-1.0, 1.0]), size=n)
    S = sp.csr_matrix((signs, (buckets, np.arange(n))), shape=(m, n))
    SX = S @ X.data
    if sp.issparse(SX):
        SX = SX.toarray()
    return np.asarray(SX)


def _sign_matrix(rows, cols, rng):
    return rng.choice(np.array([-1.0, 1.0]), size=(rows, cols)) / math.sqrt(cols)


def leverage_scores_sketched(X, rng, m_embed=None, k_jl=None, max_retries=3) -> LeverageDistribution:
    """Leverage-score distribution within a factor 2 of exact, w.h.p.

    Cost is ``O(nnz(X) k_jl + poly(d))``: one pass to form the count sketch,
    a thin QR of the ``m x d`` sketch, and one pass for ``X R^{-1} G``.
    """
    X = as_row_matrix(X)
    d = X.d
    m = embed_dim(d) if m_embed is None else int(m_embed)
    k = jl_dim(X.n) if k_jl is None else int(k_jl)
    for attempt in range(max_retries + 1):
        SX = count_sketch(X, m, rng)
        R = np.linalg.qr(SX, mode="r")
        diag = np.abs(np.diag(R))
        if diag.size == d and diag.min() > 1e-10 * max(diag.max(), 1e-300):
            break
        m *= 2
    else:
        raise SketchError(
            f"sketch stayed rank deficient after {max_retries} retries (m={m // 2}); "
            "the input may be rank deficient, use exact mode")
    W = solve_triangular(R, _sign_matrix(d, k, rng), lower=False)
    Y = X.matmul(W)
    lev = np.einsum("ij,ij->i", Y, Y)
    if np.any(lev <= 0):
        lev = np.maximum(lev, lev[lev > 0].min() * 1e-3)
    return LeverageDistribution(lev / lev.sum(), 2.0)


def build_A(X, p, eta, rng, r=None):
    """``(1/r) Σ_t x_σt x_σt^T / p_σt`` with ``σ_t`` i.i.d. from ``p``.

    The ``r`` draws are taken through their multinomial counts, which gives
    the same matrix in distribution at ``O(n + min(r, n) d^2)`` cost even
    when ``r`` is astronomically large.
    """
    X = as_row_matrix(X)
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    probs = p.p if isinstance(p, LeverageDistribution) else np.asarray(p, dtype=np.float64)
    r = r_eta(X.d, eta) if r is None else int(r)
    counts = rng.multinomial(r, probs / probs.sum())
    w = np.zeros(X.n)
    hit = counts > 0
    w[hit] = counts[hit] / (r * probs[hit])
    if X.is_sparse:
        return X.gram(w)
    rows = X.rows(np.flatnonzero(hit))
    return as_symmetric((rows.T * w[hit]) @ rows)


def ridge_scores_exact(X, A):
    """Exact ``l_i = x_i^T (I+A)^{-1} x_i`` and their sum ``ŝ``."""
    X = as_row_matrix(X)
    F = cholesky(np.eye(X.d) + as_symmetric(A))
    Z = X.matmul(F.inv_L.T)
    l = np.einsum("ij,ij->i", Z, Z)
    return l, float(l.sum())


def ridge_scores_sketched(X, A, rng, k_jl=None, factor: CholeskyFactor | None = None):
    """Row norms of ``X L^{-T} G`` estimating ``l_i`` within ``[l_i/2, 3 l_i/2]`` w.h.p.

    ``L^{-T}`` plays the role of ``(I+A)^{-1/2}``: any square-root factor
    gives the same row norms before projection.
    """
    X = as_row_matrix(X)
    F = factor if factor is not None else cholesky(np.eye(X.d) + as_symmetric(A))
    k = jl_dim(X.n) if k_jl is None else int(k_jl)
    W = F.inv_L.T @ _sign_matrix(X.d, k, rng)
    Y = X.matmul(W)
    return np.einsum("ij,ij->i", Y, Y)


def effective_dimension(A) -> float:
    """``tr(A (I+A)^{-1})``."""
    lam = np.maximum(np.linalg.eigvalsh(as_symmetric(A)), 0.0)
    return float(np.sum(lam / (1.0 + lam)))


@dataclass(frozen=True)
class PreprocessedState:
    A: np.ndarray
    chol: CholeskyFactor
    logdet: float
    s_tilde: float
    q: int
    l_tilde: np.ndarray
    table: AliasTable
    eta: float
    index_map: np.ndarray
    mode: str = "exact"
    s_bar: float = float("nan")
    info: dict = field(default_factory=dict, compare=False)

    @property
    def n(self) -> int:
        return self.l_tilde.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def l_tilde_sum(self) -> float:
        return self.table.total

    def eig_A(self) -> EigenDecomposition:
        return eigh(self.A, psd=True)


def make_state(A, l_tilde, eta, index_map, mode="exact", s_bar=float("nan"), info=None,
               q=None, s_tilde=None) -> PreprocessedState:
    A = as_symmetric(A)
    d = A.shape[0]
    chol = cholesky(np.eye(d) + A)
    if s_tilde is None:
        s_tilde = effective_dimension(A)
    if s_tilde <= 0:
        raise ValueError("A must be a non-zero PSD matrix (s_tilde = 0)")
    if q is None:
        # relative slack absorbs rounding in exactly-representable cases like 2*2*1.25
        q = max(int(math.ceil(2.0 * d * s_tilde * (1.0 - 1e-12))), 1)
    if q <= s_tilde:
        raise ValueError(f"q = {q} must exceed s_tilde = {s_tilde:.6g}")
    l_tilde = np.asarray(l_tilde, dtype=np.float64)
    if np.any(l_tilde <= 0):
        raise ValueError("ridge score estimates must be positive")
    l_tilde.setflags(write=False)
    index_map = np.asarray(index_map, dtype=np.int64)
    index_map.setflags(write=False)
    A.setflags(write=False)
    return PreprocessedState(
        A=A, chol=chol, logdet=chol.logdet, s_tilde=float(s_tilde), q=int(q),
        l_tilde=l_tilde, table=AliasTable(l_tilde), eta=float(eta), index_map=index_map,
        mode=mode, s_bar=float(s_bar), info=dict(info or {}))


def build_state(X, epsilon=0.1, mode="exact", rng=None) -> PreprocessedState:
    """Everything the sampler needs, for target accuracy ``epsilon``.

    In exact mode ``A = X^T X`` and ``l~ = l`` so the sampler's rescaling
    is ``ρ = 1`` and ``epsilon`` is unused beyond validation.
    """
    if not (0.0 < epsilon <= 1.0):
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    X = as_row_matrix(X)
    if X.n == 0:
        raise ValueError("matrix has no non-zero rows")
    if mode == "exact":
        A = X.gram()
        l, _ = ridge_scores_exact(X, A)
        return make_state(A, l, 0.0, X.index_map, mode="exact")
    if mode != "sketched":
        raise ValueError(f"unknown mode {mode!r}")
    if rng is None:
        raise TypeError("sketched preprocessing needs an explicit random generator")

    lev = leverage_scores_sketched(X, rng)
    A0 = build_A(X, lev, ETA0, rng)
    s_bar = SBAR_INFLATION * max(1.0, effective_dimension(A0))
    eta = eta_for(epsilon, s_bar)
    A = build_A(X, lev, eta, rng)
    chol = cholesky(np.eye(X.d) + A)
    l_tilde = ridge_scores_sketched(X, A, rng, factor=chol)
    info = {"r": r_eta(X.d, eta), "r0": r_eta(X.d, ETA0), "k_jl": jl_dim(X.n),
            "m_embed": embed_dim(X.d)}
    return make_state(A, l_tilde, eta, X.index_map, mode="sketched", s_bar=s_bar, info=info)


def calibrate_scale(eig: EigenDecomposition, target: float, tol: float = 1e-10) -> float:
    """Scale ``α`` with ``Σ α² λ_i / (1 + α² λ_i) = target``, found by bisection in ``log α``."""
    lam = np.maximum(np.asarray(eig.values if isinstance(eig, EigenDecomposition) else eig,
                                dtype=np.float64), 0.0)
    tol_lam = eig.tol if isinstance(eig, EigenDecomposition) else 0.0
    n_pos = int(np.sum(lam > tol_lam))
    if n_pos == 0:
        raise ValueError("no positive eigenvalues to rescale")
    if not 0.0 < target < n_pos:
        raise ValueError(
            f"target {target} unreachable: expected size must lie in (0, {n_pos})")

    def size(log_alpha):
        a2 = math.exp(2.0 * log_alpha)
        return float(np.sum(a2 * lam / (1.0 + a2 * lam)))

    lo, hi = -1.0, 1.0
    while size(lo) > target:
        lo *= 2.0
    while size(hi) < target:
        hi *= 2.0
    mid = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = size(mid)
        if abs(val - target) <= tol:
            break
        if val < target:
            lo = mid
        else:
            hi = mid
    return math.exp(mid)


# ---- binary state file -------------------------------------------------------

MAGIC = b"RDPP"
VERSION = 1
_HEADER = struct.Struct("<4sBQQQddd")


class StateFormatError(ValueError):
    pass


def write_state(path, state: PreprocessedState):
    n, d = state.n, state.d
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, d, state.q, state.s_tilde, state.eta, state.logdet))
        fh.write(np.ascontiguousarray(state.A, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state.l_tilde, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state.index_map, dtype="<u8").tobytes())


def read_state(path) -> PreprocessedState:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise StateFormatError(f"{path}: truncated header")
    magic, version, n, d, q, s_tilde, eta, logdet = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise StateFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise StateFormatError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 8 * (d * d + 2 * n)
    if len(blob) != expected:
        raise StateFormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    off = _HEADER.size
    A = np.frombuffer(blob, dtype="<f8", count=d * d, offset=off).reshape(d, d).astype(np.float64)
    off += 8 * d * d
    l_tilde = np.frombuffer(blob, dtype="<f8", count=n, offset=off).astype(np.float64)
    off += 8 * n
    index_map = np.frombuffer(blob, dtype="<u8", count=n, offset=off).astype(np.int64)
    state = make_state(A, l_tilde, eta, index_map, mode="exact" if eta == 0.0 else "sketched",
                       q=q, s_tilde=s_tilde)
    if not math.isclose(state.logdet, logdet, rel_tol=1e-9, abs_tol=1e-9):
        raise StateFormatError(f"{path}: stored log det(I+A) does not match A")
    return state
