"""Fast DPP sampler built on a regularized-DPP intermediate distribution.

One draw runs a rejection loop:

* ``K ~ Poisson(q)`` and ``σ_1..σ_K`` i.i.d. with probability ``∝ l_i``, where
  ``l_i = x_i^T (I+A)^{-1} x_i`` is reached by thinning draws from the
  precomputed ``l~`` table;
* accept with probability
  ``det(I + X~_σ^T X~_σ) / (C_K det(I+A))``, ``C_K = (q/(q-s~))^{K+d} e^{-s~}``,
  evaluated in log space;

and then downsamples the accepted ``K x d`` matrix with the exact sampler.
The result is an exact draw from ``DPP(ρ X)`` with ``ρ² = s~/ŝ``. Nothing in
the loop touches more than ``K`` rows of ``X``, so the per-draw cost does
not depend on ``n``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .exact import expected_size, sample_dpp_exact
from .linalg import TOL_PSD_REL, EigenDecomposition, RowMatrix, as_row_matrix, eigh, eigh_gram
from .preprocessing import PreprocessedState, ridge_scores_exact

DEFAULT_MAX_OUTER = 1000
ACCEPT_BOUND_TOL = 1e-9


class ProposalBoundError(RuntimeError):
    """The ridge-score estimates undershoot ``l_i / 2``, so thinning is invalid."""


class AcceptanceBoundError(RuntimeError):
    """An acceptance log-probability came out positive."""


class RejectionLoopAbort(RuntimeError):
    def __init__(self, msg, diagnostics):
        super().__init__(msg)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class RdppDraw:
    sigma: np.ndarray
    K: int
    outer_iters: int
    inner_rejections: int
    l_values: np.ndarray = field(repr=False)
    scaled_rows: np.ndarray | None = field(default=None, repr=False)
    gram_eig: EigenDecomposition | None = field(default=None, repr=False)


@dataclass(frozen=True)
class ScaledSubmatrix:
    rows: np.ndarray
    source_indices: np.ndarray


@dataclass(frozen=True)
class DppDraw:
    subset: list
    rdpp: RdppDraw
    rdpp_seconds: float
    downsample_seconds: float


@dataclass(frozen=True)
class SamplerDiagnostics:
    acceptance_rate: float
    mean_K: float
    mean_size: float
    draws: int
    rho: float | None = None
    s_hat: float | None = None
    predicted_expected_size: float | None = None
    wall_times: dict = field(default_factory=dict)


def sample_poisson(mean: float, rng) -> int:
    if not mean > 0:
        raise ValueError(f"Poisson mean must be positive, got {mean}")
    return int(rng.poisson(mean))


def _check_compatible(state: PreprocessedState, X: RowMatrix):
    if X.n != state.n or X.d != state.d:
        raise ValueError(
            f"matrix ({X.n} x {X.d} after dropping zero rows) does not match "
            f"state ({state.n} x {state.d})")


def _draw_exact_l(state: PreprocessedState, X: RowMatrix, K: int, rng):
    """``K`` i.i.d. indices with probability ``∝ l_i`` via thinning of ``l~``.

    Returns ``(indices, l values, rows, rejections)``. Candidates are drawn in
    blocks; consuming the block's trials in order keeps the sequence i.i.d.
    """
    if K == 0:
        return np.empty(0, np.int64), np.empty(0), np.empty((0, state.d)), 0
    parts = []
    got = 0
    rejections = 0
    while got < K:
        need = K - got
        m = 2 * need + 4
        cand = state.table.sample(rng, m)
        rows = X.rows(cand)
        l = state.chol.quad_forms(rows)
        ratio = l / (2.0 * state.l_tilde[cand])
        if ratio.max() > 1.0 + 1e-9:
            bad = int(cand[ratio.argmax()])
            raise ProposalBoundError(
                f"l_i/(2 l~_i) = {ratio.max():.4g} > 1 at row {bad}: "
                "the ridge-score estimates violate l~_i >= l_i/2")
        pos = (rng.random(m) < ratio).nonzero()[0]
        if pos.size >= need:
            rejections += int(pos[need - 1]) + 1 - need
            pos = pos[:need]
        else:
            rejections += m - pos.size
        parts.append((cand[pos], l[pos], rows[pos]))
        got += pos.size
    if len(parts) == 1:
        return parts[0] + (rejections,)
    idx, l, rows = (np.concatenate(z) for z in zip(*parts))
    return idx, l, rows, rejections


def sample_index_exact_l(state: PreprocessedState, X, rng):
    """One index with probability exactly ``l_i / ŝ``; returns ``(index, rejections)``."""
    X = as_row_matrix(X)
    idx, _, _, rej = _draw_exact_l(state, X, 1, rng)
    return int(idx[0]), rej


def scale_rows(state: PreprocessedState, rows, l_values, sigma) -> ScaledSubmatrix:
    r = state.q - state.s_tilde
    scale = np.sqrt(state.s_tilde / (np.asarray(l_values) * r))
    if scale.size and not (0.0 < scale.min() and scale.max() < math.inf):
        raise ValueError("row scale factors must be positive and finite")
    return ScaledSubmatrix(np.asarray(rows) * scale[:, None], np.asarray(sigma))


def _log_accept(state: PreprocessedState, K: int, logdet: float) -> float:
    q, s = state.q, state.s_tilde
    val = logdet - state.logdet - (K + state.d) * math.log(q / (q - s)) + s
    if val > ACCEPT_BOUND_TOL:
        raise AcceptanceBoundError(
            f"acceptance log-probability {val:.3e} exceeds 0 (K={K}, q={q}, s~={s:.6g})")
    return val


def acceptance_log_prob(state: PreprocessedState, sub: ScaledSubmatrix) -> float:
    """``log det(I + X~^T X~) - log det(I+A) - (K+d) log(q/(q-s~)) + s~``; never positive."""
    K = sub.rows.shape[0]
    d = state.d
    if K:
        G = sub.rows.T @ sub.rows
        G.flat[:: d + 1] += 1.0
        L = np.linalg.cholesky(G)
        logdet = 2.0 * float(np.log(L.diagonal()).sum())
    else:
        logdet = 0.0
    return _log_accept(state, K, logdet)


def sample_rdpp(state: PreprocessedState, X, rng, max_outer=DEFAULT_MAX_OUTER) -> RdppDraw:
    """Run the rejection loop until acceptance and return the accepted sequence.

    The Gram matrix of the scaled rows is eigendecomposed once; its spectrum
    gives the acceptance determinant and is handed on to the downsampling
    step with the accepted draw.
    """
    X = as_row_matrix(X)
    _check_compatible(state, X)
    if state.s_tilde <= 0:
        raise ValueError("state has s~ = 0; A must be non-zero")
    c = state.s_tilde / (state.q - state.s_tilde)
    rejections = 0
    Ks = []
    for outer in range(1, max_outer + 1):
        K = sample_poisson(state.q, rng)
        Ks.append(K)
        sigma, l, rows, rej = _draw_exact_l(state, X, K, rng)
        rejections += rej
        eig = None
        if K:
            rows = rows * np.sqrt(c / l)[:, None]
            eig = eigh_gram(rows.T @ rows)
            logdet = float(np.log1p(eig.values).sum())
        else:
            logdet = 0.0
        logp = _log_accept(state, K, logdet)
        u = 1.0 - rng.random()
        if math.log(u) < logp:
            return RdppDraw(sigma, K, outer, rejections, l, rows, eig)
    raise RejectionLoopAbort(
        f"no acceptance after {max_outer} iterations; the state likely violates "
        "its accuracy preconditions",
        {"outer_iters": max_outer, "mean_K": float(np.mean(Ks)), "inner_rejections": rejections,
         "q": state.q, "s_tilde": state.s_tilde})


def _scaled_rows(state, X, draw: RdppDraw):
    rows = draw.scaled_rows
    if rows is None:
        rows = scale_rows(state, X.rows(draw.sigma), draw.l_values, draw.sigma).rows
    return rows


def sample_dpp_draw(state: PreprocessedState, X, rng, max_outer=DEFAULT_MAX_OUTER) -> DppDraw:
    X = as_row_matrix(X)
    t0 = time.perf_counter()
    draw = sample_rdpp(state, X, rng, max_outer=max_outer)
    t1 = time.perf_counter()
    subset = downsample(state, X, draw, rng)
    t2 = time.perf_counter()
    return DppDraw(subset, draw, t1 - t0, t2 - t1)


def sample_dpp(state: PreprocessedState, X, rng, max_outer=DEFAULT_MAX_OUTER) -> list:
    """One draw from ``DPP(ρ X)`` as a sorted list of original row indices.

    Positions of the accepted sequence index the downsampling DPP, so a row
    repeated in the sequence could in principle appear twice; it has zero
    probability in exact arithmetic.
    """
    return sample_dpp_draw(state, X, rng, max_outer=max_outer).subset


MAX_BATCH_TRIALS = 4096


def _thin_stream(state: PreprocessedState, X: RowMatrix, total: int, rng):
    """``total`` i.i.d. indices ``∝ l_i`` plus, per index, the rejections before it."""
    idx, ls, rows, kept = [], [], [], []
    got = offset = 0
    while got < total:
        m = 2 * (total - got) + 8
        cand = state.table.sample(rng, m)
        r = X.rows(cand)
        l = state.chol.quad_forms(r)
        ratio = l / (2.0 * state.l_tilde[cand])
        if ratio.max() > 1.0 + 1e-9:
            raise ProposalBoundError(
                f"l_i/(2 l~_i) = {ratio.max():.4g} > 1 at row {int(cand[ratio.argmax()])}: "
                "the ridge-score estimates violate l~_i >= l_i/2")
        pos = (rng.random(m) < ratio).nonzero()[0][:total - got]
        idx.append(cand[pos])
        ls.append(l[pos])
        rows.append(r[pos])
        kept.append(pos + offset)
        got += pos.size
        offset += m
    kept = np.concatenate(kept)
    rej = np.diff(kept, prepend=-1) - 1
    return np.concatenate(idx), np.concatenate(ls), np.concatenate(rows), rej


def _abort(max_outer, K, inner, state):
    return RejectionLoopAbort(
        f"no acceptance after {max_outer} iterations; the state likely violates "
        "its accuracy preconditions",
        {"outer_iters": max_outer, "mean_K": float(np.mean(K)), "inner_rejections": int(inner),
         "q": state.q, "s_tilde": state.s_tilde})


def sample_rdpp_batch(state: PreprocessedState, X, num: int, rng,
                      max_outer=DEFAULT_MAX_OUTER) -> list:
    """``num`` accepted draws, processing outer iterations in vectorized blocks.

    Outer iterations are i.i.d. trials, so proposing a block of them at once,
    evaluating every acceptance test, and keeping the accepted trials in order
    gives the same law as running :func:`sample_rdpp` ``num`` times.
    """
    X = as_row_matrix(X)
    _check_compatible(state, X)
    if num < 1:
        raise ValueError("num must be at least 1")
    d, q, s = state.d, state.q, state.s_tilde
    c = s / (q - s)
    log_ratio = math.log(q / (q - s))
    out = []
    since = rej_since = 0
    rate = 0.5
    while len(out) < num:
        B = int(min(MAX_BATCH_TRIALS, 1.25 * (num - len(out)) / rate + 8))
        K = rng.poisson(q, size=B)
        total = int(K.sum())
        nz = K > 0
        ends = np.cumsum(K)
        starts = ends - K
        G = np.zeros((B, d, d))
        rej_trial = np.zeros(B, dtype=np.int64)
        if total:
            sigma, l, rows, rej = _thin_stream(state, X, total, rng)
            rows = rows * np.sqrt(c / l)[:, None]
            G[nz] = np.add.reduceat(np.einsum("ti,tj->tij", rows, rows), starts[nz], axis=0)
            rej_trial[nz] = np.add.reduceat(rej, starts[nz])
        w, V = np.linalg.eigh(G)
        w = np.maximum(w, 0.0)
        logp = np.log1p(w).sum(axis=1) - state.logdet - (K + d) * log_ratio + s
        if logp.max() > ACCEPT_BOUND_TOL:
            b = int(logp.argmax())
            raise AcceptanceBoundError(
                f"acceptance log-probability {logp[b]:.3e} exceeds 0 (K={K[b]}, q={q}, s~={s:.6g})")
        acc = np.log(1.0 - rng.random(B)) < logp
        rate = max(float(acc.mean()), 0.05)
        prev = -1
        for b in np.flatnonzero(acc):
            outer = since + b - prev
            inner = rej_since + int(rej_trial[prev + 1:b + 1].sum())
            if outer > max_outer:
                raise _abort(max_outer, K, inner, state)
            if K[b]:
                sl = slice(starts[b], ends[b])
                eig = EigenDecomposition(w[b, ::-1], V[b][:, ::-1],
                                         TOL_PSD_REL * float(G[b].diagonal().max()))
                out.append(RdppDraw(sigma[sl], int(K[b]), int(outer), inner, l[sl], rows[sl], eig))
            else:
                out.append(RdppDraw(np.empty(0, np.int64), 0, int(outer), inner, np.empty(0),
                                    np.empty((0, d)), None))
            since = rej_since = 0
            prev = b
            if len(out) == num:
                break
        else:
            since += B - 1 - prev
            rej_since += int(rej_trial[prev + 1:].sum())
            if since >= max_outer:
                raise _abort(max_outer, K, rej_since, state)
    return out


def downsample(state: PreprocessedState, X, draw: RdppDraw, rng) -> list:
    """Exact DPP on the accepted scaled rows, mapped to original row numbers."""
    if draw.K == 0:
        return []
    Xt = _scaled_rows(state, X, draw)
    eig = draw.gram_eig if draw.gram_eig is not None else eigh_gram(Xt.T @ Xt)
    pos = sample_dpp_exact(Xt, eig, rng)
    return sorted(int(i) for i in state.index_map[draw.sigma[pos]])


def sample_dpp_batch(state: PreprocessedState, X, num: int, rng,
                     max_outer=DEFAULT_MAX_OUTER) -> list:
    """``num`` i.i.d. draws from ``DPP(ρ X)`` as :class:`DppDraw` records.

    Timings are per-batch averages, split evenly across the draws.
    """
    X = as_row_matrix(X)
    t0 = time.perf_counter()
    rd = sample_rdpp_batch(state, X, num, rng, max_outer=max_outer)
    t1 = time.perf_counter()
    subsets = [downsample(state, X, dr, rng) for dr in rd]
    t2 = time.perf_counter()
    a, b = (t1 - t0) / num, (t2 - t1) / num
    return [DppDraw(S, dr, a, b) for S, dr in zip(subsets, rd)]


def predicted_expected_size(gram_eig: EigenDecomposition, rho: float) -> float:
    lam = np.maximum(gram_eig.values, 0.0) * rho * rho
    return float(np.sum(lam / (1.0 + lam)))


def diagnostics(state: PreprocessedState, X, draws, exact=True) -> SamplerDiagnostics:
    """Summaries over completed draws; with ``exact=True`` also ``ρ`` and ``E|S|``.

    ``exact=True`` costs ``O(n d^2)`` since it recomputes ``ŝ = Σ l_i``.
    """
    draws = list(draws)
    if not draws:
        raise ValueError("need at least one completed draw")
    rd = [dr.rdpp if isinstance(dr, DppDraw) else dr for dr in draws]
    outer = sum(r.outer_iters for r in rd)
    sizes = [len(dr.subset) for dr in draws if isinstance(dr, DppDraw)]
    walls = {}
    if isinstance(draws[0], DppDraw):
        walls = {"rdpp_seconds": float(np.mean([dr.rdpp_seconds for dr in draws])),
                 "downsample_seconds": float(np.mean([dr.downsample_seconds for dr in draws]))}
    rho = s_hat = pred = None
    if exact:
        X = as_row_matrix(X)
        _, s_hat = ridge_scores_exact(X, state.A)
        rho = math.sqrt(state.s_tilde / s_hat)
        pred = predicted_expected_size(eigh(X.gram(), psd=True), rho)
    return SamplerDiagnostics(
        acceptance_rate=len(rd) / outer,
        mean_K=float(np.mean([r.K for r in rd])),
        mean_size=float(np.mean(sizes)) if sizes else float("nan"),
        draws=len(rd), rho=rho, s_hat=s_hat, predicted_expected_size=pred,
        wall_times=walls)


def dpp_expected_size(X) -> float:
    X = as_row_matrix(X)
    return expected_size(eigh(X.gram(), psd=True))
