"""Brute-force reference distributions and identity checks at desk scale.

These are deliberately written without reusing the fast sampler's code
paths: subset and sequence probabilities come from direct enumeration, and
the regularized DPP is sampled here by an independent rejection scheme.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import gammaln

from .exact import sample_dpp_exact
from .linalg import RowMatrix

MAX_SUBSET_N = 20
MAX_SEQUENCES = 2_000_000


class OracleSizeError(ValueError):
    pass


def _dense(X):
    if isinstance(X, RowMatrix):
        return X.to_dense()
    return np.atleast_2d(np.asarray(X, dtype=np.float64))


def _logdet_batch(M):
    sign, logdet = np.linalg.slogdet(M)
    return np.where(sign > 0, logdet, -np.inf)


def dpp_pmf_bruteforce(X) -> dict:
    """``Pr(S) = det(X_S X_S^T) / det(I + X^T X)`` for every subset of rows."""
    X = _dense(X)
    n, d = X.shape
    if n > MAX_SUBSET_N:
        raise OracleSizeError(f"n={n} too large for subset enumeration (max {MAX_SUBSET_N})")
    _, log_z = np.linalg.slogdet(np.eye(d) + X.T @ X)
    K = X @ X.T
    pmf = {(): math.exp(-log_z)}
    for k in range(1, min(n, d) + 1):
        subsets = list(itertools.combinations(range(n), k))
        idx = np.array(subsets)
        sub = K[idx[:, :, None], idx[:, None, :]]
        logs = _logdet_batch(sub) - log_z
        for S, lv in zip(subsets, logs):
            pmf[S] = math.exp(lv) if np.isfinite(lv) else 0.0
    for k in range(min(n, d) + 1, n + 1):
        for S in itertools.combinations(range(n), k):
            pmf[S] = 0.0
    return pmf


def vs_pmf_bruteforce(X) -> dict:
    """Volume sampling: ``Pr(S) = det(X_S)^2 / det(X^T X)`` over ``|S| = d``."""
    X = _dense(X)
    n, d = X.shape
    if n > MAX_SUBSET_N:
        raise OracleSizeError(f"n={n} too large for subset enumeration (max {MAX_SUBSET_N})")
    sign, log_z = np.linalg.slogdet(X.T @ X)
    if sign <= 0 or np.linalg.matrix_rank(X) < d:
        raise ValueError("volume sampling needs rank(X) = d")
    subsets = list(itertools.combinations(range(n), d))
    idx = np.array(subsets)
    dets = np.linalg.det(X[idx])
    return {S: float(v * v) / math.exp(log_z) for S, v in zip(subsets, dets)}


@dataclass(frozen=True)
class SequencePmf:
    entries: dict
    truncated_mass: float

    def total(self):
        return sum(self.entries.values()) + self.truncated_mass


def rdpp_log_normalizer(X, A, p, r) -> float:
    X = _dense(X)
    M = np.asarray(A, dtype=np.float64) + r * (X.T * np.asarray(p)) @ X
    sign, logdet = np.linalg.slogdet(M)
    if sign <= 0:
        raise ValueError("A + r E[x x^T] is singular; the R-DPP is undefined")
    return float(logdet)


def rdpp_pmf_truncated(X, A, p, r, k_max) -> SequencePmf:
    """Regularized DPP probabilities of all index sequences of length ``<= k_max``.

    ``Pr(σ) = det(A + X_σ^T X_σ) / det(A + r Σ p_i x_i x_i^T) · r^k e^{-r}/k! · Π p_σi``.
    """
    X = _dense(X)
    n, d = X.shape
    A = np.asarray(A, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    total = sum(n ** k for k in range(k_max + 1))
    if total > MAX_SEQUENCES:
        raise OracleSizeError(f"{total} sequences exceed the enumeration budget")
    log_z = rdpp_log_normalizer(X, A, p, r)
    log_r = math.log(r)
    log_p = np.log(p)
    outer = np.einsum("ni,nj->nij", X, X)
    entries = {}
    for k in range(k_max + 1):
        seqs = np.array(list(itertools.product(range(n), repeat=k)), dtype=np.int64)
        seqs = seqs.reshape(n ** k, k)
        G = np.broadcast_to(A, (seqs.shape[0], d, d)).copy()
        for j in range(k):
            G += outer[seqs[:, j]]
        logw = _logdet_batch(G) - log_z + k * log_r - r - gammaln(k + 1) + log_p[seqs].sum(axis=1)
        probs = np.exp(logw)
        for s, pr in zip(map(tuple, seqs), probs):
            entries[s] = float(pr)
    trunc = 1.0 - sum(entries.values())
    return SequencePmf(entries, max(trunc, 0.0) if trunc > -1e-12 else trunc)


def as_multisets(pmf) -> dict:
    """Sum sequence probabilities over orderings (sorted-tuple keys)."""
    entries = pmf.entries if isinstance(pmf, SequencePmf) else pmf
    out = {}
    for seq, pr in entries.items():
        key = tuple(sorted(seq))
        out[key] = out.get(key, 0.0) + pr
    return out


def tv_distance(a: dict, b: dict) -> float:
    keys = set(a) | set(b)
    return 0.5 * sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in keys)


def max_abs_gap(a: dict, b: dict) -> float:
    keys = set(a) | set(b)
    return max(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in keys)


def empirical_pmf(samples) -> dict:
    counts = {}
    for s in samples:
        key = tuple(s)
        counts[key] = counts.get(key, 0) + 1
    N = sum(counts.values())
    return {k: c / N for k, c in counts.items()}


def mc_cauchy_binet(X, A, p, r, N, rng, batch=100_000):
    """Monte Carlo ``E det(A + X_σ^T X_σ)`` for ``K ~ Poisson(r)``, ``σ`` i.i.d. ``p``.

    Returns ``(estimate, target, rel_err)`` with ``target = det(A + r Σ p_i x_i x_i^T)``.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    X = _dense(X)
    n, d = X.shape
    A = np.asarray(A, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    target = float(np.linalg.det(A + r * (X.T * p) @ X))
    outer = np.einsum("ni,nj->nij", X, X).reshape(n, d * d)
    acc = 0.0
    done = 0
    while done < N:
        b = min(batch, N - done)
        K = rng.poisson(r, size=b) if r > 0 else np.zeros(b, dtype=np.int64)
        counts = rng.multinomial(K, p)
        G = A + (counts @ outer).reshape(b, d, d)
        acc += float(np.linalg.det(G).sum())
        done += b
    est = acc / N
    rel = abs(est - target) / abs(target) if target != 0 else abs(est)
    return est, target, rel


def _rdpp_rejection_bound(sq_norm_max, d, r, r_prop):
    """``max_K (1 + K m / d)^d (r / r_prop)^K`` in log space."""
    ratio = math.log(r / r_prop)
    best = 0.0
    K = 0
    while True:
        val = d * math.log1p(K * sq_norm_max / d) + K * ratio
        best = max(best, val)
        # past the continuous maximiser the sequence only decreases
        if K > 0 and d * sq_norm_max / (d + K * sq_norm_max) < -ratio and val < best:
            return best
        K += 1


def sample_rdpp_reference(Xt, p, r, size, rng, batch=4096):
    """Draw ``size`` sequences from ``R-DPP_p^r(Xt, I)``, as row-count vectors.

    Proposal: ``K ~ Poisson(r')`` and ``σ`` i.i.d. ``p`` with ``r' > r``. The
    importance ratio ``det(I + Xt_σ^T Xt_σ) (r/r')^K`` is bounded through
    ``det(I + G) <= (1 + tr(G)/d)^d`` since the Poisson change of mean makes
    it summable in ``K``.
    """
    Xt = _dense(Xt)
    n, d = Xt.shape
    p = np.asarray(p, dtype=np.float64)
    m = float(np.max(np.einsum("ij,ij->i", Xt, Xt)))
    best = None
    for c in (1.25, 1.5, 2.0, 3.0, 4.0, 6.0):
        log_m = _rdpp_rejection_bound(m, d, r, c * r)
        # expected acceptance ∝ e^{r - r'} / M
        score = (1.0 - c) * r - log_m
        if best is None or score > best[0]:
            best = (score, c * r, log_m)
    _, r_prop, log_m = best
    outer = np.einsum("ni,nj->nij", Xt, Xt).reshape(n, d * d)
    eye = np.eye(d)
    out = []
    while len(out) < size:
        K = rng.poisson(r_prop, size=batch)
        counts = rng.multinomial(K, p)
        G = eye + (counts @ outer).reshape(batch, d, d)
        logw = np.linalg.slogdet(G)[1] + K * math.log(r / r_prop) - log_m
        if np.any(logw > 1e-9):
            raise ArithmeticError("rejection bound violated")
        acc = np.log(1.0 - rng.random(batch)) < logw
        out.extend(counts[acc])
    return out[:size]


def composition_check(X, p, alpha, r, N, rng):
    """TV between composed samples and ``DPP(sqrt(r/α) X)``.

    Rows are rescaled by ``1/sqrt(α p_i)``, sequences drawn from the
    regularized DPP by :func:`sample_rdpp_reference`, then downsampled with
    an exact DPP on the selected rows.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    X = _dense(X)
    p = np.asarray(p, dtype=np.float64)
    Xt = X / np.sqrt(alpha * p)[:, None]
    counts = sample_rdpp_reference(Xt, p, r, N, rng)
    samples = []
    for c in counts:
        sigma = np.repeat(np.arange(X.shape[0]), c)
        if sigma.size == 0:
            samples.append(())
            continue
        pos = sample_dpp_exact(Xt[sigma], None, rng)
        samples.append(tuple(sorted(int(i) for i in sigma[pos])))
    target = dpp_pmf_bruteforce(math.sqrt(r / alpha) * X)
    return tv_distance(empirical_pmf(samples), target)


def check_ineq_grid(d_max=20, q_max=40, k_max=60) -> dict:
    """``((1-ε) + εk/q)^d <= (q/(q-εd))^k e^{-εd}`` on a grid, in log space."""
    violations = 0
    checked = 0
    worst = -math.inf
    for d in range(1, d_max + 1):
        for i in range(11):
            eps = Fraction(i, 10)
            ed = eps * d
            for q in range(math.ceil(ed), q_max + 1):
                for k in range(k_max + 1):
                    if eps == 0:
                        lhs = 0.0
                    else:
                        base = (1 - eps) + eps * Fraction(k, q)
                        lhs = -math.inf if base == 0 else d * math.log(base)
                    if k == 0:
                        rhs = -float(ed)
                    elif q - ed == 0:
                        rhs = math.inf
                    else:
                        rhs = k * math.log(Fraction(q) / (q - ed)) - float(ed)
                    gap = lhs - rhs
                    checked += 1
                    if gap > 1e-12:
                        violations += 1
                    if math.isfinite(gap):
                        worst = max(worst, gap)
    return {"name": "ineq_grid", "checked": checked, "violations": violations,
            "max_lhs_minus_rhs": worst, "passed": violations == 0}


def _random_psd(d, rng):
    rank = int(rng.integers(1, d + 1))
    B = rng.standard_normal((rank, d)) * math.exp(rng.uniform(-3, 3))
    return B.T @ B


def _sqrt_psd(C):
    w, V = np.linalg.eigh(C)
    return (V * np.sqrt(np.maximum(w, 0.0))) @ V.T


def check_det_bound(trials, rng, gammas=(0.05, 0.2, 0.5)) -> dict:
    """Fuzz ``e^{-γs/(1-γ)} det(I+C) <= det(I+B) <= e^{γs} det(I+C)``.

    ``B = C^{1/2} (I + γE) C^{1/2}`` with ``E`` symmetric of spectral norm at
    most one, so ``(1-γ)C ⪯ B ⪯ (1+γ)C`` by construction.
    """
    violations = 0
    worst = -math.inf
    for t in range(trials):
        d = int(rng.integers(1, 9))
        gamma = gammas[t % len(gammas)]
        C = _random_psd(d, rng)
        E = rng.standard_normal((d, d))
        E = E + E.T
        E /= max(np.abs(np.linalg.eigvalsh(E)).max(), 1e-300)
        if t % 7 == 0:
            E = np.eye(d) * (1.0 if t % 2 else -1.0)
        Ch = _sqrt_psd(C)
        B = Ch @ (np.eye(d) + gamma * E) @ Ch
        B = 0.5 * (B + B.T)
        ld_b = np.linalg.slogdet(np.eye(d) + B)[1]
        ld_c = np.linalg.slogdet(np.eye(d) + C)[1]
        lam = np.maximum(np.linalg.eigvalsh(C), 0.0)
        s = float(np.sum(lam / (1.0 + lam)))
        upper = gamma * s - (ld_b - ld_c)
        lower = (ld_b - ld_c) + gamma * s / (1.0 - gamma)
        slack = min(upper, lower)
        worst = max(worst, -slack)
        if slack < -1e-9:
            violations += 1
    return {"name": "det_bound", "checked": trials, "violations": violations,
            "max_violation": worst, "passed": violations == 0}
