"""The oracle suite behind ``rdpp validate``.

Every check returns a record ``{name, value, threshold, passed}`` (plus any
extra fields); the suite passes when all records do. Monte Carlo thresholds
are pinned at ``N = 200_000`` draws and scale as ``sqrt(200_000 / N)`` for
other sample counts.
"""
from __future__ import annotations

import math

import numpy as np

from . import oracle
from .linalg import RowMatrix, as_row_matrix, eigh
from .preprocessing import build_state, calibrate_scale, make_state, ridge_scores_exact
from .rng import make_rng
from .sampler import (ProposalBoundError, sample_dpp_batch, sample_index_exact_l,
                      sample_rdpp_batch)

REFERENCE_N = 200_000
MAX_VALIDATE_N = 12
RDPP_SUB_ROWS = 3
RDPP_SUB_SIZE = 0.3
RDPP_K_MAX = 7


def noise_scale(N):
    return math.sqrt(REFERENCE_N / N)


def _record(name, value, threshold, passed=None, **extra):
    ok = bool(value <= threshold) if passed is None else bool(passed)
    return {"name": name, "value": float(value), "threshold": float(threshold), "passed": ok, **extra}


def size_marginal(pmf: dict) -> dict:
    out = {}
    for S, p in pmf.items():
        out[len(S)] = out.get(len(S), 0.0) + p
    return out


def sequence_tv(samples, seq_pmf: oracle.SequencePmf, k_max) -> float:
    """TV on multisets of size ``<= k_max`` plus one bucket for longer sequences.

    The sequence law is exchangeable, so nothing is lost by forgetting order.
    """
    emp = {}
    for s in samples:
        key = tuple(sorted(s)) if len(s) <= k_max else "longer"
        emp[key] = emp.get(key, 0) + 1
    N = len(samples)
    emp = {k: v / N for k, v in emp.items()}
    ref = oracle.as_multisets(seq_pmf)
    ref["longer"] = seq_pmf.truncated_mass
    return oracle.tv_distance(emp, ref)


def rdpp_reference_instance(X: RowMatrix):
    """Leading rows of ``X`` rescaled to expected DPP size ``RDPP_SUB_SIZE``."""
    X3 = X.to_dense()[:RDPP_SUB_ROWS]
    lam = eigh(X3.T @ X3, psd=True)
    alpha = calibrate_scale(lam, RDPP_SUB_SIZE)
    return alpha * X3


def check_rdpp_sequences(X3, N, rng):
    """Accepted sequences of the rejection loop vs the truncated R-DPP pmf."""
    state = build_state(X3, mode="exact")
    l, s_hat = ridge_scores_exact(X3, state.A)
    r = state.q - state.s_tilde
    Xt = X3 * np.sqrt(state.s_tilde / (l * r))[:, None]
    ref = oracle.rdpp_pmf_truncated(Xt, np.eye(X3.shape[1]), l / s_hat, r, RDPP_K_MAX)
    Xr = as_row_matrix(X3)
    samples = [tuple(int(i) for i in dr.sigma) for dr in sample_rdpp_batch(state, Xr, N, rng)]
    return sequence_tv(samples, ref, RDPP_K_MAX)


def run_validation(X, epsilon=0.1, mode="exact", seed=0, num=REFERENCE_N,
                   cb_trials=1_000_000, det_trials=10_000):
    X = as_row_matrix(X)
    if X.n_original > MAX_VALIDATE_N:
        raise ValueError(
            f"validation enumerates all 2^n subsets; n={X.n_original} exceeds {MAX_VALIDATE_N}. "
            "Validate a row subset instead.")
    scale = noise_scale(num)
    checks = []

    state = build_state(X, epsilon, mode, make_rng(seed, 0))
    rng = make_rng(seed, 1)
    draws = sample_dpp_batch(state, X, num, rng)
    target = oracle.dpp_pmf_bruteforce(_original_rows(X))
    emp = oracle.empirical_pmf(tuple(d.subset) for d in draws)
    tv_thr = (epsilon if mode == "sketched" else 0.0) + (0.02 if mode == "sketched" else 0.015) * scale
    checks.append(_record("dpp_tv", oracle.tv_distance(emp, target), tv_thr, mode=mode))

    size_gap = oracle.max_abs_gap(size_marginal(emp), size_marginal(target))
    checks.append(_record("size_marginal", size_gap,
                          (epsilon if mode == "sketched" else 0.0) + 0.01 * scale))

    outer = sum(d.rdpp.outer_iters for d in draws)
    checks.append(_record("acceptance_rate", num / outer, 0.16, passed=num / outer >= 0.16))

    X3 = rdpp_reference_instance(X)
    checks.append(_record("rdpp_sequence_tv", check_rdpp_sequences(X3, num, make_rng(seed, 2)),
                          0.02 * scale))

    Xd = X.to_dense()
    n, d = Xd.shape
    est, tgt, rel = oracle.mc_cauchy_binet(Xd, np.eye(d), np.full(n, 1.0 / n), 2.0, cb_trials,
                                           make_rng(seed, 3))
    checks.append(_record("cauchy_binet_rel_err", rel, 0.01 * math.sqrt(1_000_000 / cb_trials),
                          estimate=est, target=tgt))

    grid = oracle.check_ineq_grid()
    checks.append(_record("ineq_grid", grid["violations"], 0, violations=grid["violations"]))
    det = oracle.check_det_bound(det_trials, make_rng(seed, 4))
    checks.append(_record("det_bound", det["violations"], 0, violations=det["violations"]))

    m = X3.shape[0]
    tv_comp = oracle.composition_check(X3, np.full(m, 1.0 / m), float(m), float(m), num,
                                       make_rng(seed, 5))
    checks.append(_record("composition_tv", tv_comp, 0.02 * scale))

    checks.append(_corrupt_state_check(X, state, make_rng(seed, 6)))
    return {"passed": all(c["passed"] for c in checks), "n": X.n_original, "d": X.d,
            "mode": mode, "epsilon": epsilon, "num": num, "checks": checks}


def _original_rows(X: RowMatrix):
    full = np.zeros((X.n_original, X.d))
    full[X.index_map] = X.to_dense()
    return full


def _corrupt_state_check(X, state, rng):
    l, _ = ridge_scores_exact(X, state.A)
    bad = make_state(state.A, l / 4.0, state.eta, state.index_map, mode=state.mode)
    try:
        for _ in range(100):
            sample_index_exact_l(bad, X, rng)
    except ProposalBoundError:
        return _record("corrupt_l_tilde_detected", 0, 0, passed=True)
    return _record("corrupt_l_tilde_detected", 1, 0, passed=False)
