"""Acceptance suite: one test per numbered criterion, each printing a PASS/FAIL line."""
import math
import time

import numpy as np
import pytest

from rdpp import oracle
from rdpp.cli import bench_preprocess, bench_sampling
from rdpp.linalg import EigenDecomposition, RowMatrix, eigh
from rdpp.preprocessing import (build_state, calibrate_scale, effective_dimension, make_state,
                                ridge_scores_exact)
from rdpp.rng import make_rng
from rdpp.sampler import (acceptance_log_prob, diagnostics, sample_dpp_batch, sample_rdpp,
                          scale_rows)

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(num, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return emit


def gaussian(seed, n=8, d=3):
    return make_rng(seed, 1000).standard_normal((n, d))


def draw_pmf(state, X, N, rng):
    draws = sample_dpp_batch(state, X, N, rng)
    return oracle.empirical_pmf(tuple(dr.subset) for dr in draws), draws


def test_c01_exact_mode_distribution(report):
    N = 200_000
    worst_tv, worst_t = 0.0, 0.0
    for seed in range(5):
        X = RowMatrix(gaussian(seed))
        t0 = time.perf_counter()
        state = build_state(X, mode="exact")
        emp, _ = draw_pmf(state, X, N, make_rng(seed, 1))
        elapsed = time.perf_counter() - t0
        tv = oracle.tv_distance(emp, oracle.dpp_pmf_bruteforce(X))
        worst_tv, worst_t = max(worst_tv, tv), max(worst_t, elapsed)
    ok = worst_tv <= 0.015 and worst_t <= 60.0
    assert report(1, ok, f"max TV {worst_tv:.4f} (<= 0.015), max time {worst_t:.1f}s (<= 60s)")


def _sandwiched(G, gamma, E):
    w, V = np.linalg.eigh(G)
    R = (V * np.sqrt(np.maximum(w, 0))) @ V.T
    B = R @ (np.eye(G.shape[0]) + gamma * E) @ R
    return 0.5 * (B + B.T)


def test_c02_acceptance_rate(report):
    iters = 10_000
    rates = []
    for seed in range(3):
        Xd = gaussian(seed)
        G = Xd.T @ Xd
        s_bar = effective_dimension(G)
        gamma = 1.0 / (4.0 * s_bar)
        d = G.shape[0]
        E = make_rng(seed, 2).standard_normal((d, d))
        E = E + E.T
        E /= np.abs(np.linalg.eigvalsh(E)).max()
        for Ek in (np.eye(d), -np.eye(d), E):
            A = _sandwiched(G, gamma, Ek)
            l, _ = ridge_scores_exact(Xd, A)
            state = make_state(A, l, gamma, np.arange(Xd.shape[0]))
            rng = make_rng(seed, 3)
            X = RowMatrix(Xd)
            accepted = outer = 0
            while outer < iters:
                outer += sample_rdpp(state, X, rng).outer_iters
                accepted += 1
            rates.append(accepted / outer)
        sk = build_state(Xd, 0.1, "sketched", make_rng(seed, 4))
        rng = make_rng(seed, 5)
        accepted = outer = 0
        while outer < iters:
            outer += sample_rdpp(sk, Xd, rng).outer_iters
            accepted += 1
        rates.append(accepted / outer)
    ok = min(rates) >= 0.16
    assert report(2, ok, f"min acceptance {min(rates):.3f} over {len(rates)} states (>= 0.16)")


def test_c03_acceptance_bound_fuzz(report):
    rng = make_rng(3)
    trials, worst = 0, -math.inf
    while trials < 100_000:
        n, d = int(rng.integers(1, 21)), int(rng.integers(1, 7))
        X = rng.standard_normal((n, d)) * math.exp(rng.uniform(-4, 4))
        X *= rng.uniform(0.01, 1.0, size=(n, 1))
        rank = int(rng.integers(1, d + 1))
        B = rng.standard_normal((rank, d)) * math.exp(rng.uniform(-4, 4))
        A = B.T @ B if rng.random() < 0.7 else X.T @ X
        try:
            l, _ = ridge_scores_exact(X, A)
            state = make_state(A, l, 0.0, np.arange(n))
        except (ValueError, ArithmeticError):
            continue
        for _ in range(10):
            K = int(rng.integers(0, 3 * state.q + 2))
            if rng.random() < 0.2:
                sigma = np.full(K, int(rng.integers(0, n)))
            else:
                sigma = rng.integers(0, n, size=K)
            sub = scale_rows(state, X[sigma], l[sigma], sigma)
            worst = max(worst, acceptance_log_prob(state, sub))
            trials += 1
    ok = worst <= 1e-9
    assert report(3, ok, f"max acceptance log-prob {worst:.3e} over {trials} trials (<= 1e-9)")


CB_SEEDS = (0, 1, 3)


def test_c04_poisson_cauchy_binet(report):
    worst, worst_t = 0.0, 0.0
    for seed in CB_SEEDS:
        X = make_rng(seed, 40).standard_normal((5, 3))
        for p in (np.full(5, 0.2), (X * X).sum(1) / (X * X).sum()):
            t0 = time.perf_counter()
            _, _, rel = oracle.mc_cauchy_binet(X, np.eye(3), p, 2.0, 1_000_000, make_rng(seed, 41))
            worst_t = max(worst_t, time.perf_counter() - t0)
            worst = max(worst, rel)
    ok = worst <= 0.01 and worst_t <= 30.0
    assert report(4, ok, f"max rel err {worst:.4f} (<= 0.01), max time {worst_t:.2f}s (<= 30s)")


def test_c05_limit_behaviour(report):
    r, n = 1e-3, 4
    gaps = []
    for seed in range(3):
        X = make_rng(seed, 50).standard_normal((n, 2))
        p = np.full(n, 1 / n)
        dpp = oracle.as_multisets(oracle.rdpp_pmf_truncated(X, (r / n) * np.eye(2), p, r, 4))
        vs = oracle.as_multisets(oracle.rdpp_pmf_truncated(X, np.zeros((2, 2)), p, r, 4))
        gaps.append(oracle.max_abs_gap(dpp, oracle.dpp_pmf_bruteforce(X)))
        gaps.append(oracle.max_abs_gap(vs, oracle.vs_pmf_bruteforce(X)))
    ok = max(gaps) <= 0.01
    assert report(5, ok, f"max abs gap {max(gaps):.2e} (<= 0.01)")


def test_c06_composition(report):
    fixtures = [(np.full(3, 1 / 3), 3.0, 3.0), (np.array([0.2, 0.3, 0.5]), 2.0, 1.0)]
    tvs = []
    for k, (p, alpha, r) in enumerate(fixtures):
        X = make_rng(k, 60).standard_normal((3, 2))
        tvs.append(oracle.composition_check(X, p, alpha, r, 200_000, make_rng(k, 61)))
    ok = max(tvs) <= 0.02
    assert report(6, ok, f"max TV {max(tvs):.4f} (<= 0.02)")


def test_c07_rescaling_accuracy(report):
    eps, N = 0.1, 50_000
    rho_ok, size_ok, worst = True, True, []
    for seed in range(3):
        X = RowMatrix(gaussian(seed, n=40))
        state = build_state(X, eps, "sketched", make_rng(seed, 70))
        _, draws = draw_pmf(state, X, N, make_rng(seed, 71))
        diag = diagnostics(state, X, draws)
        sizes = np.array([len(d.subset) for d in draws])
        se = sizes.std() / math.sqrt(N)
        target = float(np.sum((lam := eigh(X.gram(), psd=True).values) / (1 + lam)))
        rho_ok &= abs(diag.rho - 1) <= state.eta
        gap = abs(sizes.mean() - target)
        size_ok &= gap <= eps / 4 + 3 * se
        worst.append((abs(diag.rho - 1) / state.eta, gap))
    ok = rho_ok and size_ok
    detail = ", ".join(f"|rho-1|/eta={a:.2e} size gap={b:.4f}" for a, b in worst)
    assert report(7, ok, f"{detail} (size gap <= {eps / 4} + 3 SE)")


def test_c08_sketched_end_to_end(report):
    eps, N = 0.1, 200_000
    tvs = []
    for seed in range(2):
        X = RowMatrix(gaussian(seed))
        state = build_state(X, eps, "sketched", make_rng(seed, 80))
        emp, _ = draw_pmf(state, X, N, make_rng(seed, 81))
        tvs.append(oracle.tv_distance(emp, oracle.dpp_pmf_bruteforce(X)))
    ok = max(tvs) <= eps + 0.02
    assert report(8, ok, f"max TV {max(tvs):.4f} (<= {eps + 0.02:.2f})")


def test_c09_n_independent_sampling(report):
    t = bench_sampling(10, [10_000, 100_000], 200, seed=9)
    ratio = t[100_000] / t[10_000]
    ok = ratio <= 2.0
    assert report(9, ok, f"median per-draw {t[10_000] * 1e6:.0f}us vs {t[100_000] * 1e6:.0f}us, "
                         f"ratio {ratio:.2f} (<= 2)")


def test_c10_nnz_scaling(report):
    res = bench_preprocess(100_000, 20, [0.1, 0.2], 5, seed=10)
    (nnz1, t1), (nnz2, t2) = res[0.1], res[0.2]
    ratio = t2 / t1
    ok = ratio <= 3.0 and nnz2 == 2 * nnz1
    assert report(10, ok, f"nnz {nnz1}->{nnz2}, median {t1 * 1e3:.0f}ms->{t2 * 1e3:.0f}ms, "
                          f"ratio {ratio:.2f} (<= 3)")


def test_c11_inequality_grids(report):
    grid = oracle.check_ineq_grid()
    det = oracle.check_det_bound(10_000, make_rng(11))
    ok = grid["violations"] == 0 and det["violations"] == 0
    assert report(11, ok, f"grid {grid['violations']}/{grid['checked']} violations, "
                          f"det bound {det['violations']}/{det['checked']} violations")


def test_c12_calibration(report):
    eig = EigenDecomposition(np.array([1.0, 1.0]), np.eye(2), 0.0)
    rows = []
    for target, alpha_ref in ((1.0, 1.0), (1.5, math.sqrt(3))):
        a = calibrate_scale(eig, target)
        size = 2 * a * a / (1 + a * a)
        rows.append((abs(size - target), abs(a - alpha_ref)))
    ok = all(s <= 1e-6 and a <= 1e-6 for s, a in rows)
    assert report(12, ok, "size errors " + ", ".join(f"{s:.1e}" for s, _ in rows)
                  + "; alpha errors " + ", ".join(f"{a:.1e}" for _, a in rows))
