"""Command-line front end: ``rdpp preprocess|sample|validate|bench|calibrate``.

All commands print JSON (``sample`` prints JSON lines, one per draw). Exit
codes: 0 on success, 1 when a computation fails or a validation check does
not pass, 2 for usage, input and file-format errors.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.sparse as sp

from .linalg import RowMatrix
from .mmio import MatrixFormatError, read_matrix
from .preprocessing import (SketchError, StateFormatError, build_state, calibrate_scale,
                            read_state, write_state)
from .rng import make_rng
from .sampler import sample_dpp_batch, sample_dpp_draw
from .validation import run_validation

CHUNK = 1000


class UsageError(Exception):
    pass


def _emit(obj, out=None):
    stream = out or sys.stdout
    stream.write(json.dumps(obj, sort_keys=True) + "\n")
    stream.flush()


def _load_matrix(path):
    try:
        return read_matrix(path)
    except FileNotFoundError as exc:
        raise UsageError(f"input file not found: {exc}") from None
    except (MatrixFormatError, ValueError) as exc:
        raise UsageError(f"cannot parse {path}: {exc}") from None


def _load_state(path):
    try:
        return read_state(path)
    except FileNotFoundError:
        raise UsageError(f"state file not found: {path}") from None
    except StateFormatError as exc:
        raise UsageError(str(exc)) from None


def _check_epsilon(eps):
    if not 0.0 < eps <= 1.0:
        raise UsageError(f"--epsilon must lie in (0, 1], got {eps}")


def cmd_preprocess(args):
    _check_epsilon(args.epsilon)
    X = _load_matrix(args.input)
    t0 = time.perf_counter()
    state = build_state(X, args.epsilon, args.mode, make_rng(args.seed))
    wall_ms = (time.perf_counter() - t0) * 1e3
    write_state(args.state, state)
    _emit({"n": X.n_original, "n_retained": state.n, "d": state.d, "s_tilde": state.s_tilde,
           "q": state.q, "eta": state.eta, "wall_ms": wall_ms, "mode": args.mode})
    return 0


def draw_chunks(state, X, num, seed, threads=1, timings=False):
    """Draws in fixed-size chunks, chunk ``c`` seeded by ``(seed, c)``.

    Output order and content do not depend on ``threads``. With ``timings``
    draws run one at a time so each gets its own wall time; otherwise a
    chunk is drawn with the vectorized rejection loop.
    """
    def record(dr):
        return {"subset": [int(i) for i in dr.subset], "K": int(dr.rdpp.K),
                "outer_iters": int(dr.rdpp.outer_iters)}

    def run(c):
        rng = make_rng(seed, c)
        count = min(CHUNK, num - c * CHUNK)
        if not timings:
            return [record(dr) for dr in sample_dpp_batch(state, X, count, rng)]
        out = []
        for _ in range(count):
            t0 = time.perf_counter()
            rec = record(sample_dpp_draw(state, X, rng))
            rec["wall_us"] = (time.perf_counter() - t0) * 1e6
            out.append(rec)
        return out

    chunks = range(math.ceil(num / CHUNK))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            yield from pool.map(run, chunks)
    else:
        yield from map(run, chunks)


def cmd_sample(args):
    if args.num is None or args.num < 1:
        raise UsageError("--num must be at least 1")
    state = _load_state(args.state)
    X = _load_matrix(args.input)
    if X.n != state.n or X.d != state.d or not np.array_equal(X.index_map, state.index_map):
        raise UsageError(
            f"matrix ({X.n} non-zero rows x {X.d}) does not match state ({state.n} x {state.d})")
    out = open(args.output, "w", encoding="ascii") if args.output else sys.stdout
    try:
        for chunk in draw_chunks(state, X, args.num, args.seed, args.threads, args.timings):
            for rec in chunk:
                _emit(rec, out)
    finally:
        if args.output:
            out.close()
    return 0


def cmd_validate(args):
    _check_epsilon(args.epsilon)
    X = _load_matrix(args.input)
    num = args.num or 200_000
    try:
        report = run_validation(X, args.epsilon, args.mode, args.seed, num)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.output:
        with open(args.output, "w", encoding="ascii") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
    _emit(report)
    return 0 if report["passed"] else 1


def _median(xs):
    return float(np.median(xs))


def bench_sampling(d, ns, repeats, seed):
    """Median per-draw seconds for exact-mode states at each ``n``."""
    out = {}
    for n in ns:
        g = make_rng(seed, n)
        X = RowMatrix(g.standard_normal((n, d)) / math.sqrt(n / d))
        state = build_state(X, mode="exact")
        rng = make_rng(seed, n, 1)
        for _ in range(5):
            sample_dpp_draw(state, X, rng)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            sample_dpp_draw(state, X, rng)
            times.append(time.perf_counter() - t0)
        out[n] = _median(times)
    return out


def random_sparse(n, d, density, rng):
    """``n x d`` CSR matrix with about ``density * n * d`` Gaussian non-zeros, no empty rows."""
    nnz_row = max(int(round(density * d)), 1)
    cols = np.argsort(rng.random((n, d)), axis=1)[:, :nnz_row]
    rows = np.repeat(np.arange(n), nnz_row)
    vals = rng.standard_normal(n * nnz_row)
    return sp.csr_matrix((vals, (rows, cols.ravel())), shape=(n, d))


def bench_preprocess(n, d, densities, repeats, seed, epsilon=0.5):
    """Median sketched-preprocessing seconds for each density at fixed ``n, d``."""
    out = {}
    for dens in densities:
        X = RowMatrix(random_sparse(n, d, dens, make_rng(seed, int(dens * 1000))), dense_budget=0)
        times = []
        for rep in range(repeats):
            rng = make_rng(seed, rep)
            t0 = time.perf_counter()
            build_state(X, epsilon, "sketched", rng)
            times.append(time.perf_counter() - t0)
        out[dens] = (X.nnz, _median(times))
    return out


def cmd_bench(args):
    ns = args.n or [10_000, 100_000]
    per_draw = bench_sampling(args.d, ns, args.repeats, args.seed)
    n_pre = args.pre_n
    dens = [args.density, 2 * args.density]
    pre = bench_preprocess(n_pre, args.pre_d, dens, args.pre_repeats, args.seed)
    (nnz1, t1), (nnz2, t2) = pre[dens[0]], pre[dens[1]]
    report = {
        "sampling": {"d": args.d, "per_sample_us": {str(n): t * 1e6 for n, t in per_draw.items()},
                     "n_ratio": per_draw[ns[-1]] / per_draw[ns[0]], "repeats": args.repeats},
        "preprocess": {"n": n_pre, "d": args.pre_d, "nnz": [nnz1, nnz2],
                       "preprocess_ms": [t1 * 1e3, t2 * 1e3], "nnz_ratio": t2 / t1,
                       "repeats": args.pre_repeats},
    }
    _emit(report)
    return 0


def cmd_calibrate(args):
    if args.target_size is None:
        raise UsageError("--target-size is required")
    state = _load_state(args.state)
    eig = state.eig_A()
    try:
        alpha = calibrate_scale(eig, args.target_size)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    lam = alpha * alpha * eig.values
    _emit({"alpha": alpha, "achieved_expected_size": float(np.sum(lam / (1.0 + lam))),
           "target_size": args.target_size})
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="rdpp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp_, *, state=True, inp=True):
        if inp:
            sp_.add_argument("--input", required=True, help=".mtx (Matrix Market) or CSV file")
        if state:
            sp_.add_argument("--state", required=True, help="binary preprocessed-state file")
        sp_.add_argument("--seed", type=int, default=0)
        sp_.add_argument("--threads", type=int, default=1)

    s = sub.add_parser("preprocess", help="build and save the sampler state")
    common(s)
    s.add_argument("--epsilon", type=float, default=0.1)
    s.add_argument("--mode", choices=["exact", "sketched"], default="exact")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("sample", help="draw subsets as JSON lines")
    common(s)
    s.add_argument("--num", type=int, default=None)
    s.add_argument("--output")
    s.add_argument("--timings", action="store_true", help="add per-draw wall_us (not reproducible)")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("validate", help="run the brute-force oracle suite (n <= 12)")
    common(s, state=False)
    s.add_argument("--epsilon", type=float, default=0.1)
    s.add_argument("--mode", choices=["exact", "sketched"], default="exact")
    s.add_argument("--num", type=int, default=None)
    s.add_argument("--output")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("bench", help="timing of per-draw cost vs n and preprocessing vs nnz")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--d", type=int, default=10)
    s.add_argument("--n", type=int, nargs="+")
    s.add_argument("--repeats", type=int, default=50)
    s.add_argument("--pre-n", type=int, default=100_000)
    s.add_argument("--pre-d", type=int, default=20)
    s.add_argument("--density", type=float, default=0.1)
    s.add_argument("--pre-repeats", type=int, default=5)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("calibrate", help="rescaling that hits a target expected size")
    s.add_argument("--state", required=True)
    s.add_argument("--target-size", type=float)
    s.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        _emit({"error": str(exc), "kind": "usage"})
        return 2
    except (SketchError, ArithmeticError, RuntimeError, ValueError) as exc:
        _emit({"error": str(exc), "kind": type(exc).__name__})
        return 1


if __name__ == "__main__":
    sys.exit(main())
