"""Benchmark the jitted kernels against their pure-numpy fallbacks.

    python -m rare_eval.bench [--repeat N]

Both backends consume the same pre-drawn uniforms and must produce identical
results; this script reports wall-clock times and the speedup, and asserts
the outputs agree bit for bit.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from . import _kernels


def _time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def _check_equal(name, a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    for left, right in zip(a, b):
        if not np.array_equal(np.asarray(left), np.asarray(right)):
            raise AssertionError(f"backend outputs differ for {name}")


def build_workloads(rng: np.random.Generator):
    m = 256
    fail_prob = np.minimum(1.0, 0.5 ** np.arange(m) * 2.0)
    accept = fail_prob**0.5

    n_eps = 2_000_000
    state_idx = rng.integers(0, m, size=n_eps)
    eps_u = rng.random(n_eps)

    n_walk, horizon, top = 100_000, 64, 12
    walk_start = rng.integers(1, top + 1, size=n_walk)
    walk_q = np.full(n_walk, 0.3)
    walk_u = rng.random((n_walk, horizon))

    rows, n_cand = 20_000, 256
    cand = rng.integers(0, m, size=(rows, n_cand))
    tie_u = rng.random(rows)

    n_prop = 4_000_000
    prop = rng.integers(0, m, size=n_prop)
    prop_u = rng.random(n_prop)

    return [
        (
            "bernoulli_episodes",
            lambda: _kernels.bernoulli_episodes_loop_backend(state_idx, eps_u, fail_prob),
            lambda: _kernels.bernoulli_episodes_numpy(state_idx, eps_u, fail_prob),
        ),
        (
            "walk_episodes",
            lambda: _kernels.walk_episodes_loop_backend(walk_start, walk_q, horizon, top, walk_u),
            lambda: _kernels.walk_episodes_numpy(walk_start, walk_q, horizon, top, walk_u),
        ),
        (
            "select_candidates",
            lambda: _kernels.select_candidates_loop_backend(cand, fail_prob, tie_u),
            lambda: _kernels.select_candidates_numpy(cand, fail_prob, tie_u),
        ),
        (
            "rejection_scan",
            lambda: _kernels.rejection_scan_loop_backend(prop, prop_u, accept, 50_000),
            lambda: _kernels.rejection_scan_numpy(prop, prop_u, accept, 50_000),
        ),
    ]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)

    print(f"numba available: {_kernels.HAVE_NUMBA}   active backend: {_kernels.BACKEND}")
    rng = np.random.Generator(np.random.Philox(20240131))
    rows = []
    for name, loop_fn, numpy_fn in build_workloads(rng):
        _check_equal(name, loop_fn(), numpy_fn())  # also warms the JIT
        t_loop = _time(loop_fn, args.repeat)
        t_numpy = _time(numpy_fn, args.repeat)
        rows.append((name, t_loop, t_numpy, t_numpy / t_loop))
    label = "numba" if _kernels.HAVE_NUMBA else "python-loop"
    print(f"{'kernel':<20} {label:>12} {'numpy':>12} {'speedup':>9}")
    for name, t_loop, t_numpy, speedup in rows:
        print(f"{name:<20} {t_loop * 1e3:>10.2f}ms {t_numpy * 1e3:>10.2f}ms {speedup:>8.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
