"""Compiled vs pure-Python kernels.

Times each hot kernel with numba and through its ``py_func`` fallback on
identical inputs, checks that both return the same result, and prints a
table. Run ``python benchmarks/bench_kernels.py [--repeat R] [--quick]``.
"""
import argparse
import time

import numpy as np

from hetvoter import kernels
from hetvoter._accel import HAS_NUMBA, python_version
from hetvoter.ldp import _reversed_flow_start, stable_point
from hetvoter.model import ModelParams


def best_of(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def ssa_case(events):
    N, n_plus, rho = 10_000, 5_000, 0.5
    rng = np.random.default_rng(1)
    exps, unis = rng.standard_exponential(events), rng.random(events)

    def run(kernel):
        def go():
            state = np.array([3333, 1667], dtype=np.int64)
            ev_t = np.empty(events)
            ev_kp, ev_km = np.empty(events, np.int64), np.empty(events, np.int64)
            kernel(state, 0.0, N, n_plus, rho, np.inf, exps, unis, 0.0, 0.0, -1.0,
                   True, ev_t, ev_kp, ev_km)
            return ev_t, ev_kp, ev_km
        return go

    return f"ssa_chunk ({events} events)", run(kernels.ssa_chunk), run(python_version(kernels.ssa_chunk))


def full_spin_case(attempts):
    N, rho = 2_000, 0.5
    rng = np.random.default_rng(2)
    h = (rng.random(N) < 0.5).astype(np.int8)
    eta0 = (rng.random(N) < 0.4).astype(np.int8)
    exps = rng.standard_exponential(attempts)
    sites, partners = rng.integers(0, N, attempts), rng.integers(0, N, attempts)
    accepts = rng.random(attempts)

    def run(kernel):
        def go():
            eta = eta0.copy()
            state = np.array([int(eta[h == 1].sum()), int(eta[h == 0].sum())], dtype=np.int64)
            ev_t = np.empty(attempts)
            ev_kp, ev_km = np.empty(attempts, np.int64), np.empty(attempts, np.int64)
            out = kernel(eta, h, state, 0.0, rho, np.inf, exps, sites, partners, accepts,
                         True, ev_t, ev_kp, ev_km)
            return eta, ev_kp[:out[2]], ev_km[:out[2]]
        return go

    return (f"full_spin_chunk ({attempts} attempts)", run(kernels.full_spin_chunk),
            run(python_version(kernels.full_spin_chunk)))


def action_case(M):
    p = ModelParams(N=10, rho=0.5)
    z = stable_point(p)
    P = np.ascontiguousarray(_reversed_flow_start(z, z + [0.06, 0.08], p, M))
    guess = np.zeros(M)

    def run(kernel):
        def go():
            grad, s = np.zeros_like(P), np.zeros(M)
            S = kernel(P, p.rho, p.q, guess, grad, s)
            return np.array([S]), grad
        return go

    return (f"reduced_action (M={M})", run(kernels.reduced_action_nb),
            run(python_version(kernels.reduced_action_nb)), run(kernels.reduced_action_np))


def ou_case(steps):
    A = np.array([[-5 / 12, 1 / 3], [1 / 3, -5 / 12]])
    c = np.array([0.25, -0.125])
    noise = np.random.default_rng(3).standard_normal((steps, 2))

    def run(kernel):
        def go():
            x, out = np.zeros(2), np.empty((steps, 2))
            kernel(x, A, c, np.sqrt(1 / 6), 0.01, noise, out)
            return out
        return go

    return f"ou_euler ({steps} steps)", run(kernels.ou_euler), run(python_version(kernels.ou_euler))


def same(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.array_equal(x, y) or np.allclose(x, y, rtol=1e-10, atol=1e-12 * np.abs(x).max())
               for x, y in zip(a, b))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="smaller problem sizes")
    args = ap.parse_args()
    k = 10 if args.quick else 1
    cases = [ssa_case(200_000 // k), full_spin_case(200_000 // k), action_case(200), ou_case(100_000 // k)]
    if not HAS_NUMBA:
        print("numba unavailable (or HETVOTER_DISABLE_JIT set): both columns run Python")
    for case in cases:  # compile outside the timed region
        case[1]()
    print(f"{'kernel':38s} {'numba [s]':>11s} {'python [s]':>11s} {'speed-up':>9s}  agree")
    for name, fast, slow, *extra in cases:
        t_fast, r_fast = best_of(fast, args.repeat)
        t_slow, r_slow = best_of(slow, 1)
        print(f"{name:38s} {t_fast:11.4g} {t_slow:11.4g} {t_slow / t_fast:9.1f}  {same(r_fast, r_slow)}")
        for alt in extra:
            t_alt, r_alt = best_of(alt, args.repeat)
            print(f"{'  numpy-vectorised twin':38s} {'':11s} {t_alt:11.4g} {t_alt / t_fast:9.1f}  "
                  f"{same(r_fast, r_alt)}")


if __name__ == "__main__":
    main()
