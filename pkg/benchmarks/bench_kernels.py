"""
Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5]

The first numba call is reported separately because it includes compilation
(or a cache load). Both backends are also checked to agree before timing.
"""
import argparse
import time
import warnings

import numpy as np

from molarkit import set_backend
from molarkit.bandit import PolicySpec, build_schedule, run_episode
from molarkit.data import BanditWorldSpec, gen_bandit_world
from molarkit.exceptions import NoConvergenceWarning
from molarkit.kernels import admm_l1, greedy_choice, lasso_cd


def lasso_case(rng, d=100, n=2000):
    X = rng.normal(size=(n, d))
    y = X[:, :5].sum(axis=1) + 0.1 * rng.normal(size=n)
    G, q = X.T @ X / n, X.T @ y / n
    return lambda: lasso_cd(G, q, 0.01, np.zeros(d), 1e-9, 10_000)[0]


def greedy_case(rng, rows=20_000, K=3):
    scores = np.round(rng.normal(size=(rows, K)), 1)  # rounding forces some ties
    u = rng.random(rows)
    return lambda: greedy_choice(scores, u)


def admm_case(rng, rows=60, cols=200):
    B = rng.normal(size=(rows, cols))
    BtK = B.T @ np.linalg.inv(B @ B.T)
    c = B @ np.where(rng.random(cols) < 0.05, 1.0, 0.0)
    mask = np.ones(cols)
    z0, u0 = np.zeros(cols), np.zeros(cols)
    return lambda: admm_l1(B, BtK, c, mask, z0, u0, 1.0, 1.5, 1e-9, 20_000)[0]


def episode_case(rng):
    world = gen_bandit_world(BanditWorldSpec(d=10, s=2, M=5, K=3, T=500, seed=1))
    sched = build_schedule(500, 1)

    def run():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NoConvergenceWarning)
            return run_episode(world, PolicySpec("lasso"), sched, seed=3).per_instance_cumulative
    return run


CASES = {"lasso_cd": lasso_case, "greedy_choice": greedy_case, "admm_l1": admm_case, "episode_lasso": episode_case}


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    print(f"{'kernel':<16}{'first (s)':>12}{'numba (s)':>12}{'numpy (s)':>12}{'speedup':>10}")
    for name, make in CASES.items():
        fn = make(np.random.default_rng(0))
        set_backend("numba")
        t0 = time.perf_counter()
        out_jit = fn()
        first = time.perf_counter() - t0
        t_jit = best_of(fn, args.repeat)
        set_backend("numpy")
        out_np = fn()
        t_np = best_of(fn, max(1, args.repeat // 2))
        set_backend("numba")
        if not np.allclose(out_jit, out_np, rtol=1e-7, atol=1e-9):
            raise SystemExit(f"{name}: backends disagree")
        print(f"{name:<16}{first:>12.4f}{t_jit:>12.4f}{t_np:>12.4f}{t_np / t_jit:>9.1f}x")


if __name__ == "__main__":
    main()
