"""Time the numba kernels against the fallback and check that they agree.

Usage: ``python benchmarks/bench_kernels.py [--repeat 3] [--quick]``.

Each row reports the best of ``repeat`` timings per backend (numba timings
exclude the first, compiling call) and the largest disagreement between
the two outputs.  Random kernels must agree bit for bit.
"""

from __future__ import annotations

import argparse
import os
import time
from contextlib import contextmanager

import numpy as np

from freedimer import _accel, mc
from freedimer.fields import MomentRequest, exact_height_moment
from freedimer.kasteleyn import KasteleynSystem, kasteleyn_matrix
from freedimer.lattice import augment, build_rectangle_domain


@contextmanager
def backend(name: str):
    old = os.environ.get("FREEDIMER_NO_NUMBA")
    os.environ["FREEDIMER_NO_NUMBA"] = "0" if name == "numba" else "1"
    try:
        yield
    finally:
        if old is None:
            del os.environ["FREEDIMER_NO_NUMBA"]
        else:
            os.environ["FREEDIMER_NO_NUMBA"] = old


def best_time(func, repeat: int, warm: bool):
    if warm:
        func()
    best, out = float("inf"), None
    for _ in range(repeat):
        t = time.perf_counter()
        out = func()
        best = min(best, time.perf_counter() - t)
    return best, out


def discrepancy(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        return float("inf")
    if a.dtype.kind in "iub":
        return float(np.count_nonzero(a != b))
    return float(np.max(np.abs(a - b), initial=0.0))


def cases(quick: bool) -> list:
    side = 5 if quick else 9
    aug_big = augment(build_rectangle_domain(side, side), 1.0)
    aug_small = augment(build_rectangle_domain(3, 5), 1.0)
    k_dense = kasteleyn_matrix(aug_big, sparse=False).dense()
    grid = augment(build_rectangle_domain(9, 7), 1.0)
    sysk = KasteleynSystem(grid, dense=True)
    req = MomentRequest.l_shaped([((2, 1), (2, 4)), ((5, 1), (6, 4))])
    steps = 20_000 if quick else 200_000
    trials = 200 if quick else 2000
    return [
        ("pfaffian", lambda: _accel.pfaffian_kernel(np.array(k_dense, dtype=complex))),
        ("enumeration", lambda: np.array([w for _, w in mc.enumerate_covers(aug_small)])),
        ("height moment k=2", lambda: exact_height_moment(req, sysk)),
        ("sequential sampler", lambda: mc.sample_exact_batch(aug_big, 50, mc.RngStream(1))),
        ("mcmc", lambda: mc.run_mcmc(aug_big, steps, mc.RngStream(2), thin=100).samples),
        ("effective walk", lambda: mc.simulate_effective_walk(1.0, (0, 2), steps, mc.RngStream(3)).positions),
        ("coupling", lambda: np.array([mc.coupling_failures((0, 32), (0, 34), 1024, trials,
                                                              mc.RngStream(4)).failures])),
    ]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="smaller problem sizes")
    args = ap.parse_args()
    print(f"{'kernel':<20} {'numba [s]':>11} {'fallback [s]':>13} {'speedup':>9} {'max diff':>10}")
    for name, func in cases(args.quick):
        with backend("numba"):
            t_nb, out_nb = best_time(func, args.repeat, warm=True)
        with backend("python"):
            t_py, out_py = best_time(func, max(1, args.repeat // 3), warm=False)
        print(f"{name:<20} {t_nb:>11.4f} {t_py:>13.4f} {t_py / t_nb:>8.1f}x {discrepancy(out_nb, out_py):>10.2e}")


if __name__ == "__main__":
    main()
