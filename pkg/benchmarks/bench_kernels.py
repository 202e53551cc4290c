"""Compiled vs numpy fixed-point kernel on a reduced-model T-B batch.

Run with ``python benchmarks/bench_kernels.py [--points N] [--repeat R]``.
The same workload is timed with ``use_numba=True`` and ``use_numba=False``
(what ``EDICKE_NUMBA=0`` selects) and the results are checked to agree.
"""

import argparse
import time

import numpy as np

from edicke import ReducedParams, kernels
from edicke._jit import NUMBA_AVAILABLE
from edicke.constants import CONST
from edicke.dicke_mf import _seed_array, default_seeds, reduced_model
from edicke.params import ExternalConditions

GZ = 15.3154296875


def workload(points, seed=0):
    rng = np.random.default_rng(seed)
    params = ReducedParams(g_lande_z=GZ)
    model = reduced_model(params)
    ts = rng.uniform(0.5, 6.0, points)
    hs = rng.uniform(0.0, 1.5, points)
    _, seeds = _seed_array(default_seeds())
    x0 = np.tile(seeds, (points, 1))
    b = np.repeat([model.b(ExternalConditions(t, h)) for t, h in zip(ts, hs)], len(seeds), 0)
    kT = np.repeat(CONST.k_B * ts, len(seeds))
    return model, x0, b, kT


def run(model, x0, b, kT, use_numba, max_iter):
    return kernels.iterate_fixed_point(x0, model.Q, b, kT, model.fac, model.spin, model.kind,
                                       max_iter=max_iter, use_numba=use_numba)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=400)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--max-iter", type=int, default=2000)
    args = ap.parse_args()
    model, x0, b, kT = workload(args.points)
    print(f"{len(x0)} seeds, max_iter={args.max_iter}")
    t_np, ref = best_of(lambda: run(model, x0, b, kT, False, args.max_iter), args.repeat)
    print(f"numpy : {t_np:8.3f} s")
    if not NUMBA_AVAILABLE:
        print("numba : not installed")
        return
    run(model, x0[:1], b[:1], kT[:1], True, 5)  # compile outside the timing
    t_nb, out = best_of(lambda: run(model, x0, b, kT, True, args.max_iter), args.repeat)
    print(f"numba : {t_nb:8.3f} s  speed-up x{t_np / t_nb:.1f}")
    print(f"max |x_numba - x_numpy| = {np.max(np.abs(out[0] - ref[0])):.3g}")


if __name__ == "__main__":
    main()
