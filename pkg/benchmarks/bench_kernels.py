#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Times the two hot operations (meta-atom response grids and GA population
fitness) on representative sizes and checks that both backends agree to
1e-9 relative.  Run from the repo root:

    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from surfho import _kernels_py
from surfho.surface import ResonatorParams

try:
    from surfho import _kernels
except ImportError:
    _kernels = None

PARAMS = ResonatorParams().as_tuple()


def time_call(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-30)))


def main():
    rng = np.random.default_rng(0)
    rows = []

    for n in (64, 1024):
        um = rng.uniform(0, 16, (256, n))
        ue = rng.uniform(0, 16, (256, n))
        args = (um, ue, 26.0, PARAMS)
        t_py = time_call(_kernels_py.atom_coefficients, *args)
        row = [f"atom_coefficients 256x{n}", t_py, None, None]
        if _kernels is not None:
            t_cy = time_call(_kernels.atom_coefficients, *args)
            ct_p, cr_p = _kernels_py.atom_coefficients(*args)
            ct_c, cr_c = _kernels.atom_coefficients(*args)
            row[2] = t_cy
            row[3] = max(rel_err(ct_c, ct_p), rel_err(cr_c, cr_p))
        rows.append(row)

    for pop, n in ((128, 64), (128, 1024), (1024, 64)):
        um = rng.uniform(0, 16, (pop, n))
        ue = rng.uniform(0, 16, (pop, n))
        w_a = np.exp(1j * rng.uniform(0, 2 * np.pi, n)) * 0.7
        w_b = np.exp(1j * rng.uniform(0, 2 * np.pi, n)) * 0.7
        args = (um, ue, w_a, w_b, 26.0, PARAMS, True)
        t_py = time_call(_kernels_py.ga_objectives, *args)
        row = [f"ga_objectives {pop}x{n}", t_py, None, None]
        if _kernels is not None:
            t_cy = time_call(_kernels.ga_objectives, *args)
            row[2] = t_cy
            row[3] = rel_err(_kernels.ga_objectives(*args),
                             _kernels_py.ga_objectives(*args))
        rows.append(row)

    print(f"{'kernel':34s} {'python':>10s} {'cython':>10s} "
          f"{'speedup':>8s} {'rel err':>9s}")
    for name, t_py, t_cy, err in rows:
        if t_cy is None:
            print(f"{name:34s} {t_py * 1e3:8.2f}ms {'n/a':>10s}")
        else:
            print(f"{name:34s} {t_py * 1e3:8.2f}ms {t_cy * 1e3:8.2f}ms "
                  f"{t_py / t_cy:7.1f}x {err:9.1e}")
    if _kernels is None:
        print("\ncompiled extension not available; showing fallback only")


if __name__ == "__main__":
    main()
