#!/usr/bin/env python3
"""Benchmark the CSR matvec lanes (numba kernel vs scipy fallback).

The matvec dominates everything at scale: Lanczos sweeps, Chebyshev filter
applies, and deflated CG are all matvec loops.  Run as

    python benchmarks/bench_matvec.py [--extents 4x4] [--field 0.1] [--reps 50]

Set GOLDSTONE_NO_NUMBA=1 to check what the fallback lane alone would do.
"""

import argparse
import time

import numpy as np

from goldstone import _kernels
from goldstone.eigensolver import SolverOptions, ground_state
from goldstone.lattice import Lattice
from goldstone.operators import build_hamiltonian


def time_matvec(H, x, reps):
    H.matvec(x)  # warm up (JIT compile on the numba lane)
    t0 = time.perf_counter()
    for _ in range(reps):
        y = H.matvec(x)
    dt = (time.perf_counter() - t0) / reps
    return dt, y


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--extents", default="4x4")
    parser.add_argument("--field", type=float, default=0.1)
    parser.add_argument("--reps", type=int, default=50)
    parser.add_argument("--lanczos", action="store_true",
                        help="also time a full ground-state solve")
    args = parser.parse_args()

    extents = tuple(int(t) for t in args.extents.split("x"))
    lat = Lattice.build(extents)
    t0 = time.perf_counter()
    H = build_hamiltonian(lat, args.field)
    print(f"lattice {args.extents}: dim {H.dim}, nnz {H.nnz} "
          f"(built in {time.perf_counter() - t0:.2f}s)")

    rng = np.random.default_rng(0)
    x_real = rng.standard_normal(H.dim)
    x_cplx = x_real + 1j * rng.standard_normal(H.dim)

    lanes = [("scipy", False)]
    if _kernels.HAVE_NUMBA:
        lanes.insert(0, ("numba", True))
    else:
        print("numba unavailable (or disabled by GOLDSTONE_NO_NUMBA)")

    results = {}
    for name, flag in lanes:
        _kernels.use_numba = flag
        dt_r, y_r = time_matvec(H, x_real, args.reps)
        dt_c, y_c = time_matvec(H, x_cplx, args.reps)
        results[name] = (dt_r, dt_c, y_r, y_c)
        gflops = 2 * H.nnz / dt_r / 1e9
        print(f"  {name:6s}: real {dt_r * 1e3:8.3f} ms  "
              f"complex {dt_c * 1e3:8.3f} ms  ({gflops:.2f} Gflop/s real)")

    if len(results) == 2:
        ref = results["scipy"]
        got = results["numba"]
        err = max(np.abs(got[2] - ref[2]).max(), np.abs(got[3] - ref[3]).max())
        print(f"  lane agreement: max |diff| = {err:.3e}")
        print(f"  speedup: real x{ref[0] / got[0]:.2f}, "
              f"complex x{ref[1] / got[1]:.2f}")

    if args.lanczos:
        for name, flag in lanes:
            _kernels.use_numba = flag
            t0 = time.perf_counter()
            gs = ground_state(H, lat, args.field, SolverOptions())
            print(f"  {name:6s}: ground state in "
                  f"{time.perf_counter() - t0:.2f}s (E0 = {gs.energy:.10f})")


if __name__ == "__main__":
    main()
