"""Compare the compiled and pure-numpy kernel backends.

Times three workloads and prints a small table:

* program evaluation over a batch of random points,
* one tight-decomposition component (grid search with refinement),
* a full embedding integration for abs2d with the tight decomposition.

Run from a checkout with the package installed:

    python benchmarks/bench_backends.py [--quick]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from mmreach import ExtendedBox, IntegratorConfig, builtin, over_approximate
from mmreach.decomposition import OptimizerConfig, TightDecomposition
from mmreach.expr import compile_program

import mmreach._kernels_py as kpy

try:
    import mmreach._kernels as kc
except ImportError:
    kc = None


def time_call(fn, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_run_program(backend, points: int) -> float:
    sys = builtin("poly3d")
    prog = compile_program(sys.field[0], sys.n, sys.m)
    rng = np.random.default_rng(0)
    X = rng.uniform(-2.0, 2.0, (prog.nvars, points))
    return time_call(lambda: backend.run_program(
        prog.ops, prog.iargs, prog.consts, prog.stack_need, X), repeat=5)


def bench_box_extremum(backend, calls: int) -> float:
    sys = builtin("poly3d")
    prog = compile_program(sys.field[0], sys.n, sys.m)
    cfg = OptimizerConfig()
    template = np.zeros(prog.nvars)
    free = np.array([1, 3, 4], dtype=np.int64)
    lo = np.array([-1.0, -0.25, 0.0])
    hi = np.array([1.0, 0.0, 0.25])

    def work():
        for _ in range(calls):
            backend.box_extremum(prog.ops, prog.iargs, prog.consts,
                                 prog.stack_need, template, free, lo, hi,
                                 cfg.grid_points, 5, cfg.shrink, 12,
                                 cfg.tolerance, False)

    return time_call(work, repeat=3)


def bench_integration(backend_name: str, T: float) -> float:
    import mmreach._backend as bk
    saved = (bk.run_program, bk.box_extremum, bk.backend_name)
    mod = kc if backend_name == "cython" else kpy
    bk.run_program, bk.box_extremum = mod.run_program, mod.box_extremum
    bk.backend_name = backend_name
    try:
        sys = builtin("abs2d")
        d = TightDecomposition(sys)
        X0 = ExtendedBox([-1.0, 0.0], [1.0, 1.0])
        cfg = IntegratorConfig()
        return time_call(lambda: over_approximate(sys, d, X0, T, cfg), repeat=1)
    finally:
        bk.run_program, bk.box_extremum, bk.backend_name = saved


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true",
                        help="smaller workloads for smoke runs")
    args = parser.parse_args()
    points = 20000 if args.quick else 200000
    calls = 20 if args.quick else 200
    horizon = 0.05 if args.quick else 0.5

    backends = [("python", kpy)] + ([("cython", kc)] if kc else [])
    if kc is None:
        print("note: compiled extension not importable; timing python only")

    rows = []
    for name, mod in backends:
        rp = bench_run_program(mod, points)
        bx = bench_box_extremum(mod, calls)
        it = bench_integration(name, horizon)
        rows.append((name, rp, bx, it))

    print(f"{'backend':<8} {'run_program':>14} {'box_extremum':>14} {'integration':>14}")
    print(f"{'':8} {f'({points} pts)':>14} {f'({calls} calls)':>14} {f'(T={horizon})':>14}")
    for name, rp, bx, it in rows:
        print(f"{name:<8} {rp:>13.4f}s {bx:>13.4f}s {it:>13.4f}s")
    if len(rows) == 2:
        (_, rp0, bx0, it0), (_, rp1, bx1, it1) = rows
        print(f"{'speedup':<8} {rp0 / rp1:>13.1f}x {bx0 / bx1:>13.1f}x "
              f"{it0 / it1:>13.1f}x")


if __name__ == "__main__":
    main()
