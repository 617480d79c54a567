"""Compiled vs numpy kernels: energy and gradient assembly, plus one full solve.

    python3 benchmarks/bench_kernels.py [--n 257] [--repeat 20] [--workers 1]
"""

import argparse
import time

import numpy as np

from fbflow import kernels
from fbflow.energy import BetaProfile, ProblemData
from fbflow.grid import ExponentField, Grid, ScalarField
from fbflow.solver import SolveConfig, minimize_Jeps


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=257, help="nodes per axis (2D)")
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    g = Grid((0.0, 0.0), (1.0, 1.0), (args.n, args.n))
    rng = np.random.default_rng(0)
    u = rng.random(g.n)
    ac = np.ones(g.cell_shape)
    fc = rng.standard_normal(g.cell_shape)
    exponents = {"p random": 1.5 + rng.random(g.cell_shape),
                 "p = 1.5": np.full(g.cell_shape, 1.5),
                 "p = 3": np.full(g.cell_shape, 3.0)}

    small = Grid((0.0, 0.0), (1.0, 1.0), (65, 65))
    X, _ = small.coords()
    data = ProblemData(ExponentField.constant(small, 3.0), ScalarField.constant(small, 0.0),
                       beta=BetaProfile("quartic", 1.0), eps=0.05)
    bd = ScalarField(small, np.where(small.boundary_mask(), X, 0.0))

    rows = {}
    for name in ("numpy", "compiled"):
        try:
            kernels.use_backend(name)
        except ImportError:
            print(f"{name}: not available")
            continue
        for label, pc in exponents.items():
            e = best_of(lambda: kernels.energy_cells(u, pc, ac, g.h, False, args.workers), args.repeat)
            gr = best_of(lambda: kernels.smooth_gradient(u, pc, ac, fc, g.h, 1e-8, False, args.workers),
                         args.repeat)
            rows[name, label] = (e, gr)
        rows[name, "solve"] = best_of(lambda: minimize_Jeps(data, bd, None, SolveConfig(workers=args.workers)), 1)
    print(f"{args.n}^2 grid, best of {args.repeat}, workers = {args.workers}")
    print(f"{'backend':10s} {'exponent':10s} {'energy [ms]':>12s} {'gradient [ms]':>14s}")
    for (name, label), val in rows.items():
        if label != "solve":
            print(f"{name:10s} {label:10s} {1e3 * val[0]:12.3f} {1e3 * val[1]:14.3f}")
    for name in ("numpy", "compiled"):
        if (name, "solve") in rows:
            print(f"{name:10s} full J_eps solve, 65^2, p = 3: {rows[name, 'solve']:.3f} s")
    if ("numpy", "solve") in rows and ("compiled", "solve") in rows:
        for label in exponents:
            (e0, g0), (e1, g1) = rows["numpy", label], rows["compiled", label]
            print(f"speedup {label:10s} energy {e0 / e1:5.1f}x  gradient {g0 / g1:5.1f}x")
        print(f"speedup solve {rows['numpy', 'solve'] / rows['compiled', 'solve']:5.1f}x")


if __name__ == "__main__":
    main()
