"""Time the numba and numpy backends of the two hot kernels.

    python benchmarks/bench_kernels.py [--n 128] [--particles 2000]

Both backends run on identical inputs; the script checks that they agree
before reporting timings.
"""

import argparse
import math
import time

import numpy as np

from channelfx import kernels
from channelfx.functions import FunctionExpr
from channelfx.geom import Parametric2D
from channelfx.harmonic import assemble_laplace
from channelfx.profiles import CellGrid
from channelfx.sim import _particle_geometry, start_positions


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_pcg(spec, n, repeat):
    system = assemble_laplace(spec, CellGrid(n, n // 2))
    A = system.matrix
    args = (A.indptr, A.indices, A.data, system.rhs, np.full(A.shape[0], 0.5), 1 / A.diagonal(), 1e-10, 10_000)
    kernels.pcg(*args, use_numba=True)  # compile
    t_nb, (x_nb, it_nb, _) = best_of(lambda: kernels.pcg(*args, use_numba=True), repeat)
    t_np, (x_np, it_np, _) = best_of(lambda: kernels.pcg(*args, use_numba=False), repeat)
    assert it_nb == it_np and np.allclose(x_nb, x_np, rtol=1e-8)
    return t_nb, t_np, it_nb


def bench_particles(spec, N, dt, repeat):
    _, geo, table = _particle_geometry(spec, 4097)
    x0, y0 = start_positions(spec, N, 0)
    keys = kernels.particle_keys(0, N)
    args = (geo, table, x0, y0, keys, 1.0, dt, 1e6 * dt)
    kernels.particle_passage_times(*args, use_numba=True)  # compile
    t_nb, (a, _) = best_of(lambda: kernels.particle_passage_times(*args, use_numba=True), repeat)
    t_np, (b, _) = best_of(lambda: kernels.particle_passage_times(*args, use_numba=False), repeat)
    assert np.array_equal(a, b)
    return t_nb, t_np, float(a.mean())


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=128, help="cells along u for the CG solve")
    p.add_argument("--particles", type=int, default=2000)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    spec = Parametric2D(FunctionExpr.sinusoid(0.0, 0.1, 2 * math.pi), FunctionExpr.sinusoid(0.25, 0.075, 2 * math.pi))
    rows = []
    t_nb, t_np, it = bench_pcg(spec, args.n, args.repeat)
    rows.append((f"pcg {args.n}x{args.n // 2} ({it} it)", t_nb, t_np))
    t_nb, t_np, mean = bench_particles(spec, args.particles, args.dt, args.repeat)
    rows.append((f"particles N={args.particles} dt={args.dt:g}", t_nb, t_np))

    print(f"{'kernel':<34}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for name, a, b in rows:
        print(f"{name:<34}{a:>12.4f}{b:>12.4f}{b / a:>10.1f}")


if __name__ == "__main__":
    main()
