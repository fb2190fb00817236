"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--runs N] [--repeat R]

Both backends consume the same counter-based keys, so the script also
checks that they return identical results.
"""
import argparse
import time

import numpy as np

from brwbarrier import kernels
from brwbarrier.laws import critical_gaussian, pack_law
from brwbarrier.rng import RandomStream
from brwbarrier.tube import Gaussian, TubeSpec, Constant, _step_arrays


def _best(fn, repeat):
    out, best = None, float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def bench_evolve(runs, repeat, n=64, a=5.0):
    packed = pack_law(critical_gaussian(1.0))
    keys = RandomStream(11).keys(runs)
    upper = a * np.cbrt(np.arange(n + 1.0))
    lower = np.full(n + 1, -np.inf)
    pos0, off0, w0 = np.zeros(runs), np.arange(runs + 1), np.ones(runs)

    def go(backend):
        return lambda: kernels.evolve(pos0, keys, off0, w0, 0, n, upper, lower, packed, 10 ** 4,
                                      kernels.CAP_ALIVE, backend=backend)
    go("numba")()  # compile
    rows = {}
    for b in ("numba", "numpy"):
        rows[b] = _best(go(b), repeat)
    same = all(np.array_equal(x, y) for x, y in zip(rows["numba"][1][:3], rows["numpy"][1][:3]))
    return rows, same


def bench_tube(runs, repeat, j=216):
    spec = TubeSpec(j, Constant(-1.0), Constant(1.0))
    kind, cum, atoms, mean, sd = _step_arrays(Gaussian(0.0, 1.0))
    lower, upper = spec.bounds()
    keys = RandomStream(12).keys(runs)

    def go(backend):
        return lambda: kernels.tube_walk(keys, kind, cum, atoms, mean, sd, lower, upper, backend=backend)
    go("numba")()
    rows = {b: _best(go(b), repeat) for b in ("numba", "numpy")}
    same = rows["numba"][1][0] == rows["numpy"][1][0]
    return rows, same


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--runs", type=int, default=2000)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    print(f"{'kernel':<10}{'backend':<8}{'seconds':>12}{'speedup':>10}")
    for name, (rows, same) in (("evolve", bench_evolve(args.runs, args.repeat)),
                               ("tube_walk", bench_tube(args.runs * 50, args.repeat))):
        t_nb, t_np = rows["numba"][0], rows["numpy"][0]
        print(f"{name:<10}{'numba':<8}{t_nb:>12.4f}{t_np / t_nb:>9.1f}x")
        print(f"{name:<10}{'numpy':<8}{t_np:>12.4f}{1.0:>9.1f}x")
        print(f"{name:<10}identical results: {same}")


if __name__ == "__main__":
    main()
