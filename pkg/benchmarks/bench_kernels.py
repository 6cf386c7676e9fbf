"""Compare the compiled and numpy element kernels.

    python3 benchmarks/bench_kernels.py [--sizes 32 64 128] [--repeat 5]

Times the three kernels called inside each Newton iteration, then a full
Dirichlet solve, on both backends; prints one row per (size, task).
"""

import argparse
import timeit

import numpy as np

from plaplab import kernels
from plaplab.forward import solve
from plaplab.geometry import build_structured_mesh, interpolate


def _kernel_args(mesh, p, rng):
    u = rng.standard_normal(mesh.n_vertices)
    sigma = 1.0 + rng.random(mesh.n_cells)
    A = np.broadcast_to(np.eye(2), (mesh.n_cells, 2, 2)).copy()
    return (mesh.shape_gradients, mesh.cell_areas, mesh.triangles, u, sigma, A, p, 1e-3)


def bench(sizes, repeat, p):
    rng = np.random.default_rng(0)
    print(f"{'n':>5} {'task':<22} {'python [ms]':>12} {'cython [ms]':>12} {'speedup':>8}")
    for n in sizes:
        mesh = build_structured_mesh(n=n)
        args = _kernel_args(mesh, p, rng)
        f = interpolate(mesh, lambda x, y: x + 0.3 * np.sin(3 * y))
        sigma = 1.0 + 0.5 * mesh.centroids[:, 0]
        tasks = {
            "energy": lambda m: m.energy(*args),
            "energy_and_residual": lambda m: m.energy_and_residual(*args),
            "local_hessians": lambda m: m.local_hessians(*args),
        }
        for name, fn in tasks.items():
            t = {}
            for backend in ("python", "cython"):
                mod = kernels.backend_module(backend)
                t[backend] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=repeat)) * 1e3
            print(f"{n:5d} {name:<22} {t['python']:12.3f} {t['cython']:12.3f} {t['python'] / t['cython']:8.1f}")
        t = {}
        for backend in ("python", "cython"):
            kernels.use_backend(backend)
            t[backend] = min(timeit.repeat(lambda: solve(mesh, sigma, None, p, f), number=1, repeat=max(1, repeat // 2))) * 1e3
        print(f"{n:5d} {'full solve':<22} {t['python']:12.3f} {t['cython']:12.3f} {t['python'] / t['cython']:8.1f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--p", type=float, default=3.0)
    args = ap.parse_args()
    try:
        kernels.backend_module("cython")
    except ImportError:
        raise SystemExit("compiled kernels are not built; run `pip install --no-build-isolation -e .` first")
    bench(args.sizes, args.repeat, args.p)


if __name__ == "__main__":
    main()
