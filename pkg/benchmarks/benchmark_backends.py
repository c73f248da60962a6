#!/usr/bin/env python3
"""Compare the numba kernels against their pure-numpy fallbacks.

Runs each hot kernel on a representative workload under both backends
(the numba path is warmed before timing so compilation is excluded) and
prints a table. Select what the package itself uses at import time via
GRIDSCAN_BACKEND={auto,numba,numpy}; this script calls both variants
directly and ignores the dispatcher.

Usage:
    python benchmarks/benchmark_backends.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from gridscan import kernels
from gridscan._accel import HAVE_NUMBA


def timeit(fn, *args, repeats=5, **kwargs):
    fn(*args, **kwargs)  # warmup (JIT compile / cache load)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args, **kwargs)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_heightfield(repeats):
    rng = np.random.default_rng(0)
    heights = 1.0 + 0.01 * rng.standard_normal((128, 128))
    h, w = 480, 640
    gy, gx = np.mgrid[0:h, 0:w]
    dirs = np.stack(
        [(gx - w / 2) / 600.0, (gy - h / 2) / 600.0, np.ones_like(gx, dtype=float)], axis=-1
    ).reshape(-1, 3)
    origin = np.zeros(3)
    extent = (-0.6, 0.6, -0.45, 0.45)
    args = (origin, dirs, heights, extent)
    t_np = timeit(kernels.raycast_heightfield_numpy, *args, repeats=repeats)
    t_nb = (
        timeit(
            kernels._raycast_heightfield_numba,
            origin, dirs, heights, *map(float, extent), 30,
            repeats=repeats,
        )
        if HAVE_NUMBA
        else None
    )
    return "heightfield raycast (VGA)", t_np, t_nb


def bench_mesh(repeats):
    rng = np.random.default_rng(1)
    centers = rng.uniform(-0.4, 0.4, size=(60, 2))
    tris = []
    for cx, cy in centers:
        z = 1.0 + 0.05 * rng.standard_normal()
        tris.append([[cx, cy, z], [cx + 0.08, cy, z], [cx, cy + 0.08, z]])
    tris = np.asarray(tris)
    h, w = 240, 320
    gy, gx = np.mgrid[0:h, 0:w]
    dirs = np.stack(
        [(gx - w / 2) / 300.0, (gy - h / 2) / 300.0, np.ones_like(gx, dtype=float)], axis=-1
    ).reshape(-1, 3)
    origin = np.zeros(3)
    t_np = timeit(kernels.raycast_mesh_numpy, origin, dirs, tris, repeats=repeats)
    t_nb = (
        timeit(kernels._raycast_mesh_numba, origin, dirs, tris, repeats=repeats)
        if HAVE_NUMBA
        else None
    )
    return "mesh raycast (60 tris, QVGA)", t_np, t_nb


def bench_splat(repeats):
    rng = np.random.default_rng(2)
    n = 200_000
    xs = rng.uniform(0, 639, n)
    ys = rng.uniform(0, 479, n)
    vals = rng.uniform(-0.5, 0.5, n)
    wts = np.ones(n)
    t_np = timeit(kernels.bilinear_splat_numpy, xs, ys, vals, wts, (480, 640), repeats=repeats)
    t_nb = (
        timeit(kernels._bilinear_splat_numba, xs, ys, vals, wts, 480, 640, repeats=repeats)
        if HAVE_NUMBA
        else None
    )
    return "bilinear splat (200k samples)", t_np, t_nb


def _random_bf_instance(rng, n_nodes=9, k=5, grid_cols=3):
    counts = np.full(n_nodes, k, dtype=np.int64)
    g = rng.uniform(0.0, 3.0, size=(n_nodes, k))
    edge_other = []
    edge_cost = []
    edge_ptr = np.zeros(n_nodes + 1, dtype=np.int64)
    for node in range(n_nodes):
        others = []
        if node % grid_cols > 0:
            others.append(node - 1)
        if node >= grid_cols:
            others.append(node - grid_cols)
        for other in others:
            edge_other.append(other)
            edge_cost.append(rng.choice([0.0, 2.0], size=(k, k)))
        edge_ptr[node + 1] = len(edge_other)
    return (
        counts,
        g,
        edge_ptr,
        np.asarray(edge_other, dtype=np.int64),
        np.stack(edge_cost),
    )


def bench_bruteforce(repeats):
    rng = np.random.default_rng(3)
    instances = [_random_bf_instance(rng) for _ in range(20)]

    def run_np():
        for inst in instances:
            kernels.bruteforce_assign_numpy(*inst)

    def run_nb():
        for inst in instances:
            kernels._bruteforce_assign_numba(*inst)

    t_np = timeit(run_np, repeats=repeats)
    t_nb = timeit(run_nb, repeats=repeats) if HAVE_NUMBA else None
    return "exhaustive MAP (20x 3x3, 5 labels)", t_np, t_nb


def bench_phase_bfs(repeats):
    rng = np.random.default_rng(4)
    h, w = 480, 640
    gy, gx = np.mgrid[0:h, 0:w]
    phase = ((gx / 21.4) % 1.0).astype(np.float64)
    valid = np.ones((h, w), dtype=bool)
    seeds_y = rng.integers(0, h, 500)
    seeds_x = rng.integers(0, w, 500)
    seeds_k = (seeds_x // 21).astype(np.int32)
    args = (phase, valid, seeds_y.astype(np.int64), seeds_x.astype(np.int64), seeds_k)
    t_np = timeit(kernels.phase_bfs_numpy, *args, repeats=repeats)
    t_nb = (
        timeit(kernels._phase_bfs_numba, *args, h + w + 8, repeats=repeats)
        if HAVE_NUMBA
        else None
    )
    return "phase flood fill (VGA, 500 seeds)", t_np, t_nb


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    benches = (bench_heightfield, bench_mesh, bench_splat, bench_bruteforce, bench_phase_bfs)
    print(f"{'kernel':<36} {'numpy':>10} {'numba':>10} {'speedup':>9}")
    print("-" * 70)
    for bench in benches:
        name, t_np, t_nb = bench(args.repeats)
        if t_nb is None:
            print(f"{name:<36} {t_np * 1e3:>8.1f}ms {'n/a':>10} {'n/a':>9}")
        else:
            print(
                f"{name:<36} {t_np * 1e3:>8.1f}ms {t_nb * 1e3:>8.1f}ms "
                f"{t_np / t_nb:>8.2f}x"
            )
    if not HAVE_NUMBA:
        print("numba not importable; only the numpy fallbacks were timed")


if __name__ == "__main__":
    main()
