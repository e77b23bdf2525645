"""Throughput comparison of the two grid-encoding backends.

Times the three hot kernels (feature lookup forward, table-gradient
scatter, position-gradient) on the model sizes the synthetic scene uses,
calling the numba and numpy implementations directly in one process. Also
cross-checks that both backends produce bit-identical outputs, which is the
contract that lets training swap backends via LANGFIELD_NUMBA without
changing results.

Usage: python3 benchmarks/bench_kernels.py [--points N] [--repeats R]
"""

import argparse
import time

import numpy as np

from langfield import _kernels
from langfield.hashgrid import HashGrid, HashGridConfig

CONFIGS = {
    "language": HashGridConfig(n_levels=8, base_resolution=16,
                               max_resolution=128, table_size=2 ** 15,
                               features_per_level=4),
    "radiance": HashGridConfig(n_levels=12, base_resolution=16,
                               max_resolution=256, table_size=2 ** 15,
                               features_per_level=2),
}


def _time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_grid(name, cfg, n_points, repeats):
    rng = np.random.default_rng(0)
    grid = HashGrid(cfg, rng)
    grid.tables[:] = rng.standard_normal(grid.tables.shape).astype(np.float32)
    x01 = rng.random((n_points, 3))
    out_dim = cfg.out_dim
    grad_feats = rng.standard_normal((n_points, out_dim))
    out_a = np.empty((n_points, out_dim))
    out_b = np.empty((n_points, out_dim))

    kernels = {
        "forward": (
            lambda: _kernels.forward_numba(grid.tables, grid.offsets,
                                           grid.resolutions, grid.dense,
                                           x01, out_a),
            lambda: _kernels.forward_numpy(grid.tables, grid.offsets,
                                           grid.resolutions, grid.dense,
                                           x01, out_b),
            lambda: np.array_equal(out_a, out_b),
        ),
        "backward_tables": (
            lambda: _kernels.backward_tables_numba(
                grad_feats, x01, grid.offsets, grid.resolutions, grid.dense,
                gt_a := np.zeros(grid.tables.shape)),
            lambda: _kernels.backward_tables_numpy(
                grad_feats, x01, grid.offsets, grid.resolutions, grid.dense,
                gt_b := np.zeros(grid.tables.shape)),
            None,
        ),
        "backward_x": (
            lambda: _kernels.backward_x_numba(
                grad_feats, grid.tables, x01, grid.offsets, grid.resolutions,
                grid.dense, gx_a := np.zeros((n_points, 3))),
            lambda: _kernels.backward_x_numpy(
                grad_feats, grid.tables, x01, grid.offsets, grid.resolutions,
                grid.dense, gx_b := np.zeros((n_points, 3))),
            None,
        ),
    }

    # bit-identity spot check on a slice, with fresh accumulators
    sl = slice(0, min(4096, n_points))
    ga = np.zeros(grid.tables.shape)
    gb = np.zeros(grid.tables.shape)
    _kernels.backward_tables_numba(grad_feats[sl], x01[sl], grid.offsets,
                                   grid.resolutions, grid.dense, ga)
    _kernels.backward_tables_numpy(grad_feats[sl], x01[sl], grid.offsets,
                                   grid.resolutions, grid.dense, gb)
    xa = np.zeros((sl.stop, 3))
    xb = np.zeros((sl.stop, 3))
    _kernels.backward_x_numba(grad_feats[sl], grid.tables, x01[sl],
                              grid.offsets, grid.resolutions, grid.dense, xa)
    _kernels.backward_x_numpy(grad_feats[sl], grid.tables, x01[sl],
                              grid.offsets, grid.resolutions, grid.dense, xb)

    for kname, (run_nb, run_np, check) in kernels.items():
        t_nb = _time(run_nb, repeats)
        t_np = _time(run_np, repeats)
        if check is not None and not check():
            raise SystemExit(f"{name}/{kname}: backends disagree")
        rate = n_points / t_nb / 1e6
        print(f"{name:9s} {kname:16s} numba {t_nb * 1e3:8.2f} ms  "
              f"numpy {t_np * 1e3:8.2f} ms  speedup {t_np / t_nb:6.2f}x  "
              f"{rate:7.2f} Mpts/s")
    if not (np.array_equal(ga, gb) and np.array_equal(xa, xb)):
        raise SystemExit(f"{name}: backward outputs differ between backends")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=65536)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    if not _kernels.USE_NUMBA:
        raise SystemExit(
            "numba backend is disabled (LANGFIELD_NUMBA=0 or numba not "
            "installed); nothing to compare. Re-run with LANGFIELD_NUMBA=1.")

    # trigger jit compilation outside the timed region
    warm = HashGrid(HashGridConfig(n_levels=2, base_resolution=4,
                                   max_resolution=8, table_size=2 ** 9),
                    np.random.default_rng(0))
    warm.encode(np.random.default_rng(1).random((16, 3)))
    warm.backward_tables(np.ones((16, 4)), np.random.default_rng(2).random((16, 3)))
    warm.backward_x(np.ones((16, 4)), np.random.default_rng(3).random((16, 3)))

    print(f"points per call: {args.points}, best of {args.repeats}")
    for name, cfg in CONFIGS.items():
        bench_grid(name, cfg, args.points, args.repeats)


if __name__ == "__main__":
    main()
