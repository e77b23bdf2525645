"""Hot inner loops for multi-resolution grid encoding.

Two interchangeable backends: numba ``@njit`` kernels (default) and a pure
numpy path. Selection happens once at import via the ``LANGFIELD_NUMBA``
environment variable ("0", "false" or "off" disables numba). Both paths
iterate corners in the same order so results are bit-identical; the
benchmark in ``benchmarks/bench_kernels.py`` compares their throughput.

Grid layout convention shared by all kernels: one f32 table of shape
(total_rows, n_features); ``offsets[l]:offsets[l+1]`` is level l's row
range; ``resolutions[l]`` is the cell count per axis (so vertices run
0..resolutions[l]); ``dense[l]`` selects direct vertex indexing, otherwise
rows are found by the XOR-of-primes spatial hash modulo the level's row
count (a power of two).
"""

import os

import numpy as np

_PRIME_Y = np.uint32(2654435761)
_PRIME_Z = np.uint32(805459861)

_flag = os.environ.get("LANGFIELD_NUMBA", "1").strip().lower()
USE_NUMBA = _flag not in ("0", "false", "off", "no")
if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:
        USE_NUMBA = False

if not USE_NUMBA:
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        def wrap(f):
            return f
        return wrap


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

@njit(cache=True)
def _cell_coords(x01, resolution, c0, fr):
    n = x01.shape[0]
    for i in range(n):
        for a in range(3):
            p = x01[i, a]
            if p < 0.0:
                p = 0.0
            elif p > 1.0:
                p = 1.0
            p = p * resolution
            c = np.int64(p)
            if c > resolution - 1:
                c = resolution - 1
            c0[i, a] = c
            fr[i, a] = p - c


@njit(cache=True)
def _forward_nb(tables, offsets, resolutions, dense, x01, out):
    n = x01.shape[0]
    n_levels = resolutions.shape[0]
    n_feat = tables.shape[1]
    c0 = np.empty((n, 3), np.int64)
    fr = np.empty((n, 3), np.float64)
    for lvl in range(n_levels):
        res = resolutions[lvl]
        off = offsets[lvl]
        nvert = res + 1
        mask = np.uint32(offsets[lvl + 1] - off - 1)
        is_dense = dense[lvl] == 1
        _cell_coords(x01, res, c0, fr)
        base = lvl * n_feat
        for i in range(n):
            for f in range(n_feat):
                out[i, base + f] = 0.0
        for corner in range(8):
            bx = corner & 1
            by = (corner >> 1) & 1
            bz = (corner >> 2) & 1
            for i in range(n):
                ix = c0[i, 0] + bx
                iy = c0[i, 1] + by
                iz = c0[i, 2] + bz
                wx = fr[i, 0] if bx == 1 else 1.0 - fr[i, 0]
                wy = fr[i, 1] if by == 1 else 1.0 - fr[i, 1]
                wz = fr[i, 2] if bz == 1 else 1.0 - fr[i, 2]
                w = wx * wy * wz
                if is_dense:
                    row = off + ix + nvert * (iy + nvert * iz)
                else:
                    h = (np.uint32(ix) ^ (np.uint32(iy) * _PRIME_Y)
                         ^ (np.uint32(iz) * _PRIME_Z))
                    row = off + np.int64(h & mask)
                for f in range(n_feat):
                    out[i, base + f] += w * tables[row, f]


@njit(cache=True)
def _backward_tables_nb(grad_feats, x01, offsets, resolutions, dense, grad_tables):
    n = x01.shape[0]
    n_levels = resolutions.shape[0]
    n_feat = grad_tables.shape[1]
    c0 = np.empty((n, 3), np.int64)
    fr = np.empty((n, 3), np.float64)
    for lvl in range(n_levels):
        res = resolutions[lvl]
        off = offsets[lvl]
        nvert = res + 1
        mask = np.uint32(offsets[lvl + 1] - off - 1)
        is_dense = dense[lvl] == 1
        _cell_coords(x01, res, c0, fr)
        base = lvl * n_feat
        for corner in range(8):
            bx = corner & 1
            by = (corner >> 1) & 1
            bz = (corner >> 2) & 1
            for i in range(n):
                ix = c0[i, 0] + bx
                iy = c0[i, 1] + by
                iz = c0[i, 2] + bz
                wx = fr[i, 0] if bx == 1 else 1.0 - fr[i, 0]
                wy = fr[i, 1] if by == 1 else 1.0 - fr[i, 1]
                wz = fr[i, 2] if bz == 1 else 1.0 - fr[i, 2]
                w = wx * wy * wz
                if is_dense:
                    row = off + ix + nvert * (iy + nvert * iz)
                else:
                    h = (np.uint32(ix) ^ (np.uint32(iy) * _PRIME_Y)
                         ^ (np.uint32(iz) * _PRIME_Z))
                    row = off + np.int64(h & mask)
                for f in range(n_feat):
                    grad_tables[row, f] += w * grad_feats[i, base + f]


@njit(cache=True)
def _backward_x_nb(grad_feats, tables, x01, offsets, resolutions, dense, grad_x):
    n = x01.shape[0]
    n_levels = resolutions.shape[0]
    n_feat = tables.shape[1]
    c0 = np.empty((n, 3), np.int64)
    fr = np.empty((n, 3), np.float64)
    for lvl in range(n_levels):
        res = resolutions[lvl]
        off = offsets[lvl]
        nvert = res + 1
        mask = np.uint32(offsets[lvl + 1] - off - 1)
        is_dense = dense[lvl] == 1
        _cell_coords(x01, res, c0, fr)
        base = lvl * n_feat
        scale = float(res)
        for corner in range(8):
            bx = corner & 1
            by = (corner >> 1) & 1
            bz = (corner >> 2) & 1
            for i in range(n):
                ix = c0[i, 0] + bx
                iy = c0[i, 1] + by
                iz = c0[i, 2] + bz
                wx = fr[i, 0] if bx == 1 else 1.0 - fr[i, 0]
                wy = fr[i, 1] if by == 1 else 1.0 - fr[i, 1]
                wz = fr[i, 2] if bz == 1 else 1.0 - fr[i, 2]
                sx = 1.0 if bx == 1 else -1.0
                sy = 1.0 if by == 1 else -1.0
                sz = 1.0 if bz == 1 else -1.0
                if is_dense:
                    row = off + ix + nvert * (iy + nvert * iz)
                else:
                    h = (np.uint32(ix) ^ (np.uint32(iy) * _PRIME_Y)
                         ^ (np.uint32(iz) * _PRIME_Z))
                    row = off + np.int64(h & mask)
                g = 0.0
                for f in range(n_feat):
                    g += grad_feats[i, base + f] * tables[row, f]
                grad_x[i, 0] += g * sx * wy * wz * scale
                grad_x[i, 1] += g * wx * sy * wz * scale
                grad_x[i, 2] += g * wx * wy * sz * scale


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------

def _cell_coords_np(x01, resolution):
    pos = np.clip(x01, 0.0, 1.0) * resolution
    c0 = np.minimum(pos.astype(np.int64), resolution - 1)
    return c0, pos - c0


def _corner_rows(c0, bx, by, bz, resolution, is_dense, off, n_rows):
    ix = c0[:, 0] + bx
    iy = c0[:, 1] + by
    iz = c0[:, 2] + bz
    if is_dense:
        nvert = resolution + 1
        return off + ix + nvert * (iy + nvert * iz)
    h = (ix.astype(np.uint32) ^ (iy.astype(np.uint32) * _PRIME_Y)
         ^ (iz.astype(np.uint32) * _PRIME_Z))
    return off + (h & np.uint32(n_rows - 1)).astype(np.int64)


def forward_numpy(tables, offsets, resolutions, dense, x01, out):
    n_feat = tables.shape[1]
    for lvl in range(len(resolutions)):
        res = int(resolutions[lvl])
        off = int(offsets[lvl])
        n_rows = int(offsets[lvl + 1]) - off
        c0, fr = _cell_coords_np(x01, res)
        block = out[:, lvl * n_feat:(lvl + 1) * n_feat]
        block[:] = 0.0
        for corner in range(8):
            bx, by, bz = corner & 1, (corner >> 1) & 1, (corner >> 2) & 1
            wx = fr[:, 0] if bx else 1.0 - fr[:, 0]
            wy = fr[:, 1] if by else 1.0 - fr[:, 1]
            wz = fr[:, 2] if bz else 1.0 - fr[:, 2]
            w = wx * wy * wz
            rows = _corner_rows(c0, bx, by, bz, res, dense[lvl] == 1, off, n_rows)
            block += w[:, None] * tables[rows]


def backward_tables_numpy(grad_feats, x01, offsets, resolutions, dense, grad_tables):
    n_feat = grad_tables.shape[1]
    for lvl in range(len(resolutions)):
        res = int(resolutions[lvl])
        off = int(offsets[lvl])
        n_rows = int(offsets[lvl + 1]) - off
        c0, fr = _cell_coords_np(x01, res)
        g = grad_feats[:, lvl * n_feat:(lvl + 1) * n_feat]
        for corner in range(8):
            bx, by, bz = corner & 1, (corner >> 1) & 1, (corner >> 2) & 1
            wx = fr[:, 0] if bx else 1.0 - fr[:, 0]
            wy = fr[:, 1] if by else 1.0 - fr[:, 1]
            wz = fr[:, 2] if bz else 1.0 - fr[:, 2]
            w = wx * wy * wz
            rows = _corner_rows(c0, bx, by, bz, res, dense[lvl] == 1, off, n_rows)
            np.add.at(grad_tables, rows, w[:, None] * g)


def backward_x_numpy(grad_feats, tables, x01, offsets, resolutions, dense, grad_x):
    n_feat = tables.shape[1]
    for lvl in range(len(resolutions)):
        res = int(resolutions[lvl])
        off = int(offsets[lvl])
        n_rows = int(offsets[lvl + 1]) - off
        c0, fr = _cell_coords_np(x01, res)
        g = grad_feats[:, lvl * n_feat:(lvl + 1) * n_feat]
        for corner in range(8):
            bx, by, bz = corner & 1, (corner >> 1) & 1, (corner >> 2) & 1
            wx = fr[:, 0] if bx else 1.0 - fr[:, 0]
            wy = fr[:, 1] if by else 1.0 - fr[:, 1]
            wz = fr[:, 2] if bz else 1.0 - fr[:, 2]
            sx = 1.0 if bx else -1.0
            sy = 1.0 if by else -1.0
            sz = 1.0 if bz else -1.0
            rows = _corner_rows(c0, bx, by, bz, res, dense[lvl] == 1, off, n_rows)
            gv = np.sum(g * tables[rows], axis=1)
            # multiply left to right like the scalar kernel so both backends
            # round identically
            grad_x[:, 0] += gv * sx * wy * wz * float(res)
            grad_x[:, 1] += gv * wx * sy * wz * float(res)
            grad_x[:, 2] += gv * wx * wy * sz * float(res)


def forward_numba(tables, offsets, resolutions, dense, x01, out):
    _forward_nb(tables, offsets, resolutions, dense, x01, out)


def backward_tables_numba(grad_feats, x01, offsets, resolutions, dense, grad_tables):
    _backward_tables_nb(grad_feats, x01, offsets, resolutions, dense, grad_tables)


def backward_x_numba(grad_feats, tables, x01, offsets, resolutions, dense, grad_x):
    _backward_x_nb(grad_feats, tables, x01, offsets, resolutions, dense, grad_x)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if USE_NUMBA:
    grid_forward = forward_numba
    grid_backward_tables = backward_tables_numba
    grid_backward_x = backward_x_numba
else:
    grid_forward = forward_numpy
    grid_backward_tables = backward_tables_numpy
    grid_backward_x = backward_x_numpy
