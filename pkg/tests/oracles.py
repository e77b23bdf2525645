"""Independent reference implementations the tests score against.

Everything here is written from the math, not from the package internals:
loops instead of vectorization, no calls into langfield beyond plain data
containers. Keep it slow and obvious.
"""

import math

import numpy as np


def composite_weights_ref(sigma, delta):
    """Per-ray alpha compositing with explicit loops."""
    n = len(sigma)
    trans = np.empty(n)
    weights = np.empty(n)
    t = 1.0
    for i in range(n):
        a = 1.0 - math.exp(-sigma[i] * delta[i])
        trans[i] = t
        weights[i] = t * a
        t *= 1.0 - a
    return trans, weights


def dense_language_render_ref(sigma, delta, phi, subdivide=100):
    """Brute-force renderer: split every constant-density segment into
    ``subdivide`` equal sub-segments with the same field value, composite,
    normalize. Returns (phi_lang, phi_dino_style_raw)."""
    sig = np.repeat(sigma, subdivide)
    dl = np.repeat(delta / subdivide, subdivide)
    ph = np.repeat(phi, subdivide, axis=0)
    _, w = composite_weights_ref(sig, dl)
    raw = (w[:, None] * ph).sum(axis=0)
    n = np.linalg.norm(raw)
    return raw / n if n > 0 else raw, raw


def pyramid_target_ref(pyr, frame_id, u, v, s_img):
    """Nearest-crop/level enumeration oracle for one (pixel, scale) query.

    Scans the stored lattices with plain loops: clamp the scale, find the two
    bracketing levels, find the bracketing crop centers on each axis by
    linear search, blend bilinearly, blend the two levels linearly in log
    scale, then normalize."""
    fractions = [float(f) for f in pyr.scale_fractions]
    s = min(max(float(s_img), fractions[0]), fractions[-1])
    hi = 1
    while hi < len(fractions) - 1 and fractions[hi] < s:
        hi += 1
    lo = hi - 1
    t = ((math.log(s) - math.log(fractions[lo]))
         / (math.log(fractions[hi]) - math.log(fractions[lo])))

    def axis_blend(centers, q):
        centers = list(centers)
        if q <= centers[0]:
            return [(0, 1.0)]
        if q >= centers[-1]:
            return [(len(centers) - 1, 1.0)]
        j = 0
        while centers[j + 1] < q:
            j += 1
        span = centers[j + 1] - centers[j]
        w_hi = (q - centers[j]) / span
        return [(j, 1.0 - w_hi), (j + 1, w_hi)]

    acc = np.zeros(pyr.embed_dim)
    for lvl, w_lvl in ((lo, 1.0 - t), (hi, t)):
        if w_lvl == 0.0:
            continue
        grid = pyr.levels_per_frame[frame_id][lvl]
        for ix, wx in axis_blend(grid.centers_x, u):
            for iy, wy in axis_blend(grid.centers_y, v):
                acc += w_lvl * wx * wy * grid.embeddings[iy, ix].astype(np.float64)
    return acc / np.linalg.norm(acc)


def sigmoid_ref(x):
    return 1.0 / (1.0 + math.exp(-x))


def relevancy_ref(phi, query, canonicals, temperature):
    """min-over-canonicals pairwise softmax, one float at a time."""
    best = None
    sq = float(np.dot(phi, query))
    for c in np.atleast_2d(canonicals):
        sc = float(np.dot(phi, c))
        val = sigmoid_ref(temperature * (sq - sc))
        best = val if best is None else min(best, val)
    return best


def ks_statistic(samples, cdf):
    """Kolmogorov-Smirnov distance between empirical samples and a CDF."""
    xs = np.sort(np.asarray(samples, dtype=np.float64))
    n = len(xs)
    theo = np.asarray([cdf(x) for x in xs])
    emp_hi = np.arange(1, n + 1) / n
    emp_lo = np.arange(0, n) / n
    return float(max(np.max(np.abs(emp_hi - theo)),
                     np.max(np.abs(theo - emp_lo))))


def hash_corner_ref(ix, iy, iz, rows):
    """Spatial-hash row index for one integer corner, from the constants.

    Uses python ints with an explicit 32-bit mask so the expected value does
    not depend on numpy's unsigned wraparound."""
    h = ((ix * 1) & 0xFFFFFFFF) \
        ^ ((iy * 2654435761) & 0xFFFFFFFF) \
        ^ ((iz * 805459861) & 0xFFFFFFFF)
    return h & (rows - 1)


def grid_encode_ref(tables, offsets, resolutions, dense, x01):
    """Trilinear hash-grid encoding, one point and one level at a time."""
    n_levels = len(resolutions)
    feat_dim = tables.shape[1]
    out = np.zeros((len(x01), n_levels * feat_dim))
    for p, (px, py, pz) in enumerate(np.asarray(x01, dtype=np.float64)):
        for lvl in range(n_levels):
            res = int(resolutions[lvl])
            rows = int(offsets[lvl + 1] - offsets[lvl])
            fx, fy, fz = px * res, py * res, pz * res
            cx = min(int(math.floor(fx)), res - 1)
            cy = min(int(math.floor(fy)), res - 1)
            cz = min(int(math.floor(fz)), res - 1)
            wx, wy, wz = fx - cx, fy - cy, fz - cz
            acc = np.zeros(feat_dim)
            for dz in (0, 1):
                for dy in (0, 1):
                    for dx in (0, 1):
                        ix, iy, iz = cx + dx, cy + dy, cz + dz
                        if dense[lvl]:
                            side = res + 1
                            row = ix + side * (iy + side * iz)
                        else:
                            row = hash_corner_ref(ix, iy, iz, rows)
                        w = ((wx if dx else 1.0 - wx)
                             * (wy if dy else 1.0 - wy)
                             * (wz if dz else 1.0 - wz))
                        acc += w * tables[offsets[lvl] + row].astype(np.float64)
            out[p, lvl * feat_dim:(lvl + 1) * feat_dim] = acc
    return out


def mlp_forward_ref(weights, biases, x):
    """Straight-line MLP forward: ReLU hiddens, linear output."""
    h = np.asarray(x, dtype=np.float64)
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = h @ np.asarray(w, dtype=np.float64).T + np.asarray(b, dtype=np.float64)
        if i < len(weights) - 1:
            h = np.maximum(h, 0.0)
    return h


def adam_first_step_ref(p0, grad, lr, eps, weight_decay):
    """Closed form for Adam's first update: bias correction makes the step
    -lr * sign(g) exactly (up to eps), plus the decoupled decay term."""
    mhat = grad
    vhat = grad * grad
    return p0 - lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * p0)


def psnr_ref(a, b):
    mse = float(np.mean((np.asarray(a, dtype=np.float64)
                         - np.asarray(b, dtype=np.float64)) ** 2))
    return float("inf") if mse == 0 else -10.0 * math.log10(mse)
