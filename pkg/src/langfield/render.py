"""Ray sampling and volumetric compositing.

Two-stage sampler: stratified-uniform coarse depths, a density-only pass,
then inverse-CDF resampling over the coarse bins, union-sorted. Radiance
composites over every sample; language/regularizer outputs composite over
the top-weight subset of samples, and the language embedding is normalized
to the unit sphere after compositing. Compositing weights follow the usual
alpha/transmittance discretization, with analytic backward.
"""

from dataclasses import dataclass

import numpy as np

from .scene import CameraIntrinsics, Frame, contract, generate_rays


@dataclass(frozen=True)
class RenderConfig:
    near: float = 0.1
    far: float = 10.0
    n_coarse: int = 32
    n_fine: int = 16
    n_lang_samples: int = 24
    bg_color: tuple = (0.0, 0.0, 0.0)
    scale_mode: str = "frustum"  # or "printed": the reciprocal-depth variant

    def __post_init__(self):
        if not (0 < self.near < self.far):
            raise ValueError("need 0 < near < far")
        if self.n_coarse < 1:
            raise ValueError("n_coarse must be >= 1")
        if self.scale_mode not in ("frustum", "printed"):
            raise ValueError(f"unknown scale_mode {self.scale_mode!r}")


@dataclass
class RaySampleBatch:
    """Per-ray sample state; every array is (n_rays, n_samples[, 3])."""
    t: np.ndarray
    delta: np.ndarray
    x: np.ndarray          # contracted positions
    sigma: np.ndarray
    alpha: np.ndarray
    trans: np.ndarray      # T_i, transmittance before sample i
    weights: np.ndarray


@dataclass
class RenderedOutputs:
    color: np.ndarray          # (n, 3)
    depth: np.ndarray          # (n,)
    accumulation: np.ndarray   # (n,)
    phi_lang: np.ndarray = None
    phi_dino: np.ndarray = None
    empty_mask: np.ndarray = None


def sample_coarse(near, far, n_bins, n_rays, rng=None):
    """Stratified depths, one per uniform bin; bin midpoints when rng is None."""
    edges = np.linspace(near, far, n_bins + 1)
    width = (far - near) / n_bins
    if rng is None:
        offs = np.full((n_rays, n_bins), 0.5)
    else:
        offs = rng.random((n_rays, n_bins))
    return edges[:-1] + offs * width


def resample_fine(weights, near, far, n_fine, rng=None):
    """Inverse-CDF depths proportional to per-bin coarse weights. Rays whose
    weights sum to ~zero fall back to a uniform pdf."""
    n_rays, n_bins = weights.shape
    w = np.maximum(np.asarray(weights, dtype=np.float64), 0.0)
    row_sum = w.sum(axis=1, keepdims=True)
    w = np.where(row_sum > 1e-12, w, 1.0)
    pdf = w / w.sum(axis=1, keepdims=True)
    cdf = np.cumsum(pdf, axis=1)
    cdf[:, -1] = 1.0

    if rng is None:
        u = np.broadcast_to((np.arange(n_fine) + 0.5) / n_fine, (n_rays, n_fine))
    else:
        u = (np.arange(n_fine) + rng.random((n_rays, n_fine))) / n_fine
    idx = np.empty((n_rays, n_fine), dtype=np.int64)
    for r in range(n_rays):
        idx[r] = np.searchsorted(cdf[r], u[r], side="right")
    idx = np.minimum(idx, n_bins - 1)

    padded = np.concatenate([np.zeros((n_rays, 1)), cdf], axis=1)
    cdf_lo = np.take_along_axis(padded, idx, axis=1)
    bin_mass = np.take_along_axis(pdf, idx, axis=1)
    frac = np.where(bin_mass > 0, (u - cdf_lo) / np.where(bin_mass > 0, bin_mass, 1.0), 0.5)
    edges = np.linspace(near, far, n_bins + 1)
    t = edges[idx] + np.clip(frac, 0.0, 1.0) * (far - near) / n_bins
    return np.clip(t, near, np.nextafter(far, near))


def union_sorted(*depth_sets):
    """Merge per-ray depth arrays, sorted, exact ties nudged strictly apart."""
    t = np.sort(np.concatenate(depth_sets, axis=1), axis=1)
    d = np.diff(t, axis=1)
    ties = d <= 0.0
    if np.any(ties):
        bump = np.cumsum(ties, axis=1) * 1e-9
        t[:, 1:] = t[:, 1:] + bump
    return t


def deltas_from_depths(t, far):
    d = np.diff(t, axis=1)
    last = np.maximum(far - t[:, -1:], 1e-9)
    return np.concatenate([d, last], axis=1)


def compute_weights(sigma, delta):
    """alpha_i = 1-exp(-sigma_i delta_i); T_i = prod_{j<i}(1-alpha_j);
    w_i = T_i alpha_i. Returns (trans, weights, alpha)."""
    sigma = np.asarray(sigma, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(sigma < 0):
        raise ValueError("negative density")
    if np.any(delta <= 0):
        raise ValueError("non-positive delta")
    alpha = 1.0 - np.exp(-sigma * delta)
    one_minus = 1.0 - alpha
    trans = np.cumprod(one_minus, axis=-1)
    trans = np.concatenate(
        [np.ones_like(trans[..., :1]), trans[..., :-1]], axis=-1)
    weights = trans * alpha
    return trans, weights, alpha


def compute_weights_backward(grad_w, trans, alpha, delta, weights):
    """d(loss)/d(sigma) given d(loss)/d(weights).

    dL/dsigma_i = delta_i * (T_{i+1} g_i - sum_{k>i} w_k g_k)."""
    p = weights * grad_w
    suffix = np.cumsum(p[..., ::-1], axis=-1)[..., ::-1] - p
    t_next = trans * (1.0 - alpha)
    return delta * (t_next * grad_w - suffix)


def scale_along_ray(s_img, intrinsics: CameraIntrinsics, t, mode="frustum"):
    """Physical supervision scale at depth t for an image-plane crop fraction
    s_img. Frustum mode back-projects the crop side through the pinhole
    (grows with t); "printed" mode is the reciprocal variant kept for
    comparison."""
    s_img = np.asarray(s_img, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= 0):
        raise ValueError("depth must be positive")
    crop_px = s_img * min(intrinsics.width, intrinsics.height)
    if mode == "frustum":
        return crop_px * t / intrinsics.f_xy
    if mode == "printed":
        return crop_px * intrinsics.f_xy / t
    raise ValueError(f"unknown scale mode {mode!r}")


# ---------------------------------------------------------------------------
# ray pipelines
# ---------------------------------------------------------------------------

def sample_depths(params, origins, dirs, cfg: RenderConfig, rng=None):
    """Two-stage depth sampling: stratified coarse bins, density-only pass,
    inverse-CDF fine depths, union-sorted. rng=None is fully deterministic."""
    dirs = np.asarray(dirs, dtype=np.float64)
    n_rays = dirs.shape[0]
    origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), (n_rays, 3))
    t_coarse = sample_coarse(cfg.near, cfg.far, cfg.n_coarse, n_rays, rng)
    if cfg.n_fine <= 0:
        return t_coarse
    x_c = contract(origins[:, None, :] + t_coarse[..., None] * dirs[:, None, :])
    sigma_c = params.eval_density(x_c.reshape(-1, 3)).reshape(n_rays, cfg.n_coarse)
    _, w_c, _ = compute_weights(sigma_c, deltas_from_depths(t_coarse, cfg.far))
    t_fine = resample_fine(w_c, cfg.near, cfg.far, cfg.n_fine, rng)
    return union_sorted(t_coarse, t_fine)


def radiance_composite(params, origins, dirs, t, cfg: RenderConfig,
                       want_ctx=False):
    """Evaluate the radiance component at fixed depths t and composite.

    origins: (3,) shared or (n,3); dirs: (n,3) unit. Returns
    (RenderedOutputs, RaySampleBatch, ctx-or-None)."""
    dirs = np.asarray(dirs, dtype=np.float64)
    n_rays = dirs.shape[0]
    origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), (n_rays, 3))
    delta = deltas_from_depths(t, cfg.far)
    x = contract(origins[:, None, :] + t[..., None] * dirs[:, None, :])
    n_samples = t.shape[1]

    dirs_flat = np.repeat(dirs, n_samples, axis=0)
    c_flat, sigma_flat, ctx = params.eval_radiance(x.reshape(-1, 3), dirs_flat)
    sigma = sigma_flat.reshape(n_rays, n_samples)
    colors = c_flat.reshape(n_rays, n_samples, 3)
    trans, weights, alpha = compute_weights(sigma, delta)

    acc = weights.sum(axis=1)
    bg = np.asarray(cfg.bg_color, dtype=np.float64)
    color = (weights[..., None] * colors).sum(axis=1) + bg * (1.0 - acc[:, None])
    depth = np.where(acc > 1e-6,
                     (weights * t).sum(axis=1) / np.maximum(acc, 1e-12),
                     cfg.far)

    batch = RaySampleBatch(t=t, delta=delta, x=x, sigma=sigma, alpha=alpha,
                           trans=trans, weights=weights)
    out = RenderedOutputs(color=color, depth=depth, accumulation=acc)
    if not want_ctx:
        ctx = None
    else:
        ctx = {"field": ctx, "colors": colors, "dirs": dirs}
    return out, batch, ctx


def render_radiance_rays(params, origins, dirs, cfg: RenderConfig, rng=None,
                         want_ctx=False):
    """sample_depths + radiance_composite in one call."""
    t = sample_depths(params, origins, dirs, cfg, rng)
    return radiance_composite(params, origins, dirs, t, cfg, want_ctx)


def select_language_samples(batch: RaySampleBatch, n_keep: int):
    """Indices (n_rays, k) of the top-weight samples per ray, in depth order."""
    n_samples = batch.t.shape[1]
    k = min(n_keep, n_samples)
    if k == n_samples:
        idx = np.broadcast_to(np.arange(n_samples), batch.t.shape).copy()
    else:
        part = np.argpartition(batch.weights, n_samples - k, axis=1)[:, n_samples - k:]
        idx = np.sort(part, axis=1)
    return idx


def render_language_rays(params, batch: RaySampleBatch, cfg: RenderConfig,
                         *, s_world=None, s_img=None, intrinsics=None,
                         want_ctx=False):
    """Composite language/regularizer outputs over the top-weight samples.

    Scale per sample comes either from a constant world-unit scale (query
    path, ``s_world``) or from the per-ray image-plane fraction ``s_img``
    back-projected along the ray (training path). The composited language
    embedding is unit-normalized; rays with accumulation <= 1e-6 are flagged
    empty and left zero."""
    idx = select_language_samples(batch, cfg.n_lang_samples)
    n_rays, k = idx.shape
    t_sel = np.take_along_axis(batch.t, idx, axis=1)
    w_sel = np.take_along_axis(batch.weights, idx, axis=1)
    x_sel = np.take_along_axis(batch.x, idx[..., None], axis=1)

    if s_world is not None:
        scales = np.full((n_rays, k), float(s_world))
    else:
        if s_img is None or intrinsics is None:
            raise ValueError("need s_world, or s_img with intrinsics")
        s_img = np.asarray(s_img, dtype=np.float64).reshape(n_rays, 1)
        scales = scale_along_ray(s_img, intrinsics, t_sel, cfg.scale_mode)
    scales = np.maximum(scales, 1e-8)

    clip_flat, dino_flat, field_ctx = params.eval_language(
        x_sel.reshape(-1, 3), scales.reshape(-1))
    d = clip_flat.shape[1]
    clip_s = clip_flat.reshape(n_rays, k, d)
    dino_s = dino_flat.reshape(n_rays, k, -1)

    acc = batch.weights.sum(axis=1)
    empty = acc <= 1e-6
    raw = (w_sel[..., None] * clip_s).sum(axis=1)
    norms = np.linalg.norm(raw, axis=1)
    safe = np.maximum(norms, 1e-12)
    phi_lang = np.where(empty[:, None], 0.0, raw / safe[:, None])
    phi_dino = (w_sel[..., None] * dino_s).sum(axis=1)
    phi_dino[empty] = 0.0

    ctx = None
    if want_ctx:
        ctx = {"field": field_ctx, "w_sel": w_sel, "raw": raw, "norm": safe,
               "empty": empty, "shape": (n_rays, k)}
    return phi_lang, phi_dino, empty, ctx


def language_render_backward(params, ctx, grad_phi_lang, grad_phi_dino, grads):
    """Backprop through compositing + normalization into language params.
    Compositing weights are treated as constants here: language gradients
    never reach the radiance component."""
    n_rays, k = ctx["shape"]
    w_sel = ctx["w_sel"]
    raw, norm, empty = ctx["raw"], ctx["norm"], ctx["empty"]
    live = ~empty

    phi = raw / norm[:, None]
    g = np.asarray(grad_phi_lang, dtype=np.float64)
    g_raw = (g - phi * (phi * g).sum(axis=1, keepdims=True)) / norm[:, None]
    g_raw[empty] = 0.0
    g_clip = (w_sel[..., None] * g_raw[:, None, :]).reshape(n_rays * k, -1)

    g_dino = np.asarray(grad_phi_dino, dtype=np.float64).copy()
    g_dino[empty] = 0.0
    g_dino = (w_sel[..., None] * g_dino[:, None, :]).reshape(n_rays * k, -1)

    params.language_backward(ctx["field"], g_clip, g_dino, grads)
    return live


def radiance_render_backward(params, batch: RaySampleBatch, ctx, cfg,
                             grad_color, grads):
    """Backprop the composited color into the radiance component: through
    per-sample colors directly and through the weights into density."""
    colors = ctx["colors"]
    n_rays, n_samples = batch.t.shape
    g_color = np.asarray(grad_color, dtype=np.float64)
    g_samples = batch.weights[..., None] * g_color[:, None, :]
    bg = np.asarray(cfg.bg_color, dtype=np.float64)
    g_w = ((colors - bg) * g_color[:, None, :]).sum(axis=2)
    g_sigma = compute_weights_backward(g_w, batch.trans, batch.alpha,
                                       batch.delta, batch.weights)
    params.radiance_backward(ctx["field"], g_samples.reshape(-1, 3),
                             g_sigma.reshape(-1), grads)


# ---------------------------------------------------------------------------
# view-level rendering
# ---------------------------------------------------------------------------

def _frame_ray_grid(frame: Frame):
    intr = frame.intrinsics
    u, v = np.meshgrid(np.arange(intr.width), np.arange(intr.height))
    return u.reshape(-1), v.reshape(-1)


def render_view(params, frame: Frame, cfg: RenderConfig, chunk=4096):
    """Full RGB/depth/accumulation image for a dataset camera. Row 0 is the
    bottom of the image, matching the scene module's convention."""
    intr = frame.intrinsics
    u, v = _frame_ray_grid(frame)
    origin, dirs = generate_rays(frame, u, v)
    color = np.empty((len(u), 3))
    depth = np.empty(len(u))
    acc = np.empty(len(u))
    for lo in range(0, len(u), chunk):
        hi = min(lo + chunk, len(u))
        out, _, _ = render_radiance_rays(params, origin, dirs[lo:hi], cfg)
        color[lo:hi] = out.color
        depth[lo:hi] = out.depth
        acc[lo:hi] = out.accumulation
    shape = (intr.height, intr.width)
    return RenderedOutputs(color=color.reshape(*shape, 3),
                           depth=depth.reshape(shape),
                           accumulation=acc.reshape(shape))


def render_view_language(params, frame: Frame, cfg: RenderConfig, s_world,
                         chunk=1024, stride=1):
    """Per-pixel composited language embeddings at one world-unit scale.
    ``stride`` renders every Nth pixel (used by scale sweeps)."""
    intr = frame.intrinsics
    us = np.arange(0, intr.width, stride)
    vs = np.arange(0, intr.height, stride)
    u, v = np.meshgrid(us, vs)
    u = u.reshape(-1)
    v = v.reshape(-1)
    origin, dirs = generate_rays(frame, u, v)
    d = params.config.embed_dim
    phi = np.empty((len(u), d))
    empty = np.empty(len(u), dtype=bool)
    acc = np.empty(len(u))
    for lo in range(0, len(u), chunk):
        hi = min(lo + chunk, len(u))
        out, batch, _ = render_radiance_rays(params, origin, dirs[lo:hi], cfg)
        p, _, e, _ = render_language_rays(params, batch, cfg, s_world=s_world)
        phi[lo:hi] = p
        empty[lo:hi] = e
        acc[lo:hi] = out.accumulation
    shape = (len(vs), len(us))
    return phi.reshape(*shape, d), empty.reshape(shape), acc.reshape(shape)
