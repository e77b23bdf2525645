"""Open-vocabulary querying over a trained checkpoint.

A query embedding is compared against rendered language embeddings through a
pairwise softmax against canonical phrase embeddings; the scale sweep picks
the physical scale whose map peaks highest. 3D protocols: a visibility-
filtered point cloud for existence decisions, and per-view argmax pixels for
localization.
"""

from dataclasses import dataclass

import numpy as np

from .field import FieldParams, sigmoid
from .render import RenderConfig, render_language_rays, render_radiance_rays, \
    render_view, scale_along_ray, select_language_samples
from .scene import Frame, SceneDataset, contract, generate_rays, project

DEFAULT_CANONICALS = ("object", "things", "stuff", "texture")
DEFAULT_TEMPERATURE = 10.0
DEFAULT_SCALE_RANGE = 2.0
DEFAULT_SCALE_INCREMENTS = 30


@dataclass(frozen=True)
class QueryContext:
    phi_query: np.ndarray          # (d,) unit
    phi_canonicals: np.ndarray     # (m, d) unit rows
    temperature: float = DEFAULT_TEMPERATURE
    labels: tuple = DEFAULT_CANONICALS

    def __post_init__(self):
        q = np.asarray(self.phi_query, dtype=np.float64)
        c = np.atleast_2d(np.asarray(self.phi_canonicals, dtype=np.float64))
        if c.shape[0] < 1:
            raise ValueError("need at least one canonical embedding")
        if abs(np.linalg.norm(q) - 1.0) > 1e-3:
            raise ValueError("query embedding is not unit norm")
        norms = np.linalg.norm(c, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-3):
            raise ValueError("canonical embeddings must be unit norm")
        object.__setattr__(self, "phi_query", q)
        object.__setattr__(self, "phi_canonicals", c)


def relevancy_score(phi_lang, ctx: QueryContext):
    """min over canonicals of softmax(sim_query vs sim_canonical), every
    similarity multiplied by the temperature. 0.5 means no closer to the
    query than to the nearest canonical. Accepts (d,) or (n, d)."""
    phi = np.asarray(phi_lang, dtype=np.float64)
    single = phi.ndim == 1
    phi = np.atleast_2d(phi)
    sim_q = phi @ ctx.phi_query
    sim_c = phi @ ctx.phi_canonicals.T
    scores = sigmoid(ctx.temperature * (sim_q[:, None] - sim_c)).min(axis=1)
    return float(scores[0]) if single else scores


def candidate_scales(scale_range=DEFAULT_SCALE_RANGE,
                     n_increments=DEFAULT_SCALE_INCREMENTS) -> np.ndarray:
    """Evenly spaced candidates over (0, scale_range], excluding 0 itself."""
    return scale_range * np.arange(1, n_increments + 1) / n_increments


@dataclass
class RelevancyMap:
    scores: np.ndarray       # (h, w) raw scores in [0,1]
    display: np.ndarray      # (h, w) colormap-normalized: 0.5 -> 0, max -> 1
    mask: np.ndarray         # (h, w) bool, True where a score is defined
    scale: float             # world-unit scale the map was rendered at
    view_id: int
    scale_source: str = "auto"

    @property
    def max_score(self) -> float:
        return float(self.scores[self.mask].max()) if self.mask.any() else 0.0


def _display_raster(scores, mask):
    out = np.zeros_like(scores)
    if mask.any():
        top = scores[mask].max()
        if top > 0.5:
            vals = (scores - 0.5) / (top - 0.5)
            out = np.where(mask, np.clip(vals, 0.0, 1.0), 0.0)
    return out


class _ViewLanguageSweeper:
    """One radiance pass + one grid-feature pass for a (possibly strided)
    view, then cheap per-scale language heads. The heavy work is shared by
    all candidate scales because grid features do not depend on scale."""

    def __init__(self, params: FieldParams, frame: Frame, cfg: RenderConfig,
                 stride=1):
        intr = frame.intrinsics
        us = np.arange(0, intr.width, stride)
        vs = np.arange(0, intr.height, stride)
        uu, vv = np.meshgrid(us, vs)
        self.shape = (len(vs), len(us))
        origin, dirs = generate_rays(frame, uu.reshape(-1), vv.reshape(-1))
        out, batch, _ = render_radiance_rays(params, origin, dirs, cfg)
        self.acc = out.accumulation
        idx = select_language_samples(batch, cfg.n_lang_samples)
        self.w_sel = np.take_along_axis(batch.weights, idx, axis=1)
        x_sel = np.take_along_axis(batch.x, idx[..., None], axis=1)
        self.n_rays, self.k = idx.shape
        _, self.feats = params.lang_features(x_sel.reshape(-1, 3))
        self.params = params
        self.empty = self.acc <= 1e-6

    def phi_at_scale(self, s_world: float) -> np.ndarray:
        scales = np.full(self.feats.shape[0], max(float(s_world), 1e-8))
        clip_flat, _ = self.params.clip_from_features(self.feats, scales)
        clip_s = clip_flat.reshape(self.n_rays, self.k, -1)
        raw = (self.w_sel[..., None] * clip_s).sum(axis=1)
        norms = np.maximum(np.linalg.norm(raw, axis=1, keepdims=True), 1e-12)
        phi = raw / norms
        phi[self.empty] = 0.0
        return phi

    def score_map(self, ctx: QueryContext, s_world: float):
        scores = relevancy_score(self.phi_at_scale(s_world), ctx)
        scores = np.where(self.empty, 0.0, scores).reshape(self.shape)
        return scores, ~self.empty.reshape(self.shape)


def select_scale(params: FieldParams, frame: Frame, ctx: QueryContext,
                 cfg: RenderConfig, scale_range=DEFAULT_SCALE_RANGE,
                 n_increments=DEFAULT_SCALE_INCREMENTS, scene_scale=1.0,
                 stride=1):
    """Sweep the candidate scales and return (s_star_meters, RelevancyMap at
    s_star). The winning scale maximizes the single best pixel score; ties
    go to the smallest scale."""
    sweeper = _ViewLanguageSweeper(params, frame, cfg, stride=stride)
    if sweeper.empty.all():
        raise ValueError("no visible geometry in view")
    best = None
    for s_meters in candidate_scales(scale_range, n_increments):
        scores, mask = sweeper.score_map(ctx, s_meters / scene_scale)
        peak = scores[mask].max()
        if best is None or peak > best[0]:
            best = (peak, s_meters, scores, mask)
    _, s_star, scores, mask = best
    rmap = RelevancyMap(scores=scores, display=_display_raster(scores, mask),
                        mask=mask, scale=s_star / scene_scale,
                        view_id=getattr(frame, "frame_id", -1))
    return s_star, rmap


def render_relevancy_map(params: FieldParams, frame: Frame, ctx: QueryContext,
                         s_world: float, cfg: RenderConfig,
                         scale_source="auto", dataset=None, depth_maps=None,
                         min_views=5) -> RelevancyMap:
    """Full-resolution relevancy map at one world-unit scale. When a dataset
    and its rendered depth maps are supplied, pixels whose surface point was
    observed by fewer than ``min_views`` training views are masked out."""
    if s_world <= 0:
        raise ValueError("scale must be positive")
    sweeper = _ViewLanguageSweeper(params, frame, cfg, stride=1)
    scores, mask = sweeper.score_map(ctx, s_world)

    if dataset is not None and depth_maps is not None:
        out = render_view(params, frame, cfg)
        intr = frame.intrinsics
        uu, vv = np.meshgrid(np.arange(intr.width), np.arange(intr.height))
        origin, dirs = generate_rays(frame, uu.reshape(-1), vv.reshape(-1))
        pts = origin + out.depth.reshape(-1, 1) * dirs
        counts, keep = visibility_filter(pts, dataset, depth_maps,
                                         min_views=min_views)
        mask = mask & keep.reshape(mask.shape)
        scores = np.where(mask, scores, 0.0)

    return RelevancyMap(scores=scores, display=_display_raster(scores, mask),
                        mask=mask, scale=s_world,
                        view_id=getattr(frame, "frame_id", -1),
                        scale_source=scale_source)


def visibility_filter(points, dataset: SceneDataset, depth_maps: dict,
                      tau_rel=0.01, min_views=5):
    """Count, per point, the training views that actually observed it: the
    point projects in-bounds in front of the camera and its distance agrees
    with that view's rendered depth within tau_rel (relative). Returns
    (counts, keep) with keep = counts >= min_views."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    counts = np.zeros(len(pts), dtype=np.int64)
    for frame in dataset.frames:
        dm = depth_maps[frame.frame_id]
        h, w = dm.shape
        u, v, z = project(frame, pts)
        iu = np.round(u).astype(np.int64)
        iv = np.round(v).astype(np.int64)
        ok = (z < 0) & (iu >= 0) & (iu < w) & (iv >= 0) & (iv < h)
        dist = np.linalg.norm(pts - frame.pose.center, axis=1)
        d_ref = dm[np.clip(iv, 0, h - 1), np.clip(iu, 0, w - 1)]
        ok &= np.abs(dist - d_ref) <= tau_rel * np.maximum(d_ref, 1e-9)
        counts += ok
    return counts, counts >= min_views


@dataclass
class ScenePointCloud:
    points: np.ndarray       # (n, 3) world
    embeddings: np.ndarray   # (n, d) unit language embeddings at build scale
    view_counts: np.ndarray  # (n,)
    kept: np.ndarray         # (n,) bool, visibility filter verdict
    scale: float             # world-unit scale of the embeddings


def render_depth_maps(params: FieldParams, dataset: SceneDataset,
                      cfg: RenderConfig) -> dict:
    return {f.frame_id: render_view(params, f, cfg).depth
            for f in dataset.frames}


def build_pointcloud(params: FieldParams, dataset: SceneDataset,
                     cfg: RenderConfig, s_world: float, *, depth_maps=None,
                     pixel_step=4, voxel_m=0.01, scene_scale=1.0,
                     acc_threshold=0.5, min_views=5) -> ScenePointCloud:
    """Unproject rendered depth into a deduplicated surface point cloud with
    per-point embeddings and training-view counts."""
    if depth_maps is None:
        depth_maps = render_depth_maps(params, dataset, cfg)
    pts = []
    for frame in dataset.frames:
        intr = frame.intrinsics
        us = np.arange(0, intr.width, pixel_step)
        vs = np.arange(0, intr.height, pixel_step)
        uu, vv = np.meshgrid(us, vs)
        uu = uu.reshape(-1)
        vv = vv.reshape(-1)
        origin, dirs = generate_rays(frame, uu, vv)
        out, _, _ = render_radiance_rays(params, origin, dirs, cfg)
        solid = out.accumulation > acc_threshold
        pts.append(origin + out.depth[solid, None] * dirs[solid])
    pts = np.concatenate(pts, axis=0)

    vox = np.floor(pts * scene_scale / voxel_m).astype(np.int64)
    _, first = np.unique(vox, axis=0, return_index=True)
    pts = pts[np.sort(first)]

    counts, keep = visibility_filter(pts, dataset, depth_maps,
                                     min_views=min_views)
    clip, _, _ = params.eval_language(contract(pts),
                                      np.full(len(pts), float(s_world)))
    norms = np.maximum(np.linalg.norm(clip, axis=1, keepdims=True), 1e-12)
    return ScenePointCloud(points=pts, embeddings=clip / norms,
                           view_counts=counts, kept=keep, scale=float(s_world))


@dataclass
class ExistenceResult:
    exists: bool
    max_score: float
    n_points: int
    empty_cloud: bool

    def __bool__(self):
        return self.exists


def existence_check(ctx: QueryContext, cloud: ScenePointCloud,
                    threshold: float) -> ExistenceResult:
    """True iff any visibility-kept point scores above the threshold. An
    empty kept set yields False with the empty_cloud flag raised."""
    kept = cloud.embeddings[cloud.kept]
    if len(kept) == 0:
        return ExistenceResult(False, 0.0, 0, True)
    scores = relevancy_score(kept, ctx)
    top = float(scores.max())
    return ExistenceResult(top > threshold, top, len(kept), False)


def localize(params: FieldParams, frame: Frame, ctx: QueryContext,
             cfg: RenderConfig, scale_range=DEFAULT_SCALE_RANGE,
             n_increments=DEFAULT_SCALE_INCREMENTS, scene_scale=1.0,
             sweep_stride=1):
    """Argmax pixel of the relevancy map after scale selection. Ties break
    toward the lowest (v, u). Returns ((u, v), RelevancyMap)."""
    s_star, rmap = select_scale(params, frame, ctx, cfg, scale_range,
                                n_increments, scene_scale, stride=sweep_stride)
    if sweep_stride != 1:
        rmap = render_relevancy_map(params, frame, ctx,
                                    s_star / scene_scale, cfg)
    if not rmap.mask.any():
        raise ValueError("relevancy map is fully masked")
    masked = np.where(rmap.mask, rmap.scores, -np.inf)
    v, u = np.unravel_index(np.argmax(masked), masked.shape)
    return (int(u), int(v)), rmap
