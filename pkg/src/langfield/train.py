"""Joint optimization of the radiance and language components.

The loop samples rays uniformly over all pixels of all frames, draws one
image-plane scale per ray, forms three losses (photometric MSE, negative
cosine to the pyramid target, MSE to the regularizer target), and steps Adam
with decoupled weight decay under an exponential warmup schedule.

Language losses treat the compositing weights as constants: their gradients
flow only into the language component, never into density or color. Four
named RNG streams (init / rays / scales / jitter) keep every radiance-side
draw identical whether or not the language losses are enabled.
"""

import csv
import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .errors import TrainDiverged
from .field import FieldConfig, FieldParams, GradientBuffer, save_checkpoint
from .pyramid import FeaturePyramid, interpolate_language_targets, sample_dino_targets
from .render import (RaySampleBatch, RenderConfig, language_render_backward,
                     radiance_composite, radiance_render_backward,
                     render_language_rays, sample_depths)
from .scene import SceneDataset, generate_rays


@dataclass(frozen=True)
class TrainConfig:
    lambda_lang: float = 0.01
    lambda_dino: float = 1.0
    lr_start: float = 1e-2
    lr_end: float = 1e-3
    lr_warm_steps: int = 5000
    max_steps: int = 30000
    rays_per_step: int = 1024
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-9
    rng_seed: int = 0
    enable_language: bool = True
    checkpoint_every: int = 0  # 0: final checkpoint only
    log_every: int = 50
    debug_checks: bool = False
    render: RenderConfig = RenderConfig()

    def __post_init__(self):
        if self.lambda_lang <= 0:
            raise ValueError("lambda_lang must be positive")
        if not (self.lr_start > self.lr_end > 0):
            raise ValueError("need lr_start > lr_end > 0")
        if self.max_steps < 1 or self.rays_per_step < 1:
            raise ValueError("max_steps and rays_per_step must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        if "render" in d:
            r = dict(d["render"])
            if "bg_color" in r:
                r["bg_color"] = tuple(r["bg_color"])
            d["render"] = RenderConfig(**r)
        return TrainConfig(**d)


def load_train_config(path: str) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return TrainConfig.from_dict(json.load(fh))


def make_rng_streams(seed: int) -> dict:
    """Independent generators per purpose, so toggling one consumer does not
    shift the draws of another."""
    children = np.random.SeedSequence(seed).spawn(4)
    names = ("init", "rays", "scales", "jitter")
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def rgb_loss(color, color_gt) -> float:
    c = np.asarray(color, dtype=np.float64)
    g = np.asarray(color_gt, dtype=np.float64)
    return float(np.mean((c - g) ** 2))


def language_loss(phi_lang, phi_gt, lambda_lang: float) -> float:
    """Negative cosine similarity scaled by lambda; inputs must be unit."""
    a = np.asarray(phi_lang, dtype=np.float64)
    b = np.asarray(phi_gt, dtype=np.float64)
    for name, v in (("phi_lang", a), ("phi_gt", b)):
        if abs(np.linalg.norm(v) - 1.0) > 1e-3:
            raise ValueError(f"{name} is not unit norm")
    return -lambda_lang * float(a @ b)


def dino_loss(phi_dino, phi_gt, lambda_dino: float) -> float:
    a = np.asarray(phi_dino, dtype=np.float64)
    b = np.asarray(phi_gt, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return lambda_dino * float(np.mean((a - b) ** 2))


def lr_at(step: int, cfg: TrainConfig) -> float:
    frac = min(step, cfg.lr_warm_steps) / cfg.lr_warm_steps
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** frac


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------

@dataclass
class TrainingBatch:
    origins: np.ndarray      # (n, 3)
    dirs: np.ndarray         # (n, 3)
    rgb_gt: np.ndarray       # (n, 3)
    frame_ids: np.ndarray
    u: np.ndarray
    v: np.ndarray
    intrinsics: object
    s_img: np.ndarray = None     # (n,) image-plane crop fractions
    phi_gt: np.ndarray = None    # (n, d) unit targets
    dino_gt: np.ndarray = None   # (n, d_dino)


def sample_training_batch(dataset: SceneDataset, pyramid: FeaturePyramid,
                          n_rays: int, rng_rays, rng_scales,
                          with_language=True) -> TrainingBatch:
    """Rays uniform over all pixels of all frames; s_img uniform per ray.
    Scale draws come from their own stream and are skipped entirely when
    language supervision is off."""
    frames = dataset.frames
    intr = frames[0].intrinsics
    fids = rng_rays.integers(0, len(frames), n_rays)
    us = rng_rays.integers(0, intr.width, n_rays)
    vs = rng_rays.integers(0, intr.height, n_rays)

    origins = np.empty((n_rays, 3))
    dirs = np.empty((n_rays, 3))
    rgb_gt = np.empty((n_rays, 3))
    batch = TrainingBatch(origins=origins, dirs=dirs, rgb_gt=rgb_gt,
                          frame_ids=fids, u=us, v=vs, intrinsics=intr)
    if with_language:
        batch.s_img = rng_scales.uniform(pyramid.s_min, pyramid.s_max, n_rays)
        batch.phi_gt = np.empty((n_rays, pyramid.embed_dim))
        batch.dino_gt = np.empty((n_rays, pyramid.dino_dim))

    for f in np.unique(fids):
        sel = fids == f
        frame = frames[f]
        o, d = generate_rays(frame, us[sel], vs[sel])
        origins[sel] = o
        dirs[sel] = d
        rgb_gt[sel] = frame.image[vs[sel], us[sel]].astype(np.float64)
        if with_language:
            batch.phi_gt[sel] = interpolate_language_targets(
                pyramid, int(f), us[sel] + 0.5, vs[sel] + 0.5, batch.s_img[sel])
            batch.dino_gt[sel] = sample_dino_targets(pyramid, int(f),
                                                     us[sel], vs[sel])
    return batch


@dataclass
class StepResult:
    losses: dict
    color: np.ndarray
    phi_lang: np.ndarray = None
    phi_dino: np.ndarray = None
    empty_mask: np.ndarray = None


def evaluate_batch(params: FieldParams, batch: TrainingBatch, tcfg: TrainConfig,
                   depths: np.ndarray, frozen_lang_weights=None,
                   grads: GradientBuffer = None) -> StepResult:
    """Losses (and optionally gradients) for one batch at fixed sample depths.

    Language compositing uses ``frozen_lang_weights`` when given, else the
    weights recomputed from the current density; either way the weights are a
    constant for the language losses. Holding depths and language weights
    fixed makes this function finite-difference checkable parameter-wise.
    """
    rcfg = tcfg.render
    out, rsb, rctx = radiance_composite(params, batch.origins, batch.dirs,
                                        depths, rcfg, want_ctx=grads is not None)
    n = len(batch.dirs)
    losses = {"rgb": rgb_loss(out.color, batch.rgb_gt), "lang": 0.0, "dino": 0.0}
    if grads is not None:
        g_color = 2.0 * (out.color - batch.rgb_gt) / (n * 3)
        radiance_render_backward(params, rsb, rctx, rcfg, g_color, grads)

    result = StepResult(losses=losses, color=out.color)
    if tcfg.enable_language and batch.s_img is not None:
        w_lang = rsb.weights if frozen_lang_weights is None else frozen_lang_weights
        rsb_l = RaySampleBatch(t=rsb.t, delta=rsb.delta, x=rsb.x, sigma=rsb.sigma,
                               alpha=rsb.alpha, trans=rsb.trans, weights=w_lang)
        phi, dino, empty, lctx = render_language_rays(
            params, rsb_l, rcfg, s_img=batch.s_img, intrinsics=batch.intrinsics,
            want_ctx=grads is not None)
        live = ~empty
        n_live = max(int(live.sum()), 1)
        losses["lang"] = -tcfg.lambda_lang * float(
            np.sum(phi[live] * batch.phi_gt[live]) / n_live)
        diff = dino - batch.dino_gt
        diff[empty] = 0.0
        d_dino = dino.shape[1]
        losses["dino"] = tcfg.lambda_dino * float(
            np.sum(diff ** 2) / (n_live * d_dino))
        if grads is not None:
            g_phi = np.where(live[:, None],
                             -tcfg.lambda_lang * batch.phi_gt / n_live, 0.0)
            g_dino = 2.0 * tcfg.lambda_dino * diff / (n_live * d_dino)
            language_render_backward(params, lctx, g_phi, g_dino, grads)
        result.phi_lang, result.phi_dino, result.empty_mask = phi, dino, empty
    losses["total"] = losses["rgb"] + losses["lang"] + losses["dino"]
    return result


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class AdamState:
    def __init__(self, params: FieldParams):
        self.m = {name: np.zeros(b.shape) for name, b in params.param_blocks()}
        self.v = {name: np.zeros(b.shape) for name, b in params.param_blocks()}
        self.t = 0


def adam_step(params: FieldParams, grads: GradientBuffer, state: AdamState,
              lr: float, cfg: TrainConfig) -> None:
    """Bias-corrected Adam with decoupled weight decay; parameters stay f32,
    the update math runs in f64."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, block in params.param_blocks():
        g = grads.get(name)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in block {name}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        p64 = block.astype(np.float64)
        p64 -= lr * (update + cfg.weight_decay * p64)
        block[:] = p64.astype(np.float32)


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------

def train(dataset: SceneDataset, pyramid: FeaturePyramid,
          field_config: FieldConfig, tcfg: TrainConfig, *,
          checkpoint_path=None, trace_path=None, log=None):
    """Run the full loop; returns (params, trace rows). Raises TrainDiverged
    on a non-finite loss with the offending step in the message."""
    streams = make_rng_streams(tcfg.rng_seed)
    params = FieldParams(field_config, streams["init"])
    state = AdamState(params)
    grads = GradientBuffer(params)
    trace = []
    rad_names = [name for name, _ in params.param_blocks()
                 if not FieldParams.is_language_block(name)]

    for step in range(tcfg.max_steps):
        batch = sample_training_batch(dataset, pyramid, tcfg.rays_per_step,
                                      streams["rays"], streams["scales"],
                                      with_language=tcfg.enable_language)
        depths = sample_depths(params, batch.origins, batch.dirs, tcfg.render,
                               streams["jitter"])
        grads.zero()
        res = evaluate_batch(params, batch, tcfg, depths, grads=grads)
        if tcfg.debug_checks and tcfg.enable_language:
            rgb_only = GradientBuffer(params)
            saved = batch.s_img
            batch.s_img = None
            evaluate_batch(params, batch, tcfg, depths, grads=rgb_only)
            batch.s_img = saved
            for name in rad_names:
                if np.any(grads.get(name) != rgb_only.get(name)):
                    raise AssertionError(
                        f"language losses leaked into radiance block {name}")

        losses = res.losses
        if not np.isfinite(losses["total"]):
            frames = np.unique(batch.frame_ids).tolist()
            raise TrainDiverged(step, losses,
                                detail=f"batch frames {frames}")
        lr = lr_at(step, tcfg)
        adam_step(params, grads, state, lr, tcfg)
        trace.append({"step": step, "rgb": losses["rgb"], "lang": losses["lang"],
                      "dino": losses["dino"], "lr": lr})
        if log is not None and (step % tcfg.log_every == 0
                                or step == tcfg.max_steps - 1):
            log(f"step {step:6d}  rgb {losses['rgb']:.6f}  "
                f"lang {losses['lang']:+.6f}  dino {losses['dino']:.6f}  "
                f"lr {lr:.2e}")
        if (checkpoint_path and tcfg.checkpoint_every
                and (step + 1) % tcfg.checkpoint_every == 0):
            save_checkpoint(checkpoint_path, params, step + 1)

    if checkpoint_path:
        save_checkpoint(checkpoint_path, params, tcfg.max_steps)
    if trace_path:
        write_trace(trace_path, trace)
    return params, trace


def write_trace(path: str, trace: list) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["step", "rgb", "lang", "dino", "lr"])
        writer.writeheader()
        writer.writerows(trace)
