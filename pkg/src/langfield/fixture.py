"""Synthetic two-box scene generator.

A closed-form scene (ground slab, a painted mat, two colored boxes) rendered
analytically from a ring of cameras. Every pixel hits geometry; every pixel
belongs to exactly one of four semantic regions. The generator also builds
the supervision container: per-crop embedding targets are area-weighted
averages of fixed unit region vectors (then renormalized), and the
pixel-aligned feature maps are per-pixel region one-hots. Because targets
are produced by the same closed form the tests score against, the generator
doubles as the end-to-end oracle.

World frame: z up, ground top surface at z = 0. Cameras look at the origin
from a ring. All units are scene-meters (scene_scale = 1).
"""

import json
import os

import numpy as np

from .field import FieldConfig
from .hashgrid import HashGridConfig
from .mlp import MLPConfig
from .pyramid import (DinoFeatureMap, FeaturePyramid, LevelGrid, PyramidConfig,
                      build_grid_layout, level_crop_sides_px, write_pyramid)
from .render import RenderConfig
from .scene import CameraIntrinsics, pinhole_directions, save_png_rgb01
from .train import TrainConfig

REGION_NAMES = ("floor", "mat", "box_a", "box_b")
EMBED_DIM = 8
DINO_DIM = 4

_FLOOR_LO = np.array([-6.0, -6.0, -0.12])
_FLOOR_HI = np.array([6.0, 6.0, 0.0])
_MAT_RECT = (-1.2, -0.3, -1.2, -0.3)  # x0, x1, y0, y1 on the floor top
_BOX_A_LO = np.array([0.2, -0.6, 0.0])
_BOX_A_HI = np.array([0.7, -0.1, 0.5])
_BOX_B_LO = np.array([-0.7, 0.3, 0.0])
_BOX_B_HI = np.array([-0.1, 0.8, 0.4])

REGION_COLORS = np.array([
    (0.55, 0.55, 0.58),   # floor
    (0.12, 0.25, 0.85),   # mat
    (0.85, 0.12, 0.10),   # box_a
    (0.10, 0.70, 0.20),   # box_b
])


def region_vectors() -> np.ndarray:
    """One fixed unit vector per semantic region: one-hot dims 0..3."""
    return np.eye(EMBED_DIM, dtype=np.float64)[:4]


def negative_vectors() -> np.ndarray:
    """Held-out vectors orthogonal to every region vector: dims 4..7."""
    return np.eye(EMBED_DIM, dtype=np.float64)[4:8]


def canonical_vectors() -> np.ndarray:
    """Four 'average prompt' vectors: equal blend of all regions plus a small
    distinct component, so region similarity sits near 0.5 for each."""
    base = 0.5 * region_vectors().sum(axis=0)
    out = np.empty((4, EMBED_DIM))
    for i in range(4):
        v = base + 0.2 * np.eye(EMBED_DIM)[4 + i]
        out[i] = v / np.linalg.norm(v)
    return out


def dino_vectors() -> np.ndarray:
    return np.eye(DINO_DIM, dtype=np.float64)


# ---------------------------------------------------------------------------
# analytic rendering
# ---------------------------------------------------------------------------

def _aabb_enter(origins, dirs, lo, hi):
    """First-intersection distance per ray with an axis-aligned box; inf when
    missed. Origins assumed outside the box."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (lo - origins) * inv
        t2 = (hi - origins) * inv
    tmin = np.minimum(t1, t2).max(axis=-1)
    tmax = np.maximum(t1, t2).min(axis=-1)
    hit = (tmax >= tmin) & (tmax > 0) & (tmin > 0)
    return np.where(hit, tmin, np.inf)


def trace_scene(origins, dirs):
    """Closed-form scene intersection. Returns (t, region_id); every ray must
    hit (the floor is sized to cover the full frustum of the camera ring)."""
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    t_floor = _aabb_enter(origins, dirs, _FLOOR_LO, _FLOOR_HI)
    t_a = _aabb_enter(origins, dirs, _BOX_A_LO, _BOX_A_HI)
    t_b = _aabb_enter(origins, dirs, _BOX_B_LO, _BOX_B_HI)

    with np.errstate(invalid="ignore"):  # inf*0 on escaped rays; caught below
        p_floor = origins + t_floor[..., None] * dirs
    x0, x1, y0, y1 = _MAT_RECT
    on_mat = ((p_floor[..., 0] >= x0) & (p_floor[..., 0] <= x1)
              & (p_floor[..., 1] >= y0) & (p_floor[..., 1] <= y1))
    floor_region = np.where(on_mat, 1, 0)

    all_t = np.stack([t_floor, t_a, t_b], axis=-1)
    best = np.argmin(all_t, axis=-1)
    t = np.take_along_axis(all_t, best[..., None], axis=-1)[..., 0]
    if not np.all(np.isfinite(t)):
        raise RuntimeError("a camera ray escaped the scene; enlarge the floor")
    region = np.where(best == 1, 2, np.where(best == 2, 3, floor_region))
    return t, region


def ring_pose(angle: float, radius=2.4, height=2.0, target=(0.0, 0.0, 0.0)):
    """Camera-to-world matrix for a camera on the ring looking at the target,
    world z as up."""
    eye = np.array([radius * np.cos(angle), radius * np.sin(angle), height])
    target = np.asarray(target, dtype=np.float64)
    z_cam = eye - target
    z_cam /= np.linalg.norm(z_cam)
    up = np.array([0.0, 0.0, 1.0])
    x_cam = np.cross(up, z_cam)
    x_cam /= np.linalg.norm(x_cam)
    y_cam = np.cross(z_cam, x_cam)
    mat = np.eye(4)
    mat[:3, 0] = x_cam
    mat[:3, 1] = y_cam
    mat[:3, 2] = z_cam
    mat[:3, 3] = eye
    return mat


def render_ground_truth(intr: CameraIntrinsics, c2w: np.ndarray):
    """(image, depth, region) arrays, row 0 at the image bottom."""
    u, v = np.meshgrid(np.arange(intr.width), np.arange(intr.height))
    d_cam = pinhole_directions(intr, u.reshape(-1), v.reshape(-1))
    dirs = d_cam @ c2w[:3, :3].T
    origin = c2w[:3, 3]
    t, region = trace_scene(origin[None, :], dirs)
    shape = (intr.height, intr.width)
    image = REGION_COLORS[region].reshape(*shape, 3)
    return image, t.reshape(shape), region.reshape(shape).astype(np.int8)


# ---------------------------------------------------------------------------
# supervision targets
# ---------------------------------------------------------------------------

def _region_integral(region: np.ndarray) -> np.ndarray:
    """(h, w) region ids -> (h+1, w+1, 4) inclusion-count integral image."""
    onehot = np.eye(len(REGION_NAMES))[region]
    inte = np.zeros((region.shape[0] + 1, region.shape[1] + 1, len(REGION_NAMES)))
    inte[1:, 1:] = onehot.cumsum(axis=0).cumsum(axis=1)
    return inte


def _crop_pixel_range(center: float, side: int, dim: int):
    lo = int(np.floor(center - side / 2.0 + 0.5))
    hi = int(np.floor(center + side / 2.0 + 0.5))
    return max(lo, 0), min(hi, dim)


def pyramid_targets_for_frame(region: np.ndarray, config: PyramidConfig,
                              width: int, height: int) -> list:
    """LevelGrid list for one frame: per crop, the unit-normalized
    region-area-weighted blend of region vectors."""
    inte = _region_integral(region)
    vecs = region_vectors()
    sides = level_crop_sides_px(config, width, height)
    grids = []
    for side in sides:
        cx, cy = build_grid_layout(width, height, int(side), config.overlap)
        emb = np.empty((len(cy), len(cx), EMBED_DIM))
        for iy, c_y in enumerate(cy):
            r0, r1 = _crop_pixel_range(c_y, int(side), height)
            for ix, c_x in enumerate(cx):
                c0, c1 = _crop_pixel_range(c_x, int(side), width)
                counts = (inte[r1, c1] - inte[r0, c1]
                          - inte[r1, c0] + inte[r0, c0])
                v = counts @ vecs
                emb[iy, ix] = v / np.linalg.norm(v)
        grids.append(LevelGrid(int(side), cx, cy, emb.astype(np.float32)))
    return grids


def dino_map_for_frame(region: np.ndarray, width: int, height: int):
    return DinoFeatureMap(
        features=dino_vectors()[region].astype(np.float32),
        image_width=width, image_height=height)


# ---------------------------------------------------------------------------
# fixture assembly
# ---------------------------------------------------------------------------

def fixture_field_config() -> FieldConfig:
    """Desk-scale component sizes tuned so the end-to-end run fits a CPU
    budget while keeping the full architecture shape."""
    return FieldConfig(
        embed_dim=EMBED_DIM, dino_dim=DINO_DIM, geo_dim=7,
        lang_grid=HashGridConfig(n_levels=8, base_resolution=16,
                                 max_resolution=128, table_size=2 ** 15,
                                 features_per_level=4),
        rad_grid=HashGridConfig(n_levels=12, base_resolution=16,
                                max_resolution=256, table_size=2 ** 15,
                                features_per_level=2),
        clip_head=MLPConfig(hidden_layers=3, hidden_width=48, out_dim=EMBED_DIM),
        dino_head=MLPConfig(hidden_layers=1, hidden_width=48, out_dim=DINO_DIM),
        density_head=MLPConfig(hidden_layers=1, hidden_width=64, out_dim=8),
        color_head=MLPConfig(hidden_layers=2, hidden_width=64, out_dim=3),
    )


def fixture_train_config(max_steps=3000, seed=0) -> TrainConfig:
    # the near plane must push sampling into the central bowl that every
    # camera observes; air closer to the ring is crossed by so few views
    # that view-dependent color can fake any density living there
    return TrainConfig(
        max_steps=max_steps, rays_per_step=512, rng_seed=seed,
        render=RenderConfig(near=2.0, far=10.0, n_coarse=16, n_fine=16,
                            n_lang_samples=16))


def fixture_camera_poses(n_train: int) -> list:
    """Three camera tiers: two oblique rings plus a steep overhead ring.
    Every sampled point past the near plane then sits in the crossfire of
    most cameras, which is what keeps unobserved air from hiding density."""
    n_top = n_train // 5
    n_low = (n_train - n_top + 1) // 2
    n_mid = n_train - n_low - n_top
    poses = [ring_pose(2.0 * np.pi * i / max(n_low, 1))
             for i in range(n_low)]
    poses += [ring_pose(2.0 * np.pi * (i + 0.5) / max(n_mid, 1),
                        radius=2.0, height=2.8) for i in range(n_mid)]
    poses += [ring_pose(2.0 * np.pi * (i + 0.25) / max(n_top, 1),
                        radius=0.8, height=3.6) for i in range(n_top)]
    return poses


def _write_manifest(path, intr: CameraIntrinsics, mats, file_paths):
    doc = {"fl_x": intr.fx, "fl_y": intr.fy, "cx": intr.cx, "cy": intr.cy,
           "w": intr.width, "h": intr.height, "scene_scale": 1.0,
           "frames": [{"file_path": fp,
                       "transform_matrix": [float(x) for x in m.reshape(-1)]}
                      for fp, m in zip(file_paths, mats)]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def make_fixture(out_dir: str, n_train=20, n_eval=3, width=128, height=96,
                 max_steps=3000, seed=0) -> dict:
    """Generate the full fixture: train/eval datasets, embedding container,
    query vectors, region maps, and a ready-to-run config."""
    os.makedirs(out_dir, exist_ok=True)
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "eval", "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "regions"), exist_ok=True)

    intr = CameraIntrinsics(fx=110.0, fy=110.0, cx=width / 2.0, cy=height / 2.0,
                            width=width, height=height)
    pcfg = PyramidConfig(embed_dim=EMBED_DIM)

    train_mats, train_files = [], []
    levels_per_frame, dino_per_frame = [], []
    for i, c2w in enumerate(fixture_camera_poses(n_train)):
        image, depth, region = render_ground_truth(intr, c2w)
        rel = f"images/frame_{i:03d}.png"
        save_png_rgb01(os.path.join(out_dir, rel), image)
        np.save(os.path.join(out_dir, "regions", f"train_{i:03d}.npy"), region)
        train_mats.append(c2w)
        train_files.append(rel)
        levels_per_frame.append(
            pyramid_targets_for_frame(region, pcfg, width, height))
        dino_per_frame.append(dino_map_for_frame(region, width, height))
    _write_manifest(os.path.join(out_dir, "transforms.json"), intr,
                    train_mats, train_files)

    eval_mats, eval_files = [], []
    for i in range(n_eval):
        # offset so no eval pose coincides with a training camera
        angle = 2.0 * np.pi * (i + 1.0 / 6.0) / n_eval
        c2w = ring_pose(angle)
        image, depth, region = render_ground_truth(intr, c2w)
        rel = f"images/eval_{i:03d}.png"
        save_png_rgb01(os.path.join(out_dir, "eval", rel), image)
        np.save(os.path.join(out_dir, "regions", f"eval_{i:03d}.npy"), region)
        np.save(os.path.join(out_dir, "regions", f"eval_depth_{i:03d}.npy"), depth)
        eval_mats.append(c2w)
        eval_files.append(rel)
    _write_manifest(os.path.join(out_dir, "eval", "transforms.json"), intr,
                    eval_mats, eval_files)

    pyr = FeaturePyramid(width, height, pcfg.overlap,
                         levels_per_frame, dino_per_frame)
    emb_path = os.path.join(out_dir, "embeddings.lerf")
    write_pyramid(emb_path, pyr)

    canon = canonical_vectors()
    queries = {
        "embed_dim": EMBED_DIM,
        "temperature": 10.0,
        "region_names": list(REGION_NAMES),
        "positives": {name: region_vectors()[i].tolist()
                      for i, name in enumerate(REGION_NAMES)},
        "negatives": {f"neg_{i}": v.tolist()
                      for i, v in enumerate(negative_vectors())},
        "canonicals": {name: canon[i].tolist()
                       for i, name in enumerate(
                           ("object", "things", "stuff", "texture"))},
    }
    with open(os.path.join(out_dir, "queries.json"), "w", encoding="utf-8") as fh:
        json.dump(queries, fh, indent=2)
        fh.write("\n")

    sides = level_crop_sides_px(pcfg, width, height)
    layout = {"width": width, "height": height, "overlap": pcfg.overlap,
              "n_levels": pcfg.n_levels, "embed_dim": EMBED_DIM,
              "dino_dim": DINO_DIM, "crop_sides_px": sides.tolist(),
              "grids": [[len(ax) for ax in build_grid_layout(
                  width, height, int(s), pcfg.overlap)] for s in sides],
              "region_names": list(REGION_NAMES)}
    with open(os.path.join(out_dir, "layout.json"), "w", encoding="utf-8") as fh:
        json.dump(layout, fh, indent=2)
        fh.write("\n")

    config = {"field": fixture_field_config().to_dict(),
              "train": fixture_train_config(max_steps, seed).to_dict()}
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2)
        fh.write("\n")

    return {"out_dir": out_dir,
            "manifest": os.path.join(out_dir, "transforms.json"),
            "eval_manifest": os.path.join(out_dir, "eval", "transforms.json"),
            "embeddings": emb_path,
            "queries": os.path.join(out_dir, "queries.json"),
            "config": os.path.join(out_dir, "config.json"),
            "n_train": n_train, "n_eval": n_eval}
