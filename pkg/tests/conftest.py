import json
import os

import numpy as np
import pytest

from langfield.field import FieldConfig, FieldParams
from langfield.fixture import ring_pose
from langfield.hashgrid import HashGridConfig
from langfield.mlp import MLPConfig
from langfield.scene import save_png_rgb01


def small_field_config() -> FieldConfig:
    return FieldConfig(
        embed_dim=4, dino_dim=3, geo_dim=5,
        lang_grid=HashGridConfig(n_levels=4, base_resolution=4,
                                 max_resolution=16, table_size=2 ** 9,
                                 features_per_level=2),
        rad_grid=HashGridConfig(n_levels=3, base_resolution=4,
                                max_resolution=12, table_size=2 ** 9,
                                features_per_level=2),
        clip_head=MLPConfig(hidden_layers=2, hidden_width=16, out_dim=4),
        dino_head=MLPConfig(hidden_layers=1, hidden_width=16, out_dim=3),
        density_head=MLPConfig(hidden_layers=1, hidden_width=16, out_dim=6),
        color_head=MLPConfig(hidden_layers=1, hidden_width=16, out_dim=3),
    )


def make_field_params(seed=0) -> FieldParams:
    params = FieldParams(small_field_config(), np.random.default_rng(seed))
    # init features are ~1e-4, too faint for meaningful gradient comparisons
    rng = np.random.default_rng(seed + 1)
    for grid in (params.lang_grid, params.rad_grid):
        grid.tables[:] = (0.3 * rng.standard_normal(grid.tables.shape)
                          ).astype(np.float32)
    return params


def write_scene(root, n_frames=3, width=8, height=6, fl=10.0, seed=0,
                scene_scale=1.0):
    """Minimal on-disk dataset: ring cameras, random quantized images."""
    rng = np.random.default_rng(seed)
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    frames = []
    for i in range(n_frames):
        c2w = ring_pose(2.0 * np.pi * i / max(n_frames, 1))
        img = np.round(rng.uniform(0, 1, (height, width, 3)) * 255) / 255
        rel = f"images/f{i:02d}.png"
        save_png_rgb01(os.path.join(root, rel), img)
        frames.append({"file_path": rel,
                       "transform_matrix": [float(x) for x in c2w.reshape(-1)]})
    doc = {"fl_x": fl, "fl_y": fl, "cx": width / 2, "cy": height / 2,
           "w": width, "h": height, "scene_scale": scene_scale,
           "frames": frames}
    path = os.path.join(root, "transforms.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    return path


@pytest.fixture
def tiny_manifest(tmp_path):
    return write_scene(str(tmp_path))
