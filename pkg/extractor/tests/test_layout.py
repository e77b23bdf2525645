"""The crop lattice must agree with the trainer's, which rebuilds it from
(dims, crop side, overlap) when reading a container. Every case is checked
against the trainer's own implementation."""

import json

import numpy as np
import pytest
from langfield import pyramid as trainer_pyr

from embed_extract.config import ExtractorConfig
from embed_extract.layout import (LayoutMismatch, axis_centers,
                                  check_layout_manifest, grid_centers,
                                  layout_summary, level_crop_sides_px)

CASES = [
    (128, 96, 0.05, 0.5, 7, 0.5),
    (128, 96, 0.05, 0.5, 7, 0.25),
    (640, 480, 0.05, 0.5, 7, 0.5),
    (200, 150, 0.10, 0.9, 5, 0.5),
    (96, 128, 0.05, 0.5, 7, 0.5),
    (1024, 768, 0.02, 0.3, 9, 0.75),
]


@pytest.mark.parametrize("w,h,s_min,s_max,n,ov", CASES)
def test_sides_and_centers_match_trainer(w, h, s_min, s_max, n, ov):
    cfg = ExtractorConfig(synthetic=True, s_min=s_min, s_max=s_max,
                          n_levels=n, overlap=ov, embed_dim=8, dino_dim=4)
    tcfg = trainer_pyr.PyramidConfig(s_min=s_min, s_max=s_max, n_levels=n,
                                     overlap=ov, embed_dim=8)
    ours = level_crop_sides_px(cfg, w, h)
    theirs = trainer_pyr.level_crop_sides_px(tcfg, w, h)
    np.testing.assert_array_equal(ours, theirs)
    for side in ours:
        cx, cy = grid_centers(w, h, int(side), ov)
        tx, ty = trainer_pyr.build_grid_layout(w, h, int(side), ov)
        np.testing.assert_array_equal(cx, tx)
        np.testing.assert_array_equal(cy, ty)


def test_axis_centers_touch_borders():
    c = axis_centers(100, 20.0, 0.5)
    assert c[0] == 10.0 and c[-1] == 90.0
    assert np.all(np.diff(c) > 0)


def test_too_small_image_rejected():
    cfg = ExtractorConfig(synthetic=True, embed_dim=8, dino_dim=4)
    with pytest.raises(ValueError, match="not strictly increasing"):
        level_crop_sides_px(cfg, 16, 12)


def test_manifest_roundtrip(small_dataset, tmp_path):
    manifest_path = f"{small_dataset['out_dir']}/layout.json"
    with open(manifest_path) as fh:
        doc = json.load(fh)
    cfg = ExtractorConfig(synthetic=True, embed_dim=doc["embed_dim"],
                          dino_dim=doc["dino_dim"])
    parsed = check_layout_manifest(cfg, doc["width"], doc["height"],
                                   manifest_path)
    assert parsed["region_names"] == doc["region_names"]

    ours = layout_summary(cfg, doc["width"], doc["height"])
    assert ours["crop_sides_px"] == doc["crop_sides_px"]
    assert ours["grids"] == doc["grids"]


@pytest.mark.parametrize("key,value,needle", [
    ("grids", None, "level"),            # filled in below
    ("crop_sides_px", None, "crop sides"),
    ("overlap", 0.3, "overlap"),
    ("n_levels", 6, "n_levels"),
])
def test_manifest_mismatch_aborts(small_dataset, tmp_path, key, value, needle):
    manifest_path = f"{small_dataset['out_dir']}/layout.json"
    with open(manifest_path) as fh:
        doc = json.load(fh)
    if key == "grids":
        doc["grids"][2] = [doc["grids"][2][0] + 1, doc["grids"][2][1]]
    elif key == "crop_sides_px":
        doc["crop_sides_px"][0] += 1
    else:
        doc[key] = value
    bad = tmp_path / "layout.json"
    bad.write_text(json.dumps(doc))
    cfg = ExtractorConfig(synthetic=True, embed_dim=8, dino_dim=4)
    with pytest.raises(LayoutMismatch, match=needle):
        check_layout_manifest(cfg, doc["width"], doc["height"], str(bad))
