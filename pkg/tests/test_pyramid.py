import struct

import numpy as np
import pytest

from langfield.errors import PyramidFormatError
from langfield.pyramid import (DinoFeatureMap, FeaturePyramid, LevelGrid,
                               PyramidConfig, build_grid_layout,
                               interpolate_language_target,
                               interpolate_language_targets,
                               level_crop_sides_px, level_scales, read_pyramid,
                               sample_dino_target, sample_dino_targets,
                               write_pyramid)

from oracles import pyramid_target_ref

WIDTH, HEIGHT = 64, 48


def random_pyramid(n_frames=2, n_levels=4, embed_dim=6, dino_dim=3, seed=0):
    rng = np.random.default_rng(seed)
    cfg = PyramidConfig(s_min=0.1, s_max=0.55, n_levels=n_levels,
                        embed_dim=embed_dim)
    sides = level_crop_sides_px(cfg, WIDTH, HEIGHT)
    levels_per_frame = []
    dino_per_frame = []
    for _ in range(n_frames):
        levels = []
        for side in sides:
            cx, cy = build_grid_layout(WIDTH, HEIGHT, int(side), cfg.overlap)
            e = rng.normal(size=(len(cy), len(cx), embed_dim))
            e /= np.linalg.norm(e, axis=2, keepdims=True)
            levels.append(LevelGrid(int(side), cx, cy, e.astype(np.float32)))
        levels_per_frame.append(levels)
        feats = rng.normal(size=(12, 16, dino_dim)).astype(np.float32)
        dino_per_frame.append(DinoFeatureMap(feats, WIDTH, HEIGHT))
    return FeaturePyramid(WIDTH, HEIGHT, cfg.overlap, levels_per_frame,
                          dino_per_frame)


def test_level_scales_geometric():
    cfg = PyramidConfig(s_min=0.1, s_max=0.4, n_levels=3)
    np.testing.assert_allclose(level_scales(cfg), [0.1, 0.2, 0.4], atol=1e-12)


def test_crop_sides_strictly_increasing():
    cfg = PyramidConfig(s_min=0.05, s_max=0.5, n_levels=7)
    sides = level_crop_sides_px(cfg, 128, 96)
    assert np.all(np.diff(sides) > 0)
    with pytest.raises(ValueError, match="increasing"):
        level_crop_sides_px(PyramidConfig(s_min=0.05, s_max=0.06, n_levels=4),
                            128, 96)


def test_grid_layout_square():
    cx, cy = build_grid_layout(100, 100, 50, 0.5)
    np.testing.assert_allclose(cx, [25.0, 50.0, 75.0])
    np.testing.assert_allclose(cy, [25.0, 50.0, 75.0])


def test_grid_layout_border_snap():
    cx, cy = build_grid_layout(100, 60, 60, 0.5)
    np.testing.assert_allclose(cx, [30.0, 60.0, 70.0])
    np.testing.assert_allclose(cy, [30.0])


def test_grid_layout_covers_borders():
    for crop in (10, 17, 33):
        cx, cy = build_grid_layout(WIDTH, HEIGHT, crop, 0.5)
        assert cx[0] == crop / 2 and cx[-1] == WIDTH - crop / 2
        assert cy[0] == crop / 2 and cy[-1] == HEIGHT - crop / 2
        assert np.all(np.diff(cx) > 0) and np.all(np.diff(cy) > 0)


def test_interpolation_exact_at_centers():
    pyr = random_pyramid()
    for lvl in range(pyr.n_levels):
        grid = pyr.levels_per_frame[1][lvl]
        s = pyr.scale_fractions[lvl]
        for iy in range(0, len(grid.centers_y), 2):
            for ix in range(0, len(grid.centers_x), 2):
                got = interpolate_language_target(
                    pyr, 1, (grid.centers_x[ix], grid.centers_y[iy]), s)
                np.testing.assert_array_equal(
                    got, grid.embeddings[iy, ix].astype(np.float64))


def test_interpolation_matches_enumeration_oracle():
    pyr = random_pyramid()
    rng = np.random.default_rng(7)
    u = rng.uniform(0, WIDTH, 2000)
    v = rng.uniform(0, HEIGHT, 2000)
    s = rng.uniform(pyr.s_min * 0.8, pyr.s_max * 1.2, 2000)  # include clamps
    got = interpolate_language_targets(pyr, 0, u, v, s)
    for i in range(0, 2000, 7):
        ref = pyramid_target_ref(pyr, 0, u[i], v[i], s[i])
        np.testing.assert_allclose(got[i], ref, atol=1e-6)


def test_interpolation_unit_norm():
    pyr = random_pyramid()
    rng = np.random.default_rng(8)
    got = interpolate_language_targets(
        pyr, 0, rng.uniform(0, WIDTH, 500), rng.uniform(0, HEIGHT, 500),
        rng.uniform(pyr.s_min, pyr.s_max, 500))
    np.testing.assert_allclose(np.linalg.norm(got, axis=1), 1.0, atol=1e-6)


def test_interpolation_orthogonal_blend():
    # halfway between two crops holding orthogonal unit vectors -> (e1+e2)/sqrt2
    pyr = random_pyramid(n_frames=1)
    grid = pyr.levels_per_frame[0][0]
    e = np.zeros((2, pyr.embed_dim), dtype=np.float32)
    e[0, 0] = 1.0
    e[1, 1] = 1.0
    grid.embeddings[0, 0] = e[0]
    grid.embeddings[0, 1] = e[1]
    mid_u = 0.5 * (grid.centers_x[0] + grid.centers_x[1])
    got = interpolate_language_target(
        pyr, 0, (mid_u, grid.centers_y[0]), pyr.scale_fractions[0])
    want = np.zeros(pyr.embed_dim)
    want[0] = want[1] = 1.0 / np.sqrt(2.0)
    np.testing.assert_allclose(got, want, atol=1e-7)


def test_scale_clamped_to_pyramid_range():
    pyr = random_pyramid()
    lo = interpolate_language_target(pyr, 0, (10.0, 10.0), pyr.s_min / 10)
    at = interpolate_language_target(pyr, 0, (10.0, 10.0), pyr.s_min)
    np.testing.assert_array_equal(lo, at)


def test_dino_midway_average():
    feats = np.zeros((1, 2, 3), dtype=np.float32)
    feats[0, 0] = (1.0, 0.0, 2.0)
    feats[0, 1] = (0.0, 4.0, 2.0)
    pyr = FeaturePyramid(WIDTH, HEIGHT, 0.5,
                         random_pyramid(n_frames=1).levels_per_frame,
                         [DinoFeatureMap(feats, WIDTH, HEIGHT)])
    # midway between the two cell centers in pixel space
    u_mid = WIDTH / 2 - 0.5
    v_any = 13.0
    got = sample_dino_target(pyr, 0, (u_mid, v_any))
    np.testing.assert_allclose(got, [0.5, 2.0, 2.0], atol=1e-7)


def test_dino_exact_at_nodes():
    pyr = random_pyramid()
    fmap = pyr.dino_per_frame[0]
    sy, sx = fmap.stride
    for gy in (0, 5, 11):
        for gx in (0, 7, 15):
            u = (gx + 0.5) * sx - 0.5
            v = (gy + 0.5) * sy - 0.5
            got = sample_dino_target(pyr, 0, (u, v))
            np.testing.assert_allclose(
                got, fmap.features[gy, gx].astype(np.float64), atol=1e-7)


def test_dino_batch_matches_scalar():
    pyr = random_pyramid()
    rng = np.random.default_rng(5)
    u = rng.uniform(0, WIDTH - 1, 50)
    v = rng.uniform(0, HEIGHT - 1, 50)
    batch = sample_dino_targets(pyr, 0, u, v)
    for i in range(0, 50, 9):
        np.testing.assert_array_equal(batch[i],
                                      sample_dino_target(pyr, 0, (u[i], v[i])))


# -- container ---------------------------------------------------------------

def test_round_trip_byte_identical(tmp_path):
    pyr = random_pyramid()
    p1 = str(tmp_path / "a.lerf")
    p2 = str(tmp_path / "b.lerf")
    write_pyramid(p1, pyr)
    back = read_pyramid(p1, WIDTH, HEIGHT)
    write_pyramid(p2, back)
    assert open(p1, "rb").read() == open(p2, "rb").read()
    for lvl in range(pyr.n_levels):
        np.testing.assert_array_equal(
            back.levels_per_frame[1][lvl].embeddings,
            pyr.levels_per_frame[1][lvl].embeddings)
    np.testing.assert_array_equal(back.dino_per_frame[0].features,
                                  pyr.dino_per_frame[0].features)


def _write_fixture_bytes(tmp_path):
    path = str(tmp_path / "c.lerf")
    write_pyramid(path, random_pyramid())
    return path, bytearray(open(path, "rb").read())


def test_rejects_bad_magic(tmp_path):
    path, raw = _write_fixture_bytes(tmp_path)
    raw[:4] = b"NOPE"
    open(path, "wb").write(raw)
    with pytest.raises(PyramidFormatError, match="bad magic"):
        read_pyramid(path, WIDTH, HEIGHT)


def test_rejects_bad_version(tmp_path):
    path, raw = _write_fixture_bytes(tmp_path)
    raw[4:8] = struct.pack("<I", 9)
    open(path, "wb").write(raw)
    with pytest.raises(PyramidFormatError, match="version 9"):
        read_pyramid(path, WIDTH, HEIGHT)


def test_rejects_truncation_with_location(tmp_path):
    path, raw = _write_fixture_bytes(tmp_path)
    open(path, "wb").write(raw[:len(raw) // 2])
    with pytest.raises(PyramidFormatError, match="truncated"):
        read_pyramid(path, WIDTH, HEIGHT)


def test_rejects_trailing_bytes(tmp_path):
    path, raw = _write_fixture_bytes(tmp_path)
    open(path, "wb").write(bytes(raw) + b"xx")
    with pytest.raises(PyramidFormatError, match="2 trailing"):
        read_pyramid(path, WIDTH, HEIGHT)


def test_rejects_non_unit_embedding_named_crop(tmp_path):
    pyr = random_pyramid()
    pyr.levels_per_frame[1][2].embeddings[0, 1] *= 3.0
    path = str(tmp_path / "d.lerf")
    write_pyramid(path, pyr)
    with pytest.raises(PyramidFormatError, match=r"frame 1 level 2 crop \(1,0\)"):
        read_pyramid(path, WIDTH, HEIGHT)


def test_rejects_layout_mismatch(tmp_path):
    path, raw = _write_fixture_bytes(tmp_path)
    # first level header starts after magic + 5 u32: crop, nx, ny
    nx = struct.unpack_from("<I", raw, 28)[0]
    struct.pack_into("<I", raw, 28, nx + 1)
    open(path, "wb").write(raw)
    with pytest.raises(PyramidFormatError, match="does not match"):
        read_pyramid(path, WIDTH, HEIGHT)


def test_rejects_oversized_crop(tmp_path):
    path, raw = _write_fixture_bytes(tmp_path)
    struct.pack_into("<I", raw, 24, HEIGHT + 1)
    open(path, "wb").write(raw)
    with pytest.raises(PyramidFormatError, match="crop side"):
        read_pyramid(path, WIDTH, HEIGHT)
