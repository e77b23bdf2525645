import numpy as np
import pytest

from langfield.fixture import (EMBED_DIM, REGION_COLORS, REGION_NAMES,
                               canonical_vectors, dino_vectors,
                               fixture_camera_poses, negative_vectors,
                               region_vectors, render_ground_truth, ring_pose,
                               trace_scene)
from langfield.scene import CameraIntrinsics


def test_embedding_vocabulary_geometry():
    reg = region_vectors()
    neg = negative_vectors()
    can = canonical_vectors()
    assert reg.shape == neg.shape == can.shape == (4, EMBED_DIM)
    np.testing.assert_allclose(reg @ reg.T, np.eye(4), atol=1e-15)
    np.testing.assert_allclose(neg @ neg.T, np.eye(4), atol=1e-15)
    np.testing.assert_allclose(np.linalg.norm(can, axis=1), 1.0, atol=1e-12)
    # negatives live in the orthogonal complement of the regions
    np.testing.assert_allclose(neg @ reg.T, 0.0, atol=1e-15)
    # every canonical sits at the same similarity to every region
    sims = can @ reg.T
    np.testing.assert_allclose(sims, 0.5 / np.sqrt(1.04), atol=1e-12)
    assert dino_vectors().shape == (4, 4)
    assert len(REGION_NAMES) == 4 and REGION_COLORS.shape == (4, 3)


def test_trace_scene_straight_down_hits():
    h = 5.0
    origins = np.array([
        [0.45, -0.35, h],   # over box_a center
        [-0.4, 0.55, h],    # over box_b
        [-0.5, -0.5, h],    # over the mat
        [-2.0, -2.0, h],    # bare floor
    ])
    dirs = np.tile([0.0, 0.0, -1.0], (4, 1))
    t, region = trace_scene(origins, dirs)
    np.testing.assert_array_equal(region, [2, 3, 1, 0])
    np.testing.assert_allclose(t, [h - 0.5, h - 0.4, h, h], rtol=1e-12)


def test_trace_scene_oblique_ray():
    origin = np.array([[3.0, 0.0, 2.0]])
    d = np.array([[-3.0, 0.0, -2.0]])
    d = d / np.linalg.norm(d)
    t, region = trace_scene(origin, d)
    # crosses z=0 exactly at the world origin, missing both boxes and the mat
    assert region[0] == 0
    np.testing.assert_allclose(t[0], np.sqrt(13.0), rtol=1e-12)


def test_trace_scene_escaping_ray_raises():
    with pytest.raises(RuntimeError, match="escaped"):
        trace_scene(np.array([[0.0, 0.0, 2.0]]), np.array([[0.0, 0.0, 1.0]]))


def test_ring_pose_is_rigid_lookat():
    c2w = ring_pose(0.7, radius=3.0, height=1.5)
    R, center = c2w[:3, :3], c2w[:3, 3]
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)
    eye = np.array([3.0 * np.cos(0.7), 3.0 * np.sin(0.7), 1.5])
    np.testing.assert_allclose(center, eye, atol=1e-12)
    np.testing.assert_allclose(c2w[3], [0, 0, 0, 1], atol=0)
    # camera -z axis points at the target
    fwd = -R[:, 2]
    np.testing.assert_allclose(fwd, -eye / np.linalg.norm(eye), atol=1e-12)


@pytest.mark.parametrize("n", [2, 7, 20])
def test_camera_tiers_cover_request(n):
    poses = fixture_camera_poses(n)
    assert len(poses) == n
    for c2w in poses:
        center = c2w[:3, 3]
        assert center[2] > 0.5  # all cameras above the ground
        fwd = -c2w[:3, 2]
        assert fwd @ (-center) > 0  # looking inward


def test_ground_truth_render_is_consistent():
    intr = CameraIntrinsics(width=32, height=24, fx=30.0, fy=30.0,
                            cx=16.0, cy=12.0)
    image, depth, region = render_ground_truth(intr, ring_pose(1.1))
    assert image.shape == (24, 32, 3)
    assert depth.shape == region.shape == (24, 32)
    assert np.isfinite(depth).all() and (depth > 0).all()
    assert set(np.unique(region)) <= {0, 1, 2, 3}
    assert 0 in np.unique(region)  # the floor dominates any ring view
    np.testing.assert_array_equal(image, REGION_COLORS[region])
