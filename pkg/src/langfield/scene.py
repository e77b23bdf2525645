"""Posed multi-view dataset loading, ray generation, scene contraction.

Camera convention: right-handed, camera looks down -z, y up. Pixel centers
sit at +0.5. Row v = 0 is the BOTTOM image row internally; PNG files store
row 0 at the top, so image arrays are flipped on load and save. Manifests
store camera-to-world transforms.
"""

import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ManifestError


def load_png_rgb01(path):
    """PNG -> float32 (h, w, 3) in [0,1], row 0 at the image bottom."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr[::-1].copy()

def save_png_rgb01(path, image):
    """float (h, w, 3) in [0,1] with row 0 at the bottom -> 8-bit PNG."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    arr = np.round(arr[::-1] * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def f_xy(self) -> float:
        return 0.5 * (self.fx + self.fy)


@dataclass(frozen=True)
class CameraPose:
    camera_to_world: np.ndarray  # 4x4, rotation orthonormal det +1

    @property
    def rotation(self) -> np.ndarray:
        return self.camera_to_world[:3, :3]

    @property
    def center(self) -> np.ndarray:
        return self.camera_to_world[:3, 3]


@dataclass(frozen=True)
class Frame:
    image: np.ndarray  # (h, w, 3) in [0,1], row 0 at bottom
    pose: CameraPose
    intrinsics: CameraIntrinsics
    frame_id: int
    name: str = ""  # image-file stem; stable view id for the CLI and service


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray  # unit norm
    pixel: tuple
    frame_id: int


@dataclass(frozen=True)
class SceneDataset:
    frames: list
    scene_scale: float = 1.0
    root: str = ""

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ManifestError("dataset needs at least 2 frames")
        if self.scene_scale <= 0:
            raise ManifestError("scene_scale must be positive")


def orthonormalize_rotation(r: np.ndarray, frame_label: str) -> np.ndarray:
    u, _, vt = np.linalg.svd(np.asarray(r, dtype=np.float64))
    out = u @ vt
    if np.linalg.det(out) < 0:
        raise ManifestError(f"frame {frame_label}: rotation has det -1 (reflection)")
    return out


def load_dataset(manifest_path: str) -> SceneDataset:
    if not os.path.isfile(manifest_path):
        raise ManifestError(f"manifest not found: {manifest_path}")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest is not valid JSON: {e}") from e

    root = os.path.dirname(os.path.abspath(manifest_path))
    try:
        intr = CameraIntrinsics(
            fx=float(doc["fl_x"]), fy=float(doc["fl_y"]),
            cx=float(doc["cx"]), cy=float(doc["cy"]),
            width=int(doc["w"]), height=int(doc["h"]),
        )
    except KeyError as e:
        raise ManifestError(f"manifest missing intrinsics field {e}") from e
    except (TypeError, ValueError) as e:
        raise ManifestError(f"bad intrinsics: {e}") from e

    scene_scale = float(doc.get("scene_scale", 1.0))
    entries = doc.get("frames")
    if not isinstance(entries, list) or not entries:
        raise ManifestError("manifest has no frames list")

    frames = []
    for i, entry in enumerate(entries):
        label = entry.get("file_path", f"#{i}") if isinstance(entry, dict) else f"#{i}"
        if not isinstance(entry, dict) or "transform_matrix" not in entry:
            raise ManifestError(f"frame {label}: missing transform_matrix")
        mat = np.asarray(entry["transform_matrix"], dtype=np.float64)
        if mat.size != 16:
            raise ManifestError(f"frame {label}: transform_matrix must have 16 numbers")
        mat = mat.reshape(4, 4)
        if not np.all(np.isfinite(mat)):
            raise ManifestError(f"frame {label}: non-finite transform")
        mat[:3, :3] = orthonormalize_rotation(mat[:3, :3], label)
        mat[3] = (0.0, 0.0, 0.0, 1.0)

        img_path = os.path.join(root, entry["file_path"])
        if not os.path.isfile(img_path):
            raise ManifestError(f"frame {label}: image not found: {img_path}")
        image = load_png_rgb01(img_path)
        if image.shape[0] != intr.height or image.shape[1] != intr.width:
            raise ManifestError(
                f"frame {label}: image is {image.shape[1]}x{image.shape[0]}, "
                f"manifest says {intr.width}x{intr.height}")
        stem = os.path.splitext(os.path.basename(entry["file_path"]))[0]
        frames.append(Frame(image=image, pose=CameraPose(mat),
                            intrinsics=intr, frame_id=i, name=stem))
    return SceneDataset(frames=frames, scene_scale=scene_scale, root=root)


def pinhole_directions(intr: CameraIntrinsics, u, v) -> np.ndarray:
    """Camera-space unit directions for pixel coordinates (broadcastable)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.stack([
        (u + 0.5 - intr.cx) / intr.fx,
        (v + 0.5 - intr.cy) / intr.fy,
        np.full(np.broadcast(u, v).shape, -1.0),
    ], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def generate_ray(frame: Frame, u: int, v: int) -> Ray:
    intr = frame.intrinsics
    if not (0 <= u < intr.width and 0 <= v < intr.height):
        raise ValueError(f"pixel ({u},{v}) outside {intr.width}x{intr.height} image")
    d_cam = pinhole_directions(intr, u, v)
    d = frame.pose.rotation @ d_cam
    return Ray(origin=frame.pose.center.copy(), direction=d,
               pixel=(u, v), frame_id=frame.frame_id)


def generate_rays(frame: Frame, u, v):
    """Vectorized ray bundle: returns (origin (3,), directions (n, 3))."""
    d_cam = pinhole_directions(frame.intrinsics, u, v)
    dirs = d_cam @ frame.pose.rotation.T
    return frame.pose.center.copy(), dirs


def project(frame: Frame, points: np.ndarray):
    """World points (n, 3) -> (u, v, z_cam). z_cam < 0 means in front."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rel = pts - frame.pose.center
    p_cam = rel @ frame.pose.rotation
    intr = frame.intrinsics
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(p_cam[:, 2] != 0.0, -1.0 / p_cam[:, 2], np.inf)
        u = intr.cx + intr.fx * p_cam[:, 0] * inv - 0.5
        v = intr.cy + intr.fy * p_cam[:, 1] * inv - 0.5
    return u, v, p_cam[:, 2]


def contract(x: np.ndarray) -> np.ndarray:
    """Map R^3 into the open ball of radius 2: identity inside the unit ball,
    x -> (2 - 1/|x|) * x/|x| outside."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("contract requires finite input")
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    safe = np.maximum(n, 1.0)
    return np.where(n <= 1.0, x, (2.0 - 1.0 / safe) * x / safe)


def contracted_to_unit_cube(xc: np.ndarray) -> np.ndarray:
    """Contracted coordinates (ball of radius 2) -> [0,1]^3 grid inputs."""
    return (np.asarray(xc, dtype=np.float64) + 2.0) / 4.0
