"""Raster outputs: raw f32 grids with JSON sidecars, and overlay PNGs.

Raster convention matches the scene module: row 0 is the image bottom, so
the .f32 payload is stored bottom-up and PNG emission flips. Overlay alpha
follows the score rule: raw relevancy below 0.5 is fully transparent,
everything else is drawn at half opacity over the base render.
"""

import json
import os

import numpy as np
from PIL import Image

# dark blue -> cyan -> yellow -> red ramp for display values in [0,1]
_RAMP = np.array([
    (0.05, 0.03, 0.35),
    (0.02, 0.60, 0.85),
    (0.95, 0.90, 0.10),
    (0.90, 0.10, 0.05),
])


def colormap(values: np.ndarray) -> np.ndarray:
    """(…,) in [0,1] -> (…, 3) RGB via piecewise-linear ramp."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    pos = v * (len(_RAMP) - 1)
    i0 = np.minimum(pos.astype(np.int64), len(_RAMP) - 2)
    frac = (pos - i0)[..., None]
    return (1.0 - frac) * _RAMP[i0] + frac * _RAMP[i0 + 1]


def write_raster(path: str, array: np.ndarray, meta: dict = None) -> None:
    """Write (h, w) float data as little-endian f32 plus `<path>.json`."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError("raster must be 2-d")
    with open(path, "wb") as fh:
        fh.write(arr.tobytes())
    sidecar = {"width": int(arr.shape[1]), "height": int(arr.shape[0]),
               "dtype": "f32", "row_order": "bottom-up"}
    if meta:
        sidecar.update(meta)
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_raster(path: str):
    """Returns (array (h, w) float32, sidecar dict)."""
    with open(path + ".json", "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    data = np.fromfile(path, dtype="<f4")
    h, w = int(meta["height"]), int(meta["width"])
    if data.size != h * w:
        raise ValueError(f"{path}: expected {h * w} floats, found {data.size}")
    return data.reshape(h, w), meta


def overlay_rgba(base_rgb: np.ndarray, raw_scores: np.ndarray,
                 display: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """The relevancy overlay as (h, w, 4) uint8: pure colormap color, alpha 0
    where the raw score is below 0.5 (or masked), else 128. Blending over the
    base render is the viewer's job."""
    color = colormap(display)
    visible = mask & (raw_scores >= 0.5)
    rgba = np.empty(base_rgb.shape[:2] + (4,), dtype=np.uint8)
    rgba[..., :3] = np.round(np.clip(color, 0, 1) * 255).astype(np.uint8)
    rgba[..., 3] = np.where(visible, 128, 0).astype(np.uint8)
    return rgba


def save_overlay_png(path: str, base_rgb: np.ndarray, raw_scores: np.ndarray,
                     display: np.ndarray, mask: np.ndarray) -> None:
    rgba = overlay_rgba(base_rgb, raw_scores, display, mask)
    Image.fromarray(rgba[::-1], mode="RGBA").save(path)


def save_composited_png(path: str, base_rgb: np.ndarray, raw_scores: np.ndarray,
                        display: np.ndarray, mask: np.ndarray) -> None:
    """Overlay pre-blended onto the base render (for direct inspection)."""
    color = colormap(display)
    visible = (mask & (raw_scores >= 0.5))[..., None]
    out = np.where(visible, 0.5 * color + 0.5 * base_rgb, base_rgb)
    arr = np.round(np.clip(out[::-1], 0, 1) * 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
