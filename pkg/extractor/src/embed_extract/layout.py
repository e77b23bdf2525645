"""Crop lattice shared with the trainer.

The trainer rebuilds the lattice from (image dims, crop side, overlap) when
it reads a container, so this module must reproduce that construction
bit for bit: geometric level scales, rounded integer crop sides, first/last
crops flush with the borders, interior stride crop_side*(1-overlap).
"""

import json

import numpy as np


class LayoutMismatch(RuntimeError):
    pass


def level_scales(s_min: float, s_max: float, n_levels: int) -> np.ndarray:
    return np.geomspace(s_min, s_max, n_levels)


def level_crop_sides_px(config, width: int, height: int) -> np.ndarray:
    min_dim = min(width, height)
    sides = np.round(
        level_scales(config.s_min, config.s_max, config.n_levels) * min_dim
    ).astype(np.int64)
    sides = np.maximum(sides, 1)
    if np.any(np.diff(sides) <= 0):
        raise ValueError(
            f"crop sides {sides.tolist()} not strictly increasing; "
            f"image {width}x{height} too small for {config.n_levels} levels")
    if sides[-1] > min_dim:
        raise ValueError("largest crop exceeds image")
    return sides


def axis_centers(dim: int, crop_side: float, overlap: float) -> np.ndarray:
    half = crop_side / 2.0
    stride = crop_side * (1.0 - overlap)
    first, last = half, dim - half
    centers = [first]
    c = first
    while c + stride <= last + 1e-9:
        c += stride
        centers.append(c)
    if centers[-1] < last - 1e-9:
        centers.append(last)
    else:
        centers[-1] = last if len(centers) > 1 else centers[-1]
    return np.asarray(centers, dtype=np.float64)


def grid_centers(width: int, height: int, crop_side: int, overlap: float):
    if crop_side <= 0 or crop_side > min(width, height):
        raise ValueError(
            f"crop_side {crop_side} not in (0, {min(width, height)}]")
    return (axis_centers(width, crop_side, overlap),
            axis_centers(height, crop_side, overlap))


def layout_summary(config, width: int, height: int) -> dict:
    """The lattice as a plain dict, the shape the trainer's fixture writes to
    layout.json. Used both for cross-checking and as a standalone export."""
    sides = level_crop_sides_px(config, width, height)
    grids = []
    for side in sides:
        cx, cy = grid_centers(width, height, int(side), config.overlap)
        grids.append([len(cx), len(cy)])
    return {
        "width": width,
        "height": height,
        "overlap": config.overlap,
        "n_levels": config.n_levels,
        "embed_dim": config.embed_dim,
        "dino_dim": config.dino_dim,
        "crop_sides_px": sides.tolist(),
        "grids": grids,
    }


def check_layout_manifest(config, width: int, height: int,
                          manifest_path: str) -> dict:
    """Compare our lattice against a manifest the trainer produced. Any
    disagreement aborts extraction: a container built on the wrong lattice
    would be rejected (grid shape) or, worse, silently misaligned (centers).
    Returns the parsed manifest so callers can adopt its metadata."""
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    ours = layout_summary(config, width, height)
    for key in ("width", "height", "n_levels"):
        if key in manifest and int(manifest[key]) != ours[key]:
            raise LayoutMismatch(
                f"{manifest_path}: {key} {manifest[key]} != {ours[key]}")
    if "overlap" in manifest and not np.isclose(
            float(manifest["overlap"]), ours["overlap"]):
        raise LayoutMismatch(
            f"{manifest_path}: overlap {manifest['overlap']} != "
            f"{ours['overlap']}")
    if "crop_sides_px" in manifest:
        theirs = [int(s) for s in manifest["crop_sides_px"]]
        if theirs != ours["crop_sides_px"]:
            raise LayoutMismatch(
                f"{manifest_path}: crop sides {theirs} != "
                f"{ours['crop_sides_px']}")
    if "grids" in manifest:
        theirs = [[int(n) for n in g] for g in manifest["grids"]]
        if theirs != ours["grids"]:
            for lv, (tg, og) in enumerate(zip(theirs, ours["grids"])):
                if tg != og:
                    raise LayoutMismatch(
                        f"{manifest_path}: level {lv} grid {tg} != {og}")
            raise LayoutMismatch(f"{manifest_path}: grid list length differs")
    return manifest
