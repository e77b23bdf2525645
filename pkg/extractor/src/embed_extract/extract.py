"""Batch extraction: walk the dataset, embed every crop in the trainer's
lattice, write the container."""

import json
import logging
import os

import numpy as np

from .container import DinoBlock, LevelBlock, append_dino_blocks, \
    write_pyramid_blocks
from .layout import grid_centers, level_crop_sides_px

log = logging.getLogger("embed_extract")


def load_dataset_frames(dataset_dir: str) -> dict:
    """Manifest plus per-frame paths. Synthetic mode needs the per-frame
    region label maps the dataset generator writes next to the images."""
    manifest_path = os.path.join(dataset_dir, "transforms.json")
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"no transforms.json under {dataset_dir}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    frames = []
    for i, fr in enumerate(doc["frames"]):
        rel = fr["file_path"]
        stem = os.path.splitext(os.path.basename(rel))[0]
        candidates = [
            os.path.join(dataset_dir, "regions", f"{stem}.npy"),
            os.path.join(dataset_dir, "regions", f"train_{i:03d}.npy"),
        ]
        region_path = next((p for p in candidates if os.path.exists(p)), None)
        frames.append({
            "index": i,
            "image_path": os.path.join(dataset_dir, rel),
            "region_path": region_path,
            "region_candidates": candidates,
        })
    return {
        "width": int(doc["w"]),
        "height": int(doc["h"]),
        "frames": frames,
    }


def _region_integral(region: np.ndarray, n_regions: int) -> np.ndarray:
    onehot = np.eye(n_regions)[region]
    inte = np.zeros((region.shape[0] + 1, region.shape[1] + 1, n_regions))
    inte[1:, 1:] = onehot.cumsum(axis=0).cumsum(axis=1)
    return inte


def _crop_pixel_range(center: float, side: int, dim: int):
    lo = int(np.floor(center - side / 2.0 + 0.5))
    hi = int(np.floor(center + side / 2.0 + 0.5))
    return max(lo, 0), min(hi, dim)


def _load_region_map(frame: dict, width: int, height: int) -> np.ndarray:
    if frame["region_path"] is None:
        raise FileNotFoundError(
            "synthetic mode needs a region label map for frame "
            f"{frame['index']}; looked for " + " and ".join(
                frame["region_candidates"]))
    region = np.load(frame["region_path"])
    if region.shape != (height, width):
        raise ValueError(
            f"{frame['region_path']}: region map {region.shape} does not "
            f"match the {height}x{width} image")
    return region.astype(np.int64)


def synthetic_frame_levels(region: np.ndarray, vocab, config,
                           width: int, height: int) -> list:
    inte = _region_integral(region, len(vocab.region_names))
    sides = level_crop_sides_px(config, width, height)
    levels = []
    for side in sides:
        cx, cy = grid_centers(width, height, int(side), config.overlap)
        emb = np.empty((len(cy), len(cx), vocab.embed_dim))
        for iy, c_y in enumerate(cy):
            r0, r1 = _crop_pixel_range(c_y, int(side), height)
            for ix, c_x in enumerate(cx):
                c0, c1 = _crop_pixel_range(c_x, int(side), width)
                counts = (inte[r1, c1] - inte[r0, c1]
                          - inte[r1, c0] + inte[r0, c0])
                emb[iy, ix] = vocab.crop_embedding(counts)
        levels.append(LevelBlock(int(side), emb.astype(np.float32)))
    return levels


def encoder_frame_levels(image: np.ndarray, encoder, config,
                         width: int, height: int) -> list:
    sides = level_crop_sides_px(config, width, height)
    levels = []
    for side in sides:
        cx, cy = grid_centers(width, height, int(side), config.overlap)
        crops = []
        for c_y in cy:
            r0, r1 = _crop_pixel_range(c_y, int(side), height)
            for c_x in cx:
                c0, c1 = _crop_pixel_range(c_x, int(side), width)
                crops.append(image[r0:r1, c0:c1])
        emb = encoder.embed_image_crops(crops)
        emb = emb.reshape(len(cy), len(cx), config.embed_dim)
        levels.append(LevelBlock(int(side), emb.astype(np.float32)))
    return levels


def extract_pyramids(dataset_dir: str, config, embedder,
                     out_path: str = None) -> str:
    """Write the header and every crop-embedding block. `embedder` is a
    SyntheticVocabulary when config.synthetic, otherwise an encoder."""
    info = load_dataset_frames(dataset_dir)
    width, height = info["width"], info["height"]
    levels_per_frame = []
    for frame in info["frames"]:
        if config.synthetic:
            region = _load_region_map(frame, width, height)
            levels = synthetic_frame_levels(region, embedder, config,
                                            width, height)
        else:
            from .encoders import load_image
            levels = encoder_frame_levels(load_image(frame["image_path"]),
                                          embedder, config, width, height)
        levels_per_frame.append(levels)
        log.info("frame %d: %d levels embedded", frame["index"], len(levels))
    path = out_path or config.out_path
    write_pyramid_blocks(path, levels_per_frame, config.embed_dim,
                         config.dino_dim)
    return path


def extract_dino(dataset_dir: str, config, embedder, out_path: str) -> str:
    """Append the per-frame feature maps the header already declared."""
    info = load_dataset_frames(dataset_dir)
    width, height = info["width"], info["height"]
    s = config.dino_stride
    blocks = []
    for frame in info["frames"]:
        if config.synthetic:
            region = _load_region_map(frame, width, height)
            feats = embedder.dino_bases[region[::s, ::s]]
        else:
            from .encoders import load_image
            feats = embedder.feature_map(load_image(frame["image_path"]))
        blocks.append(DinoBlock(np.ascontiguousarray(feats, dtype=np.float32)))
    append_dino_blocks(out_path, blocks, config.dino_dim)
    return out_path
