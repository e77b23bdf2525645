"""Writer for the trainer's embedding container.

Byte layout (all integers little-endian u32):
  magic "LERF", version=1, n_frames, n_levels, embed_dim, dino_dim,
  then per frame, per level: crop_side_px, nx, ny, f32 embeddings [ny][nx][d],
  then per frame: Hf, Wf, f32 features [Hf][Wf][d_dino].

The trainer validates unit norms and rebuilds the lattice from (dims, crop
side, overlap), so everything here is checked before a byte is written.
"""

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"LERF"
VERSION = 1


@dataclass(frozen=True)
class LevelBlock:
    crop_side_px: int
    embeddings: np.ndarray  # (ny, nx, d) float32, unit rows


@dataclass(frozen=True)
class DinoBlock:
    features: np.ndarray  # (hf, wf, d_dino) float32


def _check_levels(levels_per_frame, embed_dim: int):
    if not levels_per_frame:
        raise ValueError("no frames")
    n_levels = len(levels_per_frame[0])
    for f, levels in enumerate(levels_per_frame):
        if len(levels) != n_levels:
            raise ValueError(f"frame {f} has {len(levels)} levels, "
                             f"frame 0 has {n_levels}")
        sides = [lv.crop_side_px for lv in levels]
        if any(b <= a for a, b in zip(sides, sides[1:])):
            raise ValueError(f"frame {f}: crop sides {sides} not increasing")
        for l, lv in enumerate(levels):
            emb = lv.embeddings
            if emb.ndim != 3 or emb.shape[2] != embed_dim:
                raise ValueError(
                    f"frame {f} level {l}: shape {emb.shape} wants d={embed_dim}")
            norms = np.linalg.norm(emb.astype(np.float64), axis=2)
            worst = float(np.abs(norms - 1.0).max())
            if worst > 5e-5:
                raise ValueError(
                    f"frame {f} level {l}: embedding norm off unit by {worst:.2e}")
    return n_levels


def write_pyramid_blocks(path: str, levels_per_frame, embed_dim: int,
                         dino_dim: int) -> None:
    """Header plus all crop-embedding blocks. The file is not yet readable by
    the trainer: the per-frame feature blocks declared by dino_dim follow via
    append_dino_blocks."""
    n_levels = _check_levels(levels_per_frame, embed_dim)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<5I", VERSION, len(levels_per_frame), n_levels,
                             embed_dim, dino_dim))
        for levels in levels_per_frame:
            for lv in levels:
                ny, nx, _ = lv.embeddings.shape
                fh.write(struct.pack("<3I", lv.crop_side_px, nx, ny))
                fh.write(np.ascontiguousarray(
                    lv.embeddings, dtype="<f4").tobytes())


def append_dino_blocks(path: str, dino_per_frame, dino_dim: int) -> None:
    for f, block in enumerate(dino_per_frame):
        feats = block.features
        if feats.ndim != 3 or feats.shape[2] != dino_dim:
            raise ValueError(
                f"frame {f}: feature shape {feats.shape} wants d={dino_dim}")
        if not np.all(np.isfinite(feats)):
            raise ValueError(f"frame {f}: non-finite feature")
    with open(path, "ab") as fh:
        for block in dino_per_frame:
            hf, wf, _ = block.features.shape
            fh.write(struct.pack("<2I", hf, wf))
            fh.write(np.ascontiguousarray(
                block.features, dtype="<f4").tobytes())


def write_container(path: str, levels_per_frame, dino_per_frame,
                    embed_dim: int, dino_dim: int) -> None:
    if len(dino_per_frame) != len(levels_per_frame):
        raise ValueError(
            f"{len(levels_per_frame)} frames of embeddings but "
            f"{len(dino_per_frame)} feature maps")
    write_pyramid_blocks(path, levels_per_frame, embed_dim, dino_dim)
    append_dino_blocks(path, dino_per_frame, dino_dim)
