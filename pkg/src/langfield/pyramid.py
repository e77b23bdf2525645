"""Per-image multi-scale embedding grids and pixel-aligned feature maps.

A pyramid stores, per frame and per crop scale, one unit embedding per crop
on a regular lattice, plus one lower-resolution feature map per frame for
the pixel-aligned regularizer. Supervision targets for arbitrary
(pixel, scale) queries come from bilinear interpolation over the lattice at
the two bracketing scales, blended in log-scale, then renormalized.

Scales are expressed as fractions of min(image height, width); on disk the
crop side is stored in integer pixels.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import PyramidFormatError

MAGIC = b"LERF"
VERSION = 1


@dataclass(frozen=True)
class PyramidConfig:
    s_min: float = 0.05
    s_max: float = 0.5
    n_levels: int = 7
    overlap: float = 0.5
    embed_dim: int = 8

    def __post_init__(self):
        if not (0 < self.s_min < self.s_max <= 1.0):
            raise ValueError("need 0 < s_min < s_max <= 1")
        if self.n_levels < 2:
            raise ValueError("n_levels must be >= 2")
        if not (0 < self.overlap < 1):
            raise ValueError("overlap must be in (0,1)")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")


def level_scales(config: PyramidConfig) -> np.ndarray:
    """Geometrically spaced crop-side fractions from s_min to s_max inclusive."""
    return np.geomspace(config.s_min, config.s_max, config.n_levels)


def level_crop_sides_px(config: PyramidConfig, width: int, height: int) -> np.ndarray:
    """Integer pixel crop sides per level; must stay strictly increasing."""
    min_dim = min(width, height)
    sides = np.round(level_scales(config) * min_dim).astype(np.int64)
    sides = np.maximum(sides, 1)
    if np.any(np.diff(sides) <= 0):
        raise ValueError(
            f"crop sides {sides.tolist()} not strictly increasing; "
            f"image {width}x{height} too small for {config.n_levels} levels")
    if sides[-1] > min_dim:
        raise ValueError("largest crop exceeds image")
    return sides


def _axis_centers(dim: int, crop_side: float, overlap: float) -> np.ndarray:
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


def build_grid_layout(width: int, height: int, crop_side: float, overlap: float):
    """Crop-center lattice covering the image: first/last crops touch the
    borders, interior stride = crop_side*(1-overlap). Returns (centers_x,
    centers_y) in continuous pixel coordinates."""
    if crop_side <= 0 or crop_side > min(width, height):
        raise ValueError(f"crop_side {crop_side} not in (0, {min(width, height)}]")
    return (_axis_centers(width, crop_side, overlap),
            _axis_centers(height, crop_side, overlap))


@dataclass(frozen=True)
class LevelGrid:
    crop_side_px: int
    centers_x: np.ndarray
    centers_y: np.ndarray
    embeddings: np.ndarray  # (ny, nx, d) float32, unit rows

    @property
    def shape(self):
        return self.embeddings.shape


@dataclass(frozen=True)
class DinoFeatureMap:
    features: np.ndarray  # (hf, wf, d_dino) float32
    image_width: int
    image_height: int

    @property
    def stride(self):
        return (self.image_height / self.features.shape[0],
                self.image_width / self.features.shape[1])


class FeaturePyramid:
    """Immutable supervision source: per-frame level grids + feature maps."""

    def __init__(self, width: int, height: int, overlap: float,
                 levels_per_frame: list, dino_per_frame: list):
        if not levels_per_frame:
            raise PyramidFormatError("pyramid has no frames")
        self.width = width
        self.height = height
        self.overlap = overlap
        self.levels_per_frame = levels_per_frame
        self.dino_per_frame = dino_per_frame
        self.n_frames = len(levels_per_frame)
        self.n_levels = len(levels_per_frame[0])
        self.embed_dim = levels_per_frame[0][0].embeddings.shape[2]
        self.dino_dim = dino_per_frame[0].features.shape[2] if dino_per_frame else 0
        min_dim = min(width, height)
        self.scale_fractions = np.array(
            [lv.crop_side_px / min_dim for lv in levels_per_frame[0]])
        if np.any(np.diff(self.scale_fractions) <= 0):
            raise PyramidFormatError("level scales not strictly increasing")
        self._log_scales = np.log(self.scale_fractions)

    @property
    def s_min(self) -> float:
        return float(self.scale_fractions[0])

    @property
    def s_max(self) -> float:
        return float(self.scale_fractions[-1])


def _bilinear_weights(centers: np.ndarray, q: np.ndarray):
    """Bracketing indices + hi-side weight, clamped to the lattice hull."""
    n = len(centers)
    idx = np.searchsorted(centers, q, side="left")
    hi = np.clip(idx, 0, n - 1)
    lo = np.clip(idx - 1, 0, n - 1)
    span = centers[hi] - centers[lo]
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(span > 0, (q - centers[lo]) / np.where(span > 0, span, 1.0), 1.0)
    return lo, hi, np.clip(w, 0.0, 1.0)


def _bilinear_grid(level: LevelGrid, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    ix0, ix1, wx = _bilinear_weights(level.centers_x, u)
    iy0, iy1, wy = _bilinear_weights(level.centers_y, v)
    e = level.embeddings
    out = ((1.0 - wy) * (1.0 - wx))[:, None] * e[iy0, ix0]
    out += ((1.0 - wy) * wx)[:, None] * e[iy0, ix1]
    out += (wy * (1.0 - wx))[:, None] * e[iy1, ix0]
    out += (wy * wx)[:, None] * e[iy1, ix1]
    return out


def interpolate_language_targets(pyr: FeaturePyramid, frame_id: int,
                                 u, v, s_img) -> np.ndarray:
    """Batch targets: bilinear over the 4 bracketing crops at the level below
    and above each s_img, blended linearly in log-scale, renormalized."""
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    s = np.atleast_1d(np.asarray(s_img, dtype=np.float64))
    s = np.clip(s, pyr.scale_fractions[0], pyr.scale_fractions[-1])
    levels = pyr.levels_per_frame[frame_id]

    hi = np.clip(np.searchsorted(pyr.scale_fractions, s, side="left"),
                 1, pyr.n_levels - 1)
    lo = hi - 1
    span = pyr._log_scales[hi] - pyr._log_scales[lo]
    t = (np.log(s) - pyr._log_scales[lo]) / span

    out = np.zeros((len(u), pyr.embed_dim), dtype=np.float64)
    for lvl in range(pyr.n_levels):
        w_lvl = np.zeros(len(u))
        sel_lo = lo == lvl
        sel_hi = hi == lvl
        w_lvl[sel_lo] += 1.0 - t[sel_lo]
        w_lvl[sel_hi] += t[sel_hi]
        active = w_lvl != 0.0
        if not np.any(active):
            continue
        vals = _bilinear_grid(levels[lvl], u[active], v[active])
        out[active] += w_lvl[active, None] * vals
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    # stored vectors are unit only up to f32 rounding; dividing by a norm that
    # close to 1 would break bitwise reproduction at crop centers
    norms = np.where(np.abs(norms - 1.0) <= 1e-6, 1.0,
                     np.maximum(norms, 1e-12))
    return out / norms


def interpolate_language_target(pyr: FeaturePyramid, frame_id: int,
                                pixel, s_img: float) -> np.ndarray:
    return interpolate_language_targets(
        pyr, frame_id, [pixel[0]], [pixel[1]], [s_img])[0]


def sample_dino_targets(pyr: FeaturePyramid, frame_id: int, u, v) -> np.ndarray:
    """Bilinear sample of the frame's feature map at pixel coordinates."""
    fmap = pyr.dino_per_frame[frame_id]
    feats = fmap.features
    hf, wf = feats.shape[:2]
    sy, sx = fmap.stride
    gx = np.clip((np.asarray(u, dtype=np.float64) + 0.5) / sx - 0.5, 0, wf - 1)
    gy = np.clip((np.asarray(v, dtype=np.float64) + 0.5) / sy - 0.5, 0, hf - 1)
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    x1 = np.minimum(x0 + 1, wf - 1)
    y1 = np.minimum(y0 + 1, hf - 1)
    fx = gx - x0
    fy = gy - y0
    out = ((1 - fy) * (1 - fx))[..., None] * feats[y0, x0]
    out += ((1 - fy) * fx)[..., None] * feats[y0, x1]
    out += (fy * (1 - fx))[..., None] * feats[y1, x0]
    out += (fy * fx)[..., None] * feats[y1, x1]
    return out


def sample_dino_target(pyr: FeaturePyramid, frame_id: int, pixel) -> np.ndarray:
    return sample_dino_targets(pyr, frame_id,
                               np.asarray([pixel[0]]), np.asarray([pixel[1]]))[0]


# ---------------------------------------------------------------------------
# container IO
# ---------------------------------------------------------------------------

def write_pyramid(path: str, pyr: FeaturePyramid) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<5I", VERSION, pyr.n_frames, pyr.n_levels,
                             pyr.embed_dim, pyr.dino_dim))
        for levels in pyr.levels_per_frame:
            for lv in levels:
                ny, nx, _ = lv.embeddings.shape
                fh.write(struct.pack("<3I", lv.crop_side_px, nx, ny))
                fh.write(np.ascontiguousarray(
                    lv.embeddings, dtype="<f4").tobytes())
        for fmap in pyr.dino_per_frame:
            hf, wf, _ = fmap.features.shape
            fh.write(struct.pack("<2I", hf, wf))
            fh.write(np.ascontiguousarray(fmap.features, dtype="<f4").tobytes())


class _Cursor:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise PyramidFormatError(f"{self.path}: truncated while reading {what}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def f32(self, count: int, what: str) -> np.ndarray:
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").copy()


def read_pyramid(path: str, width: int, height: int,
                 overlap: float = 0.5) -> FeaturePyramid:
    """Load and validate a container. The crop lattice is not stored; it is
    rebuilt from (image dims, crop side, overlap) and cross-checked against
    the grid shape in the file."""
    with open(path, "rb") as fh:
        data = fh.read()
    cur = _Cursor(data, path)
    if cur.take(4, "magic") != MAGIC:
        raise PyramidFormatError(f"{path}: bad magic, not an embedding container")
    version = cur.u32("version")
    if version != VERSION:
        raise PyramidFormatError(f"{path}: unsupported version {version}")
    n_frames = cur.u32("n_frames")
    n_levels = cur.u32("n_levels")
    embed_dim = cur.u32("embed_dim")
    dino_dim = cur.u32("dino_dim")
    if n_frames == 0 or n_levels < 2 or embed_dim == 0:
        raise PyramidFormatError(
            f"{path}: bad header (frames={n_frames} levels={n_levels} d={embed_dim})")

    levels_per_frame = []
    for f in range(n_frames):
        levels = []
        for l in range(n_levels):
            where = f"frame {f} level {l}"
            crop = cur.u32(f"{where} crop side")
            nx = cur.u32(f"{where} nx")
            ny = cur.u32(f"{where} ny")
            if crop == 0 or crop > min(width, height):
                raise PyramidFormatError(f"{path}: {where}: crop side {crop} "
                                         f"invalid for {width}x{height} image")
            cx, cy = build_grid_layout(width, height, crop, overlap)
            if len(cx) != nx or len(cy) != ny:
                raise PyramidFormatError(
                    f"{path}: {where}: grid {nx}x{ny} does not match the "
                    f"{len(cx)}x{len(cy)} layout for crop {crop} at overlap {overlap}")
            emb = cur.f32(ny * nx * embed_dim, f"{where} embeddings")
            emb = emb.reshape(ny, nx, embed_dim)
            norms = np.linalg.norm(emb.astype(np.float64), axis=2)
            bad = np.argwhere(np.abs(norms - 1.0) > 1e-4)
            if bad.size:
                by, bx = bad[0]
                raise PyramidFormatError(
                    f"{path}: {where} crop ({bx},{by}): embedding norm "
                    f"{norms[by, bx]:.6f} not unit")
            levels.append(LevelGrid(crop, cx, cy, emb))
        levels_per_frame.append(levels)

    dino_per_frame = []
    for f in range(n_frames):
        hf = cur.u32(f"frame {f} dino hf")
        wf = cur.u32(f"frame {f} dino wf")
        if hf == 0 or wf == 0:
            raise PyramidFormatError(f"{path}: frame {f}: empty feature map")
        feats = cur.f32(hf * wf * dino_dim, f"frame {f} dino features")
        if not np.all(np.isfinite(feats)):
            raise PyramidFormatError(f"{path}: frame {f}: non-finite feature")
        dino_per_frame.append(DinoFeatureMap(feats.reshape(hf, wf, dino_dim),
                                             width, height))
    if cur.pos != len(data):
        raise PyramidFormatError(f"{path}: {len(data) - cur.pos} trailing bytes")
    return FeaturePyramid(width, height, overlap, levels_per_frame, dino_per_frame)
