"""The two parameterized fields and their gradients.

Radiance: position/direction -> (color, density). Language: position/scale
-> (language embedding, regularizer feature), with the two heads sharing one
grid encoding. The components are architecturally disjoint: no parameter is
reachable from both, which is what makes the gradient-isolation guarantees
possible. Scale enters only the language head, as log(s / 1 world unit).

Parameters are float32 blocks in a fixed declaration order (the checkpoint
layout); math runs in float64.
"""

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointFormatError
from .hashgrid import HashGrid, HashGridConfig
from .mlp import MLP, MLPConfig
from .scene import contracted_to_unit_cube

CKPT_MAGIC = b"LERFCKPT"
CKPT_VERSION = 1


@dataclass(frozen=True)
class FieldConfig:
    embed_dim: int = 8
    dino_dim: int = 4
    geo_dim: int = 15
    lang_grid: HashGridConfig = HashGridConfig(
        n_levels=32, base_resolution=16, max_resolution=512,
        table_size=2 ** 21, features_per_level=8)
    rad_grid: HashGridConfig = HashGridConfig(
        n_levels=16, base_resolution=16, max_resolution=1024,
        table_size=2 ** 19, features_per_level=2)
    clip_head: MLPConfig = MLPConfig(hidden_layers=3, hidden_width=256, out_dim=8)
    dino_head: MLPConfig = MLPConfig(hidden_layers=1, hidden_width=256, out_dim=4)
    density_head: MLPConfig = MLPConfig(hidden_layers=1, hidden_width=64, out_dim=16)
    color_head: MLPConfig = MLPConfig(hidden_layers=2, hidden_width=64, out_dim=3)

    def __post_init__(self):
        if self.clip_head.out_dim != self.embed_dim:
            raise ValueError("clip_head.out_dim must equal embed_dim")
        if self.dino_head.out_dim != self.dino_dim:
            raise ValueError("dino_head.out_dim must equal dino_dim")
        if self.density_head.out_dim != 1 + self.geo_dim:
            raise ValueError("density_head.out_dim must equal 1 + geo_dim")
        if self.color_head.out_dim != 3:
            raise ValueError("color_head.out_dim must be 3")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "FieldConfig":
        return FieldConfig(
            embed_dim=d["embed_dim"], dino_dim=d["dino_dim"], geo_dim=d["geo_dim"],
            lang_grid=HashGridConfig(**d["lang_grid"]),
            rad_grid=HashGridConfig(**d["rad_grid"]),
            clip_head=MLPConfig(**d["clip_head"]),
            dino_head=MLPConfig(**d["dino_head"]),
            density_head=MLPConfig(**d["density_head"]),
            color_head=MLPConfig(**d["color_head"]),
        )


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class FieldParams:
    LANGUAGE_PREFIXES = ("lang_grid", "clip_head", "dino_head")
    RADIANCE_PREFIXES = ("rad_grid", "density_head", "color_head")

    def __init__(self, config: FieldConfig, rng: np.random.Generator):
        self.config = config
        self.lang_grid = HashGrid(config.lang_grid, rng)
        self.clip_head = MLP(config.lang_grid.out_dim + 1, config.clip_head, rng)
        self.dino_head = MLP(config.lang_grid.out_dim, config.dino_head, rng)
        self.rad_grid = HashGrid(config.rad_grid, rng)
        self.density_head = MLP(config.rad_grid.out_dim, config.density_head, rng)
        self.color_head = MLP(config.geo_dim + 3, config.color_head, rng)

    def _mlp_blocks(self, name: str, mlp: MLP):
        for i in range(len(mlp.weights)):
            yield f"{name}.w{i}", mlp.weights[i]
            yield f"{name}.b{i}", mlp.biases[i]

    def param_blocks(self):
        """(name, float32 array) pairs in checkpoint declaration order."""
        blocks = [("lang_grid.tables", self.lang_grid.tables)]
        blocks += list(self._mlp_blocks("clip_head", self.clip_head))
        blocks += list(self._mlp_blocks("dino_head", self.dino_head))
        blocks.append(("rad_grid.tables", self.rad_grid.tables))
        blocks += list(self._mlp_blocks("density_head", self.density_head))
        blocks += list(self._mlp_blocks("color_head", self.color_head))
        return blocks

    @staticmethod
    def is_language_block(name: str) -> bool:
        return name.startswith(FieldParams.LANGUAGE_PREFIXES)

    @property
    def n_params(self) -> int:
        return sum(b.size for _, b in self.param_blocks())

    # -- language component --------------------------------------------------

    def lang_features(self, x_contracted: np.ndarray):
        """Grid features for the language heads; scale-independent, so scale
        sweeps compute them once per position set."""
        x01 = contracted_to_unit_cube(x_contracted)
        return x01, self.lang_grid.encode(x01)

    def clip_from_features(self, feats: np.ndarray, s: np.ndarray):
        s = np.asarray(s, dtype=np.float64)
        if np.any(s <= 0):
            raise ValueError("scale must be positive")
        clip_in = np.concatenate([feats, np.log(s)[:, None]], axis=1)
        return self.clip_head.forward(clip_in)

    def eval_language(self, x_contracted: np.ndarray, s: np.ndarray):
        """(n,3) contracted positions + (n,) world-unit scales ->
        (clip_out (n,d), dino_out (n,d_dino), ctx)."""
        x01, feats = self.lang_features(x_contracted)
        clip_out, clip_ctx = self.clip_from_features(feats, s)
        dino_out, dino_ctx = self.dino_head.forward(feats)
        ctx = {"x01": x01, "clip_ctx": clip_ctx, "dino_ctx": dino_ctx}
        return clip_out, dino_out, ctx

    def language_backward(self, ctx, grad_clip, grad_dino, grads: "GradientBuffer"):
        gw, gb, gin = self.clip_head.backward(ctx["clip_ctx"], grad_clip)
        grads.add_mlp("clip_head", gw, gb)
        g_feats = gin[:, :-1]
        gw, gb, gin = self.dino_head.backward(ctx["dino_ctx"], grad_dino)
        grads.add_mlp("dino_head", gw, gb)
        g_feats = g_feats + gin
        self.lang_grid.backward_tables(g_feats, ctx["x01"],
                                       out=grads.get("lang_grid.tables"))

    # -- radiance component ---------------------------------------------------

    def eval_density(self, x_contracted: np.ndarray) -> np.ndarray:
        """Density only (coarse sampling pass); skips the color branch."""
        x01 = contracted_to_unit_cube(x_contracted)
        feats = self.rad_grid.encode(x01)
        h, _ = self.density_head.forward(feats)
        return softplus(h[:, 0])

    def eval_radiance(self, x_contracted: np.ndarray, d: np.ndarray):
        """(n,3) contracted positions + (n,3) unit view directions ->
        (color (n,3) in [0,1], density (n,) >= 0, ctx)."""
        x01 = contracted_to_unit_cube(x_contracted)
        feats = self.rad_grid.encode(x01)
        h, dens_ctx = self.density_head.forward(feats)
        raw_sigma = h[:, 0]
        sigma = softplus(raw_sigma)
        geo = h[:, 1:]
        color_in = np.concatenate([geo, np.asarray(d, dtype=np.float64)], axis=1)
        raw_c, color_ctx = self.color_head.forward(color_in)
        c = sigmoid(raw_c)
        ctx = {"x01": x01, "dens_ctx": dens_ctx, "color_ctx": color_ctx,
               "raw_sigma": raw_sigma, "c": c}
        return c, sigma, ctx

    def radiance_backward(self, ctx, grad_c, grad_sigma, grads: "GradientBuffer"):
        c = ctx["c"]
        grad_raw_c = np.asarray(grad_c, dtype=np.float64) * c * (1.0 - c)
        gw, gb, gin = self.color_head.backward(ctx["color_ctx"], grad_raw_c)
        grads.add_mlp("color_head", gw, gb)
        g_geo = gin[:, :self.config.geo_dim]
        g_raw_sigma = np.asarray(grad_sigma, dtype=np.float64) * sigmoid(ctx["raw_sigma"])
        g_h = np.concatenate([g_raw_sigma[:, None], g_geo], axis=1)
        gw, gb, g_feats = self.density_head.backward(ctx["dens_ctx"], g_h)
        grads.add_mlp("density_head", gw, gb)
        self.rad_grid.backward_tables(g_feats, ctx["x01"],
                                      out=grads.get("rad_grid.tables"))


class GradientBuffer:
    """Float64 accumulator matching a FieldParams block registry."""

    def __init__(self, params: FieldParams):
        self._arrays = {name: np.zeros(block.shape, dtype=np.float64)
                        for name, block in params.param_blocks()}

    def get(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def zero(self):
        for a in self._arrays.values():
            a[:] = 0.0

    def add_mlp(self, name: str, grad_w: list, grad_b: list):
        for i, (gw, gb) in enumerate(zip(grad_w, grad_b)):
            self._arrays[f"{name}.w{i}"] += gw
            self._arrays[f"{name}.b{i}"] += gb

    def blocks(self):
        return self._arrays.items()

    def scale(self, factor: float):
        for a in self._arrays.values():
            a *= factor

    def check_finite(self):
        for name, a in self._arrays.items():
            if not np.all(np.isfinite(a)):
                raise FloatingPointError(f"non-finite gradient in {name}")


# ---------------------------------------------------------------------------
# checkpoint IO
# ---------------------------------------------------------------------------

def save_checkpoint(path: str, params: FieldParams, step: int) -> None:
    meta = {"config": params.config.to_dict(), "step": int(step)}
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<2I", CKPT_VERSION, len(blob)))
        fh.write(blob)
        for _, block in params.param_blocks():
            fh.write(np.ascontiguousarray(block, dtype="<f4").tobytes())


def load_checkpoint(path: str):
    """Returns (FieldParams, step)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(CKPT_MAGIC) + 8:
        raise CheckpointFormatError(f"{path}: too short to be a checkpoint")
    if data[:len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic, not a checkpoint")
    pos = len(CKPT_MAGIC)
    version, blob_len = struct.unpack_from("<2I", data, pos)
    pos += 8
    if version != CKPT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    if pos + blob_len > len(data):
        raise CheckpointFormatError(f"{path}: truncated config block")
    try:
        meta = json.loads(data[pos:pos + blob_len].decode("utf-8"))
        config = FieldConfig.from_dict(meta["config"])
        step = int(meta["step"])
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointFormatError(f"{path}: bad config block: {e}") from e
    pos += blob_len

    params = FieldParams(config, np.random.default_rng(0))
    for name, block in params.param_blocks():
        nbytes = block.size * 4
        if pos + nbytes > len(data):
            raise CheckpointFormatError(f"{path}: truncated in block {name}")
        block[:] = np.frombuffer(data[pos:pos + nbytes],
                                 dtype="<f4").reshape(block.shape)
        pos += nbytes
    if pos != len(data):
        raise CheckpointFormatError(f"{path}: {len(data) - pos} trailing bytes")
    return params, step
