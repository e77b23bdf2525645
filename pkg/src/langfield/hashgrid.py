"""Multi-resolution grid encoding with learned per-vertex features.

Levels whose dense vertex cube fits in the table budget index vertices
directly; larger levels fall back to the XOR spatial hash. Parameters are
stored float32, the encode/backward arithmetic runs in float64.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels


@dataclass(frozen=True)
class HashGridConfig:
    n_levels: int = 16
    base_resolution: int = 16
    max_resolution: int = 512
    table_size: int = 2 ** 19
    features_per_level: int = 2

    def __post_init__(self):
        if self.n_levels < 1:
            raise ValueError("n_levels must be >= 1")
        if not (0 < self.base_resolution < self.max_resolution):
            raise ValueError("need 0 < base_resolution < max_resolution")
        if self.table_size < 8 or (self.table_size & (self.table_size - 1)) != 0:
            raise ValueError("table_size must be a power of two >= 8")
        if self.features_per_level < 1:
            raise ValueError("features_per_level must be >= 1")

    def level_resolutions(self) -> np.ndarray:
        if self.n_levels == 1:
            return np.array([self.base_resolution], dtype=np.int64)
        growth = np.exp(
            (np.log(self.max_resolution) - np.log(self.base_resolution))
            / (self.n_levels - 1)
        )
        res = np.floor(self.base_resolution * growth ** np.arange(self.n_levels))
        return res.astype(np.int64)

    @property
    def out_dim(self) -> int:
        return self.n_levels * self.features_per_level


class HashGrid:
    """Feature tables plus the index arrays the kernels consume."""

    def __init__(self, config: HashGridConfig, rng: np.random.Generator):
        self.config = config
        self.resolutions = config.level_resolutions()
        n_rows = []
        dense = []
        for res in self.resolutions:
            n_dense = int(res + 1) ** 3
            if n_dense <= config.table_size:
                n_rows.append(n_dense)
                dense.append(1)
            else:
                n_rows.append(config.table_size)
                dense.append(0)
        self.dense = np.array(dense, dtype=np.uint8)
        self.offsets = np.zeros(config.n_levels + 1, dtype=np.int64)
        np.cumsum(n_rows, out=self.offsets[1:])
        self.tables = rng.uniform(
            -1e-4, 1e-4, size=(int(self.offsets[-1]), config.features_per_level)
        ).astype(np.float32)

    @property
    def n_params(self) -> int:
        return self.tables.size

    def encode(self, x01: np.ndarray) -> np.ndarray:
        """x01: (n, 3) coordinates in [0,1]^3 -> (n, n_levels*features_per_level)."""
        x01 = np.ascontiguousarray(x01, dtype=np.float64)
        out = np.empty((x01.shape[0], self.config.out_dim), dtype=np.float64)
        _kernels.grid_forward(self.tables, self.offsets, self.resolutions,
                              self.dense, x01, out)
        return out

    def backward_tables(self, grad_feats: np.ndarray, x01: np.ndarray,
                        out: np.ndarray | None = None) -> np.ndarray:
        """Accumulate d(loss)/d(tables) given d(loss)/d(encode output)."""
        x01 = np.ascontiguousarray(x01, dtype=np.float64)
        grad_feats = np.ascontiguousarray(grad_feats, dtype=np.float64)
        if out is None:
            out = np.zeros(self.tables.shape, dtype=np.float64)
        _kernels.grid_backward_tables(grad_feats, x01, self.offsets,
                                      self.resolutions, self.dense, out)
        return out

    def backward_x(self, grad_feats: np.ndarray, x01: np.ndarray) -> np.ndarray:
        """d(loss)/d(x01), shape (n, 3)."""
        x01 = np.ascontiguousarray(x01, dtype=np.float64)
        grad_feats = np.ascontiguousarray(grad_feats, dtype=np.float64)
        out = np.zeros((x01.shape[0], 3), dtype=np.float64)
        _kernels.grid_backward_x(grad_feats, self.tables, x01, self.offsets,
                                 self.resolutions, self.dense, out)
        return out
