from dataclasses import asdict, dataclass, fields


@dataclass(frozen=True)
class ExtractorConfig:
    """Extraction settings. The pyramid block (s_min..overlap, embed_dim,
    dino_dim) must mirror the trainer's pyramid config exactly, otherwise the
    written container will not line up with its supervision lattice."""

    encoder: str = "open-clip"
    variant: str = "ViT-B-16/laion2b_s34b_b79k"
    s_min: float = 0.05
    s_max: float = 0.5
    n_levels: int = 7
    overlap: float = 0.5
    embed_dim: int = 512
    dino_dim: int = 64
    dino_stride: int = 1
    device: str = "cpu"
    out_path: str = "embeddings.lerf"
    synthetic: bool = False
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.s_min < self.s_max <= 1.0):
            raise ValueError("need 0 < s_min < s_max <= 1")
        if self.n_levels < 2:
            raise ValueError("n_levels must be >= 2")
        if not (0 < self.overlap < 1):
            raise ValueError("overlap must be in (0,1)")
        if self.embed_dim < 1 or self.dino_dim < 1:
            raise ValueError("embed_dim and dino_dim must be >= 1")
        if self.dino_stride < 1:
            raise ValueError("dino_stride must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExtractorConfig":
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**doc)
