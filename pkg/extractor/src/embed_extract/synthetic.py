"""Deterministic hash-based embedder for model-free extraction.

The geometry mirrors what a contrastive image/text encoder provides on the
synthetic scene: one unit vector per semantic region (mutually orthogonal),
canonical phrases that sit at similarity ~0.49 to every region, and novel
text orthogonal to all region content. Every vector is a pure function of
(seed, tag string), so two runs, or the batch extractor and the text
service, agree bit for bit.
"""

import hashlib

import numpy as np

CANONICAL_PHRASES = ("object", "things", "stuff", "texture")


def _tag_rng(seed: int, tag: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{tag}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def hash_unit_vector(seed: int, tag: str, dim: int) -> np.ndarray:
    v = _tag_rng(seed, tag).standard_normal(dim)
    return v / np.linalg.norm(v)


def _orthonormalize(rows: np.ndarray) -> np.ndarray:
    """Gram-Schmidt, order-preserving; rows must be linearly independent."""
    out = np.empty_like(rows)
    for i, r in enumerate(rows):
        r = r - out[:i].T @ (out[:i] @ r)
        n = np.linalg.norm(r)
        if n < 1e-8:
            raise ValueError("hash vectors degenerate; change seed or dim")
        out[i] = r / n
    return out


class SyntheticVocabulary:
    """Shared embedding space for the synthetic encoder and text service."""

    def __init__(self, region_names, embed_dim: int = 8, dino_dim: int = 4,
                 seed: int = 0):
        region_names = list(region_names)
        if embed_dim < len(region_names) + 1:
            raise ValueError(
                f"embed_dim {embed_dim} too small for {len(region_names)} "
                "regions plus off-region text")
        if dino_dim < len(region_names):
            raise ValueError(
                f"dino_dim {dino_dim} too small for {len(region_names)} regions")
        self.region_names = region_names
        self.embed_dim = embed_dim
        self.dino_dim = dino_dim
        self.seed = seed

        self.region_bases = _orthonormalize(np.stack(
            [hash_unit_vector(seed, f"region:{n}", embed_dim)
             for n in region_names]))
        self.dino_bases = _orthonormalize(np.stack(
            [hash_unit_vector(seed, f"dino:{n}", dino_dim)
             for n in region_names]))

        # canonical = equal blend of all regions plus a small component
        # outside the region span, putting region similarity near 0.5
        blend = 0.5 * self.region_bases.sum(axis=0)
        self.canonicals = {}
        for phrase in CANONICAL_PHRASES:
            w = self._off_region(hash_unit_vector(
                seed, f"canonical:{phrase}", embed_dim))
            v = blend + 0.2 * w
            self.canonicals[phrase] = v / np.linalg.norm(v)

    def _off_region(self, v: np.ndarray) -> np.ndarray:
        r = v - self.region_bases.T @ (self.region_bases @ v)
        n = np.linalg.norm(r)
        if n < 1e-8:
            raise ValueError("hash vector inside region span; change seed")
        return r / n

    def embed_text(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise ValueError("empty text")
        if text in self.canonicals:
            return self.canonicals[text].copy()
        for i, name in enumerate(self.region_names):
            if text == name:
                return self.region_bases[i].copy()
        # unknown text carries no region content: a synthetic encoder has no
        # semantics, so anything off-vocabulary is unrelated to the scene
        return self._off_region(hash_unit_vector(
            self.seed, f"text:{text}", self.embed_dim))

    def embed_texts(self, texts) -> np.ndarray:
        return np.stack([self.embed_text(t) for t in texts])

    def crop_embedding(self, region_counts: np.ndarray) -> np.ndarray:
        """Unit blend of region bases weighted by pixel counts in the crop."""
        v = np.asarray(region_counts, dtype=np.float64) @ self.region_bases
        n = np.linalg.norm(v)
        if n == 0.0:
            raise ValueError("crop covers no labeled pixels")
        return v / n

    def dino_pixel(self, region_id: int) -> np.ndarray:
        return self.dino_bases[region_id]
