"""Produce embedding containers for the langfield trainer and serve text
embeddings over HTTP.

Crops are laid out exactly like the trainer's supervision lattice; the
container byte format is the trainer's. Embeddings come from a pretrained
image/text encoder or, in synthetic mode, from a deterministic hash-based
embedder that needs no model download.
"""

from .config import ExtractorConfig
from .layout import LayoutMismatch, check_layout_manifest, layout_summary
from .synthetic import CANONICAL_PHRASES, SyntheticVocabulary
from .extract import extract_dino, extract_pyramids, load_dataset_frames

__all__ = [
    "ExtractorConfig",
    "LayoutMismatch",
    "check_layout_manifest",
    "layout_summary",
    "CANONICAL_PHRASES",
    "SyntheticVocabulary",
    "extract_pyramids",
    "extract_dino",
    "load_dataset_frames",
]
