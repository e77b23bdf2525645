"""Volume-rendered language fields.

Trains a radiance field jointly with a scale-conditioned language-embedding
field from posed images plus a per-image multi-crop embedding container, then
answers open-vocabulary queries as relevancy rasters over rendered views.
"""

from .errors import (CheckpointFormatError, LangfieldError, ManifestError,
                     PyramidFormatError, TrainDiverged)
from .field import FieldConfig, FieldParams, load_checkpoint, save_checkpoint
from .pyramid import FeaturePyramid, PyramidConfig, read_pyramid, write_pyramid
from .query import (QueryContext, RelevancyMap, build_pointcloud,
                    candidate_scales, existence_check, localize,
                    relevancy_score, render_relevancy_map, select_scale)
from .render import RenderConfig, render_view, render_view_language
from .scene import SceneDataset, load_dataset
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "CheckpointFormatError", "LangfieldError", "ManifestError",
    "PyramidFormatError", "TrainDiverged",
    "FieldConfig", "FieldParams", "load_checkpoint", "save_checkpoint",
    "FeaturePyramid", "PyramidConfig", "read_pyramid", "write_pyramid",
    "QueryContext", "RelevancyMap", "build_pointcloud", "candidate_scales",
    "existence_check", "localize", "relevancy_score", "render_relevancy_map",
    "select_scale",
    "RenderConfig", "render_view", "render_view_language",
    "SceneDataset", "load_dataset",
    "TrainConfig", "train",
    "__version__",
]
