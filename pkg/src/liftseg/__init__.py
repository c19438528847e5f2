"""Multi-view 2D-to-3D feature lifting and language-guided superpoint
segmentation, with brute-force reference implementations for every stage."""

from .config import PipelineConfig, load_config, save_config
from .errors import (
    BehindCameraError,
    ConfigError,
    DegenerateMaskError,
    EmptyInputError,
    FixtureIOError,
    InvalidDepthError,
    LiftSegError,
    OutOfBoundsError,
    ShapeError,
    StageError,
    UndefinedLossError,
)
from .fixtures import SyntheticSceneSpec, gen_fixtures
from .fusion import ParameterBundle, QuerySet, TextEmbedding
from .geometry import CameraView, PointCloud, SpatialIndex
from .imagefeat import FeatureMap, InstanceMask, SoftMask, TokenGrid
from .lossmetrics import EvalRecord
from .pipeline import run_oracle, run_pipeline
from .superpoint import SuperpointFeatures, SuperpointPartition

__version__ = "0.1.0"

__all__ = [
    "BehindCameraError", "CameraView", "ConfigError", "DegenerateMaskError",
    "EmptyInputError", "EvalRecord", "FeatureMap", "FixtureIOError",
    "InstanceMask", "InvalidDepthError", "LiftSegError", "OutOfBoundsError",
    "ParameterBundle", "PipelineConfig", "PointCloud", "QuerySet",
    "ShapeError", "SoftMask", "SpatialIndex", "StageError",
    "SuperpointFeatures", "SuperpointPartition", "SyntheticSceneSpec",
    "TextEmbedding", "TokenGrid", "UndefinedLossError", "gen_fixtures",
    "load_config", "run_oracle", "run_pipeline", "save_config",
]
