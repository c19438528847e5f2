"""Pipeline configuration: one flat JSON document, explicit defaults.

Paths in a config file are resolved relative to the file's directory at
load time, so a fixture directory stays relocatable.  The effective
config (after CLI overrides) is echoed verbatim into every report for
provenance.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from . import fileio
from .errors import ConfigError


@dataclass(frozen=True)
class PipelineConfig:
    # fixture paths
    scene: str = "scene.ply"
    point_features: str = "point_features.htns"
    partition: str = "partition.json"
    views: tuple = ()
    features: tuple = ()
    masks: tuple = ()
    text: str = "text.htns"
    params: str = "params"
    truth: str = "truth.json"
    # model dims
    dim: int = 256
    heads: int = 8
    decoder_layers: int = 6
    # lifting (radius_instance falls back to radius when null)
    radius: float = 0.05
    radius_instance: float | None = None
    sigma: float = 2.0
    tau: float = 0.05
    theta_iou: float = 0.8
    theta_stab: float = 0.9
    # query selection / prediction
    n_seeds: int = 256
    num_queries: int = 32
    relevance_pooling: str = "max"
    logit_threshold: float = 0.0
    conf_threshold: float = 0.5
    # loss diagnostics
    loss_weights: tuple = (1.0, 1.0, 1.0, 0.1)
    temperature: float = 0.07
    # ablation toggles
    enable_vsd: bool = True
    enable_mlf: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "views", tuple(self.views))
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "masks", tuple(self.masks))
        object.__setattr__(self, "loss_weights", tuple(float(w) for w in self.loss_weights))

    def validate(self) -> None:
        if self.dim < 1 or self.heads < 1 or self.dim % self.heads != 0:
            raise ConfigError(
                f"dim must be a positive multiple of heads, got dim={self.dim}, "
                f"heads={self.heads}")
        if self.decoder_layers < 1:
            raise ConfigError(f"decoder_layers must be >= 1, got {self.decoder_layers}")
        for name in ("radius", "sigma", "tau", "temperature"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.radius_instance is not None and self.radius_instance <= 0.0:
            raise ConfigError(
                f"radius_instance must be positive when set, got {self.radius_instance}")
        if self.relevance_pooling not in ("max", "mean"):
            raise ConfigError(
                f"relevance_pooling must be 'max' or 'mean', got {self.relevance_pooling!r}")
        for name in ("theta_iou", "theta_stab", "conf_threshold"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if self.n_seeds < 1 or self.num_queries < 1:
            raise ConfigError("n_seeds and num_queries must be >= 1")
        if len(self.loss_weights) != 4 or any(w < 0.0 for w in self.loss_weights):
            raise ConfigError("loss_weights must be four non-negative numbers")
        if len(self.views) != len(self.features) or len(self.views) != len(self.masks):
            raise ConfigError(
                "views, features, and masks must list one path per view")
        if not self.views:
            raise ConfigError("at least one view is required")

    def to_json_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        for key in ("views", "features", "masks", "loss_weights"):
            doc[key] = list(doc[key])
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def resolved(self, base: str | Path) -> "PipelineConfig":
        """Rewrite all paths as absolute, relative to ``base``."""
        base = Path(base)

        def fix(p: str) -> str:
            return str((base / p).resolve()) if not Path(p).is_absolute() else p

        return dataclasses.replace(
            self,
            scene=fix(self.scene), point_features=fix(self.point_features),
            partition=fix(self.partition), text=fix(self.text),
            params=fix(self.params), truth=fix(self.truth),
            views=tuple(fix(p) for p in self.views),
            features=tuple(fix(p) for p in self.features),
            masks=tuple(fix(p) for p in self.masks))

    def replace(self, **kwargs) -> "PipelineConfig":
        return dataclasses.replace(self, **kwargs)


def save_config(path: str | Path, config: PipelineConfig) -> None:
    fileio.write_json(path, config.to_json_dict())


def load_config(path: str | Path, resolve: bool = True) -> PipelineConfig:
    config = PipelineConfig.from_json_dict(fileio.read_json(path))
    if resolve:
        config = config.resolved(Path(path).parent)
    return config
