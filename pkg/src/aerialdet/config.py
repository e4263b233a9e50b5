"""One config object covering every pipeline stage, with strict JSON I/O.

The file format is a JSON object with one section per stage; unknown
sections or keys are rejected rather than silently dropped, so typos fail
fast. ``PipelineConfig.to_json`` emits the effective configuration, which
the CLI echoes into every output file for provenance.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .clustering import NmmConfig
from .evaluation import EvalConfig
from .fusion import FuseConfig
from .heatmap import HeatmapConfig
from .loss import LossConfig
from .resample import MrmConfig


@dataclass(frozen=True)
class RefineConfig:
    topk: int = 10
    max_overlap: float = 0.5

    def __post_init__(self) -> None:
        if self.topk < 1:
            raise ValueError("topk must be >= 1")
        if not 0.0 <= self.max_overlap < 1.0:
            raise ValueError(f"max_overlap must be in [0, 1), got {self.max_overlap}")


_SECTIONS = {
    "nmm": NmmConfig,
    "refine": RefineConfig,
    "heatmap": HeatmapConfig,
    "loss": LossConfig,
    "fuse": FuseConfig,
    "eval": EvalConfig,
    "mrm": MrmConfig,
}

_TUPLE_FIELDS = {"iou_thresholds", "rare_categories"}


@dataclass(frozen=True)
class PipelineConfig:
    nmm: NmmConfig = field(default_factory=NmmConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    heatmap: HeatmapConfig = field(default_factory=HeatmapConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    fuse: FuseConfig = field(default_factory=FuseConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    mrm: MrmConfig = field(default_factory=MrmConfig)
    seed: int = 0
    jobs: int = 0  # 0 = all available cores

    def to_json(self) -> dict:
        doc: dict = {}
        for name, cls in _SECTIONS.items():
            section = dataclasses.asdict(getattr(self, name))
            doc[name] = {
                k: (list(v) if isinstance(v, tuple) else v) for k, v in section.items()
            }
        doc["seed"] = self.seed
        doc["jobs"] = self.jobs
        return doc

    @staticmethod
    def from_json(doc: dict) -> "PipelineConfig":
        unknown = set(doc) - set(_SECTIONS) - {"seed", "jobs"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        kwargs: dict = {}
        for name, cls in _SECTIONS.items():
            if name not in doc:
                continue
            section = doc[name]
            valid = {f.name for f in dataclasses.fields(cls)}
            bad = set(section) - valid
            if bad:
                raise ValueError(f"unknown keys in config section '{name}': {sorted(bad)}")
            coerced = {
                k: (tuple(v) if k in _TUPLE_FIELDS and v is not None else v)
                for k, v in section.items()
            }
            kwargs[name] = cls(**coerced)
        if "seed" in doc:
            kwargs["seed"] = int(doc["seed"])
        if "jobs" in doc:
            kwargs["jobs"] = int(doc["jobs"])
        return PipelineConfig(**kwargs)

    def override(self, section: str, **changes) -> "PipelineConfig":
        """Copy with some fields of one section replaced (CLI flags win)."""
        changes = {k: v for k, v in changes.items() if v is not None}
        if not changes:
            return self
        updated = dataclasses.replace(getattr(self, section), **changes)
        return dataclasses.replace(self, **{section: updated})


def load_config(path: str | os.PathLike | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    with open(path) as fh:
        return PipelineConfig.from_json(json.load(fh))


def save_config(cfg: PipelineConfig, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_json(), fh, indent=2)
        fh.write("\n")
