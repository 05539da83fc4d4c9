"""Experiment configuration with full-default materialisation and JSON I/O."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from lsdm.core.autoencoder import StepOneConfig
from lsdm.core.matching import StepTwoConfig
from lsdm.data import CircleModelConfig
from lsdm.diffusion import DiffusionConfig

GENERATORS = ("lsdm", "diffusion")


def default_step_one():
    return StepOneConfig(epochs=400, batch=64)


def default_step_two():
    return StepTwoConfig(steps=1000, ema_decay=0.99)


def default_diffusion():
    return DiffusionConfig(horizon=5.0, n_steps=200, steps=3000, batch=64)


@dataclass
class ExperimentConfig:
    data: CircleModelConfig = field(default_factory=CircleModelConfig)
    step_one: StepOneConfig = field(default_factory=default_step_one)
    step_two: StepTwoConfig = field(default_factory=default_step_two)
    diffusion: DiffusionConfig = field(default_factory=default_diffusion)
    generator: str = "lsdm"
    m: int = 1
    d: int = 2
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    out_dir: str = "runs"
    range_grid: int = 200
    save_checkpoints: bool = True

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"generator must be one of {GENERATORS}")
        if self.m < 1 or self.d < 0:
            raise ValueError("need m >= 1 and d >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        """Digest of the resolved config, excluding where it is written."""
        doc = self.to_dict()
        doc.pop("out_dir")
        doc.pop("seeds")
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:12]

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        kw = {}
        for name, sub in (("data", CircleModelConfig), ("step_one", StepOneConfig),
                          ("step_two", StepTwoConfig), ("diffusion", DiffusionConfig)):
            base = asdict(getattr(cls(), name))
            over = doc.pop(name, {}) or {}
            unknown = set(over) - set(base)
            if unknown:
                raise ValueError(f"unknown {name} keys: {sorted(unknown)}")
            base.update(over)
            kw[name] = sub(**base)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw.update(doc)
        return cls(**kw)

    def with_delta(self, delta: dict) -> "ExperimentConfig":
        """Apply dotted-key overrides such as ``{"data.n": 25}``."""
        doc = self.to_dict()
        for key, value in delta.items():
            node = doc
            parts = key.split(".")
            for p in parts[:-1]:
                if p not in node or not isinstance(node[p], dict):
                    raise KeyError(f"unknown config section in {key!r}")
                node = node[p]
            if parts[-1] not in node:
                raise KeyError(f"unknown config key {key!r}")
            node[parts[-1]] = value
        return ExperimentConfig.from_dict(doc)


def load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


def save_config(cfg: ExperimentConfig, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
