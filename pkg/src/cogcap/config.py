"""One nested run configuration covering data generation through evaluation.

Every field has a default, the whole structure round-trips losslessly through
JSON, and unknown keys are rejected with the offending dotted path. A single
master seed drives every stage; modules keep their randomness apart through
the fixed stream ids in seeding.py, so one integer reproduces a whole run.

The prior's embedding width is not a free knob: it always equals the
aligner's embed_dim, so the prior section rejects an explicit embed_dim.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from cogcap.contrastive import AlignConfig
from cogcap.evaluation import EvalConfig
from cogcap.prior import PriorConfig
from cogcap.synth import GenerationConfig, PreprocessConfig
from cogcap import serialization as ser


class ConfigError(ValueError):
    pass


_SECTIONS = {
    "generation": GenerationConfig,
    "preprocess": PreprocessConfig,
    "align": AlignConfig,
    "prior": PriorConfig,
    "eval": EvalConfig,
}


@dataclass
class RunConfig:
    seed: int = 0
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        self.seed = int(self.seed)
        # the prior denoises embeddings the aligner produced, same width always
        self.prior = replace(self.prior, embed_dim=self.align.embed_dim)

    def to_dict(self) -> dict:
        out: dict = {"seed": self.seed}
        for name in _SECTIONS:
            out[name] = asdict(getattr(self, name))
        del out["prior"]["embed_dim"]
        return out

    @staticmethod
    def from_dict(data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError(f"config must be a JSON object, got {type(data).__name__}")
        unknown = sorted(set(data) - {"seed"} - set(_SECTIONS))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        kwargs: dict = {}
        for name, cls in _SECTIONS.items():
            section = data.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"config section {name!r} must be an object")
            allowed = {f.name for f in fields(cls)}
            if name == "prior":
                allowed.discard("embed_dim")
            bad = sorted(set(section) - allowed)
            if bad:
                raise ConfigError(f"unknown config keys: {[f'{name}.{k}' for k in bad]}")
            kwargs[name] = cls(**section)
        return RunConfig(seed=data.get("seed", 0), **kwargs)


def config_to_json(cfg: RunConfig) -> str:
    return ser.canonical_json(cfg.to_dict())


def load_run_config(path: str | Path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    return RunConfig.from_dict(data)


def run_config_hash(cfg: RunConfig) -> str:
    return ser.config_hash(cfg.to_dict())
