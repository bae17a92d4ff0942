"""Scenario configuration (YAML) and deterministic seed derivation."""

from __future__ import annotations

import hashlib
import json
import os
import zlib
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np
import yaml

from ..amputation import AmputationSpec
from ..cohortgen import SynthConfig
from ..errors import ConfigError
from ..features import MODEL_BLOCKS, TABLE1_MODELS

OUT_ENV = "HDMI_OUT"


def derive_seed(master, replicate, label):
    """Stable 32-bit seed for (master seed, replicate index, label)."""
    key = [int(master) & 0xFFFFFFFF, int(replicate), zlib.crc32(str(label).encode())]
    return int(np.random.SeedSequence(key).generate_state(1)[0])


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    synthetic: Optional[dict] = field(default_factory=dict)
    base_file: Optional[str] = None
    n_replicates: int = 100
    amputation: dict = field(default_factory=dict)
    models: tuple = TABLE1_MODELS
    hr_true: float = 1.0
    seed: int = 0
    out_dir: str = "hdmi_out"
    jobs: int = 1
    resample: bool = True
    calibrate: Optional[str] = "censoring"
    m: int = 10
    k: int = 5
    n_folds: int = 5
    caliper: float = 0.2
    caliper_mode: str = "logit_sd"
    prevalence_threshold: float = 0.01

    def __post_init__(self):
        if self.n_replicates < 1:
            raise ConfigError("n_replicates must be >= 1")
        models = tuple(self.models)
        if not models:
            raise ConfigError("model list is empty")
        unknown = [m for m in models if m not in MODEL_BLOCKS]
        if unknown:
            raise ConfigError(f"unknown models: {unknown}")
        if len(set(models)) != len(models):
            raise ConfigError("duplicate models in model list")
        object.__setattr__(self, "models", models)
        if self.hr_true <= 0:
            raise ConfigError("hr_true must be positive")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.caliper_mode not in ("logit_sd", "absolute"):
            raise ConfigError("caliper_mode must be logit_sd or absolute")
        if self.base_file is None and self.synthetic is None:
            raise ConfigError("give either a synthetic base configuration or base_file")
        # validate nested settings early
        self.amputation_spec()
        if self.base_file is None:
            self.synth_config()

    def amputation_spec(self):
        return AmputationSpec.from_dict(self.amputation)

    def synth_config(self):
        d = dict(self.synthetic or {})
        d.setdefault("hr_true", 1.0)
        return SynthConfig.from_dict(d)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        allowed = {f.name for f in fields(cls)}
        extra = set(d) - allowed
        if extra:
            raise ConfigError(f"unknown scenario settings: {sorted(extra)}")
        if "models" in d:
            d["models"] = tuple(d["models"])
        return cls(**d)

    @classmethod
    def from_yaml(cls, path):
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        if data.get("base_file") and not os.path.isabs(data["base_file"]):
            data["base_file"] = os.path.join(os.path.dirname(os.path.abspath(path)), data["base_file"])
        return cls.from_dict(data)

    def to_dict(self):
        d = asdict(self)
        d["models"] = list(self.models)
        return d

    def with_overrides(self, **kw):
        d = self.to_dict()
        d.update({k: v for k, v in kw.items() if v is not None})
        return ScenarioConfig.from_dict(d)

    def resolved_out_dir(self):
        return os.environ.get(OUT_ENV) or self.out_dir

    def config_hash(self):
        """Hash of everything that determines outputs (not jobs or out_dir)."""
        d = self.to_dict()
        d.pop("jobs")
        d.pop("out_dir")
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()
