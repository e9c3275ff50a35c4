"""Resolved run configuration: loss weights, refinement settings and pooling sizes.

Files are TOML (or JSON, e.g. a previous report's ``config`` block) with
three optional tables::

    [weights]            # LossWeights fields, units in the key names
    d_tol_cm = 0.05

    [refine]             # RefineConfig fields except weights
    steps = 1000
    optimizer = "adaptive"

    [pooling]
    k = 15
    downsample_factor = 10

Missing keys take their defaults; unknown keys are an error.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError, ParseError
from .losses import LossWeights
from .refine import RefineConfig
from .spatial import DEFAULT_DOWNSAMPLE_FACTOR, DEFAULT_POOLING_K


@dataclass
class PoolingConfig:
    k: int = DEFAULT_POOLING_K
    downsample_factor: int = DEFAULT_DOWNSAMPLE_FACTOR

    def __post_init__(self):
        if self.k < 1 or self.downsample_factor < 1:
            raise ConfigError("pooling k and downsample_factor must be >= 1")


@dataclass
class Config:
    weights: LossWeights = field(default_factory=LossWeights)
    refine: RefineConfig = field(default_factory=RefineConfig)
    pooling: PoolingConfig = field(default_factory=PoolingConfig)

    def __post_init__(self):
        # one source of truth for the weights
        self.refine.weights = self.weights

    def as_dict(self):
        ref = self.refine.as_dict()
        ref.pop("weights")
        return {
            "weights": self.weights.as_dict(),
            "refine": ref,
            "pooling": {"k": self.pooling.k, "downsample_factor": self.pooling.downsample_factor},
        }

    @classmethod
    def from_mapping(cls, data):
        data = dict(data or {})
        unknown = set(data) - {"weights", "refine", "pooling"}
        if unknown:
            raise ConfigError(f"unknown config tables: {sorted(unknown)}")
        weights = LossWeights.from_mapping(data.get("weights", {}))
        ref = dict(data.get("refine", {}))
        if "weights" in ref:
            raise ConfigError("put loss weights in the [weights] table, not under [refine]")
        refine = RefineConfig.from_mapping({**ref, "weights": weights})
        pool = dict(data.get("pooling", {}))
        unknown = set(pool) - {"k", "downsample_factor"}
        if unknown:
            raise ConfigError(f"unknown pooling keys: {sorted(unknown)}")
        try:
            pooling = PoolingConfig(**pool)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        return cls(weights, refine, pooling)


def read_mapping(path):
    """Parse a TOML or JSON file into a dict (JSON when the suffix is ``.json``)."""
    try:
        if os.path.splitext(str(path))[1].lower() == ".json":
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
            # a full report carries its config under "config"
            if isinstance(data, dict) and "config" in data and isinstance(data["config"], dict):
                data = data["config"]
            return data
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(str(exc), path) from None


def load_config(path=None, overrides=None):
    """Defaults, then ``path`` (if any), then ``overrides`` (nested dict) on top."""
    data = read_mapping(path) if path else {}
    for table, vals in (overrides or {}).items():
        data.setdefault(table, {}).update(vals)
    return Config.from_mapping(data)
