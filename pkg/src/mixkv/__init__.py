"""Inference engine and cache analytics for mixed attention layouts."""

from .config import (
    CacheLayout,
    ConfigError,
    LayerSpec,
    ModelConfig,
    ValidationReport,
    cache_groups,
    load_config,
    parse_config,
    serialize_config,
    validate,
)
from .engine import GenerationRequest, Greedy, Model, Temperature
from .presets import PAPER24, PRESET_NAMES, TOY8, preset
from .weights import ModelWeights, init_random, load, save

__all__ = [
    "CacheLayout",
    "ConfigError",
    "GenerationRequest",
    "Greedy",
    "LayerSpec",
    "Model",
    "ModelConfig",
    "ModelWeights",
    "PAPER24",
    "PRESET_NAMES",
    "TOY8",
    "Temperature",
    "ValidationReport",
    "cache_groups",
    "init_random",
    "load",
    "load_config",
    "parse_config",
    "preset",
    "save",
    "serialize_config",
    "validate",
]
