"""Configuration, planted data, training, evaluation, export and the CLI."""

from .config import ConfigError, RunConfig, load_config, parse_config, write_manifest
from .model import ModelSpec, MultiLabelModel
from .synthetic import Dataset, Split, SpecError, SyntheticSpec, gen_synthetic_dataset, location_masks
from .training import EpochRecord, Trainer, TrainSpec, predict

__all__ = [
    "ConfigError", "Dataset", "EpochRecord", "ModelSpec", "MultiLabelModel", "RunConfig",
    "SpecError", "Split", "SyntheticSpec", "TrainSpec", "Trainer", "gen_synthetic_dataset",
    "load_config", "location_masks", "parse_config", "predict", "write_manifest",
]
