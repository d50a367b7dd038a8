"""Small run configurations rooted in a temporary directory."""

from crossattn.pipeline import RunConfig

TINY = {
    "seed": 3,
    "data.num_labels": 6,
    "data.n_train": 48,
    "data.n_test": 24,
    "data.grid": 8,
    "data.channels": 4,
    "data.distractors": 1,
    "data.distractor_patterns": 3,
    "data.frames": 32,
    "data.segment": 8,
    "model.widths": (6, 6, 6),
    "model.cmt_hidden": 8,
    "asge.hidden": (16, 16),
    "asge.dim": 8,
    "asge.epochs": 30,
    "train.epochs": 2,
    "train.batch_size": 16,
    "export.examples": 2,
}


def tiny_config(root, overrides=None) -> RunConfig:
    cfg = RunConfig(TINY)
    for key in ("data", "graph", "embeddings", "checkpoint", "out"):
        cfg.set(f"paths.{key}", str(root / key))
    for key, value in (overrides or {}).items():
        cfg.set(key, value)
    cfg.validate()
    return cfg
