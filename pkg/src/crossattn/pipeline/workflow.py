"""One function per CLI command. Each reads its inputs from the config's ``paths.*`` keys,
writes into its own output directory and leaves a manifest there."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .. import __version__
from ..asge import embedding_similarity_report, export_embeddings, train_asge
from ..label_graph import build_graph, export_graph, graph_summary, read_annotations, read_label_names
from ..nn_core import load_checkpoint, load_tensor, save_checkpoint
from .config import ConfigError, RunConfig, write_manifest
from .evaluation import format_table, metric_report, write_report
from .export import export_maps, localization_summary, write_summary
from .model import MultiLabelModel
from .synthetic import Dataset, gen_synthetic_dataset, location_masks, read_dataset, write_dataset
from .training import EpochRecord, Trainer, predict

log = logging.getLogger(__name__)

# which paths.* key a command writes to
OUTPUT_KEY = {
    "gen-synth": "data",
    "build-graph": "graph",
    "train-embeddings": "embeddings",
    "train": "checkpoint",
    "eval": "out",
    "export-attention": "out",
}

GRAPH_FILE = "graph.ckpt"
EMBEDDING_FILE = "embeddings.cmat"
MODEL_FILE = "model.ckpt"


def gen_synth(cfg: RunConfig) -> Path:
    out = cfg.path("data")
    ds = gen_synthetic_dataset(cfg.synthetic_spec(), cfg["seed"])
    write_dataset(ds, out, cfg["seed"])
    write_manifest(out, cfg, "gen-synth")
    return out


def build_label_graph(cfg: RunConfig) -> Path:
    out = cfg.path("graph")
    n = cfg["data.num_labels"]
    ann = read_annotations(cfg.path("annotations", "train_labels.txt"), n)
    names = read_label_names(cfg.path("labels", "labels.txt"), n)
    graph = build_graph(ann)
    export_graph(graph, out, names)
    save_checkpoint(out / GRAPH_FILE,
                    {"counts": graph.counts, "A": graph.A, "A_sym": graph.A_sym, "priors": graph.priors},
                    {"num_examples": str(graph.num_examples), "labels": "\t".join(names)})
    (out / "summary.txt").write_text(graph_summary(graph, names), encoding="utf-8")
    write_manifest(out, cfg, "build-graph")
    return out


def _load_graph(cfg: RunConfig) -> tuple[dict[str, np.ndarray], list[str]]:
    tensors, meta = load_checkpoint(cfg.path("graph") / GRAPH_FILE)
    n = tensors["A_sym"].shape[0]
    if n != cfg["data.num_labels"]:
        raise ConfigError(f"label graph has {n} labels, config says data.num_labels={cfg['data.num_labels']}")
    return tensors, meta["labels"].split("\t")


def train_embeddings(cfg: RunConfig) -> Path:
    out = cfg.path("embeddings")
    graph, names = _load_graph(cfg)
    result = train_asge(graph["A_sym"], cfg.asge_config())
    export_embeddings(out, result, names)
    report = embedding_similarity_report(result.embeddings, graph["A_sym"], cfg["asge.alpha"])
    report.to_csv(out / "similarity.csv")
    (out / "summary.txt").write_text(
        f"mean_residual={report.mean_residual!r}\nmax_residual={report.max_residual!r}\n"
        f"relaxed_fraction={report.relaxed_fraction!r}\nfinal_loss={result.losses[-1] if result.losses else 0.0!r}\n",
        encoding="utf-8")
    write_manifest(out, cfg, "train-embeddings")
    return out


def _check_dataset(cfg: RunConfig, ds: Dataset) -> None:
    spec = ds.spec
    for key, have in (("task", spec.task), ("data.num_labels", spec.num_labels), ("data.channels", spec.channels)):
        if cfg[key] != have:
            raise ConfigError(f"dataset at {cfg.path('data')} has {key}={have}, config says {cfg[key]}")


def _log_array(history: list[EpochRecord]) -> np.ndarray:
    return np.array([[r.epoch, r.lr, r.train_loss, r.val_map] for r in history]).reshape(-1, 4)


def _write_train_log(path: Path, history: list[EpochRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,lr,train_loss,val_mAP\n")
        for r in history:
            fh.write(f"{r.epoch},{float(r.lr)!r},{float(r.train_loss)!r},{float(r.val_map)!r}\n")


def train_classifier(cfg: RunConfig, resume: str | Path | None = None) -> Path:
    out = cfg.path("checkpoint")
    ds = read_dataset(cfg.path("data"))
    _check_dataset(cfg, ds)
    graph, _ = _load_graph(cfg)
    E = load_tensor(cfg.path("embeddings") / EMBEDDING_FILE)
    if E.shape != (cfg["data.num_labels"], cfg["asge.dim"]):
        raise ConfigError(f"embeddings have shape {E.shape}, config expects "
                          f"({cfg['data.num_labels']}, {cfg['asge.dim']})")
    model = MultiLabelModel(cfg.model_spec(), cfg["seed"])
    trainer = Trainer(model, E, cfg.train_spec(), graph["priors"], cfg["seed"])
    if resume is not None:
        tensors, meta = load_checkpoint(resume)
        if meta.get("model_hash") != cfg.model_digest():
            raise ConfigError(f"checkpoint {resume} was trained with a different model configuration")
        trainer.load_state(tensors)
        trainer.history = [EpochRecord(int(e), float(lr), float(loss), float(val))
                           for e, lr, loss, val in tensors["trainer/log"]]
    trainer.fit(ds.train.inputs, ds.train.labels, ds.test.inputs, ds.test.labels)
    out.mkdir(parents=True, exist_ok=True)
    state = trainer.state()
    state["trainer/log"] = _log_array(trainer.history)
    meta = {"model_hash": cfg.model_digest(), "config_hash": cfg.digest(), "code_version": __version__,
            "task": cfg["task"], "attention": cfg["model.attention"], "epoch": str(trainer.epoch)}
    save_checkpoint(out / MODEL_FILE, state, meta)
    _write_train_log(out / "train_log.csv", trainer.history)
    write_manifest(out, cfg, "train")
    return out


def load_model(cfg: RunConfig) -> tuple[MultiLabelModel, Trainer]:
    path = cfg.path("checkpoint") / MODEL_FILE
    tensors, meta = load_checkpoint(path)
    if meta.get("model_hash") != cfg.model_digest():
        raise ConfigError(f"checkpoint {path} does not match the configured model "
                          f"(hash {meta.get('model_hash')} vs {cfg.model_digest()})")
    model = MultiLabelModel(cfg.model_spec(), cfg["seed"])
    trainer = Trainer(model, tensors["embeddings"], cfg.train_spec(),
                      np.zeros(cfg["data.num_labels"]), cfg["seed"])
    trainer.load_state(tensors)
    model.eval()
    return model, trainer


def evaluate(cfg: RunConfig) -> dict[str, float]:
    out = cfg.path("out")
    model, trainer = load_model(cfg)
    ds = read_dataset(cfg.path("data"))
    _check_dataset(cfg, ds)
    scores, _, _ = predict(model, trainer.E, ds.test.inputs)
    report = metric_report(scores, ds.test.labels, cfg["task"], cfg["eval.threshold"],
                           cfg["eval.top_k"], cfg["eval.gap_k"])
    write_report(out, report, cfg["task"])
    write_manifest(out, cfg, "eval")
    log.info("\n%s", format_table(report, cfg["task"]))
    return report


def export_attention(cfg: RunConfig) -> Path:
    out = cfg.path("out")
    model, trainer = load_model(cfg)
    ds = read_dataset(cfg.path("data"))
    _check_dataset(cfg, ds)
    names = read_label_names(cfg.path("labels", "labels.txt"), cfg["data.num_labels"])
    test = ds.test
    scores, maps, grids = predict(model, trainer.E, test.inputs)
    in_grid = test.inputs.shape[1:-1]
    count = min(cfg["export.examples"], len(test))
    ids = [f"test{i:06d}" for i in range(count)]
    if cfg["export.categories"] == "true":
        picks = [list(np.flatnonzero(test.labels[i] > 0.5)) for i in range(count)]
    else:
        picks = [list(np.argsort(-scores[i], kind="stable")[:cfg["export.top"]]) for i in range(count)]
    rows, lines = [], []
    scales = cfg["model.scales"] if cfg["task"] == "image" else (1,)
    for scale, m, grid in zip(scales, maps, grids):
        masks = location_masks(test.boxes, in_grid, grid)
        tag = f"s{scale}_" if len(scales) > 1 else ""
        for row in export_maps(out, ids, names, picks, m.a[:count], m.z[:count], grid, masks[:count], tag):
            rows.append({"scale": scale, **row})
        if masks.any():
            summary = localization_summary(m.a, masks)
        else:
            # planted regions are smaller than half a cell at this resolution
            log.info("scale %d: no mask covers half a cell; localization skipped", scale)
            summary = {"pairs": 0.0}
        lines += [f"scale{scale}.{k}={v!r}" for k, v in summary.items()]
    write_summary(out / "mass_in_mask.csv", rows)
    (out / "localization.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_manifest(out, cfg, "export-attention")
    return out
