"""Metric reports: a flat ``metric=value`` file for machines and a table for people."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..loss_metrics import (global_average_precision, hit_at_one, mean_average_precision, perr,
                            prf_metrics)

PRF_KEYS = ("CP", "CR", "CF1", "OP", "OR", "OF1")


def metric_report(scores: np.ndarray, labels: np.ndarray, task: str, threshold: float = 0.5,
                  top_k: int = 3, gap_k: int = 20) -> dict[str, float]:
    """Image task: mAP plus the All (thresholded) and Top-k blocks. Video task: Hit@1, PERR, mAP, GAP."""
    maps = mean_average_precision(scores, labels)
    report: dict[str, float] = {"examples": float(len(labels)), "mAP": maps.value,
                                "mAP.excluded_classes": float(len(maps.excluded))}
    if task == "image":
        blocks = (("all", prf_metrics(scores, labels, threshold)),
                  (f"top{top_k}", prf_metrics(scores, labels, top_k=top_k)))
        for name, res in blocks:
            for key, val in res.as_dict().items():
                report[f"{name}.{key}"] = val
    elif task == "video":
        report["Hit@1"] = hit_at_one(scores, labels)
        report["PERR"] = perr(scores, labels)
        report[f"GAP@{gap_k}"] = global_average_precision(scores, labels, gap_k)
    else:
        raise ValueError(f"unknown task {task!r}")
    return report


def format_report(report: dict[str, float]) -> str:
    return "".join(f"{k}={v!r}\n" for k, v in report.items())


def parse_report(text: str) -> dict[str, float]:
    out = {}
    for line in text.splitlines():
        if line.strip():
            key, val = line.split("=", 1)
            out[key] = float(val)
    return out


def format_table(report: dict[str, float], task: str) -> str:
    """Percentages, laid out like the usual benchmark tables."""
    pct = lambda v: f"{100 * v:6.2f}"  # noqa: E731
    lines = [f"examples: {int(report['examples'])}"]
    if task == "image":
        blocks = [k.split(".")[0] for k in report if k.endswith(".CP")]
        lines.append(f"{'':8s}{'mAP':>7s}" + "".join(f"{k:>7s}" for k in PRF_KEYS))
        for b in blocks:
            label = "All" if b == "all" else b.replace("top", "Top-")
            lines.append(f"{label:8s}{pct(report['mAP']):>7s}"
                         + "".join(f"{pct(report[f'{b}.{k}']):>7s}" for k in PRF_KEYS))
    else:
        keys = ["Hit@1", "PERR", "mAP"] + [k for k in report if k.startswith("GAP@")]
        lines.append("".join(f"{k:>8s}" for k in keys))
        lines.append("".join(f"{pct(report[k]):>8s}" for k in keys))
    return "\n".join(lines) + "\n"


def write_report(out_dir: str | Path, report: dict[str, float], task: str) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.txt").write_text(format_report(report), encoding="utf-8")
    (out / "metrics_table.txt").write_text(format_table(report, task), encoding="utf-8")
    return out / "metrics.txt"


def read_report(path: str | Path) -> dict[str, float]:
    return parse_report(Path(path).read_text(encoding="utf-8"))
