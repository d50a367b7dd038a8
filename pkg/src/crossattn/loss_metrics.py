"""Class-imbalance weighted BCE and the image/video multi-label evaluation metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .nn_core import Tensor, tensor
from .nn_core import ops

log = logging.getLogger(__name__)

BCE_EPS = 1e-12


def class_weights(y: np.ndarray, priors: np.ndarray, beta: float) -> np.ndarray:
    """w_k = y_k e^{beta (1 - p_k)} + (1 - y_k) e^{beta p_k}; broadcasts over a batch axis."""
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(priors, dtype=np.float64)
    return y * np.exp(beta * (1.0 - p)) + (1.0 - y) * np.exp(beta * p)


def weighted_bce(yhat, y: np.ndarray, w: np.ndarray, eps: float = BCE_EPS) -> Tensor:
    """-sum_k w_k [y_k log yhat_k + (1 - y_k) log(1 - yhat_k)], averaged over the batch axis."""
    yhat = ops.clip(tensor(yhat), eps, 1.0 - eps)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    per = (ops.log(yhat) * y + ops.log(1.0 - yhat) * (1.0 - y)) * w
    total = -per.sum(axis=-1)
    return total.mean() if total.ndim else total


# -- ranking metrics ------------------------------------------------------

def _rank(scores: np.ndarray) -> np.ndarray:
    """Descending by score, ties by ascending index."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels) > 0.5
    npos = int(labels.sum())
    if npos == 0:
        raise ValueError("average precision is undefined without positives")
    hits = labels[_rank(scores)]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, npos + 1) / ranks))


@dataclass
class MapResult:
    value: float
    per_class: dict[int, float]
    excluded: list[int] = field(default_factory=list)


def mean_average_precision(scores: np.ndarray, labels: np.ndarray) -> MapResult:
    """Mean AP over classes with at least one positive; empty classes are reported, not scored."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    per, excluded = {}, []
    for k in range(scores.shape[1]):
        if labels[:, k].sum() == 0:
            excluded.append(k)
            continue
        per[k] = average_precision(scores[:, k], labels[:, k])
    if excluded:
        log.warning("mAP: %d classes without positives excluded: %s", len(excluded), excluded)
    value = float(np.mean(list(per.values()))) if per else 0.0
    return MapResult(value, per, excluded)


def map_score(scores: np.ndarray, labels: np.ndarray) -> float:
    return mean_average_precision(scores, labels).value


# -- precision / recall / F1 ------------------------------------------------

def predict_labels(scores: np.ndarray, threshold: float | None = 0.5, top_k: int | None = None) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if top_k is not None:
        pred = np.zeros(scores.shape, dtype=bool)
        order = np.argsort(-scores, axis=1, kind="stable")[:, :top_k]
        np.put_along_axis(pred, order, True, axis=1)
        return pred
    return scores >= threshold


def _ratio(num: float, den: float) -> float:
    return float(num / den) if den > 0 else 0.0


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass
class PrfResult:
    CP: float
    CR: float
    CF1: float
    OP: float
    OR: float
    OF1: float
    excluded: list[int] = field(default_factory=list)
    zero_precision_denominator: list[int] = field(default_factory=list)

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in ("CP", "CR", "CF1", "OP", "OR", "OF1")}


def prf_metrics(scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5,
                top_k: int | None = None) -> PrfResult:
    """Per-class (C*) and pooled (O*) precision, recall and F1.

    Classes absent from ``labels`` are left out of the per-class averages;
    a class that is never predicted counts as precision 0. Both lists are
    returned for reporting.
    """
    labels = np.asarray(labels) > 0.5
    pred = predict_labels(scores, threshold, top_k)
    tp = (pred & labels).sum(axis=0).astype(np.float64)
    fp = (pred & ~labels).sum(axis=0).astype(np.float64)
    fn = (~pred & labels).sum(axis=0).astype(np.float64)
    present = np.flatnonzero(labels.sum(axis=0) > 0)
    excluded = np.flatnonzero(labels.sum(axis=0) == 0).tolist()
    zero_den = [int(k) for k in present if tp[k] + fp[k] == 0]
    cp = float(np.mean([_ratio(tp[k], tp[k] + fp[k]) for k in present])) if present.size else 0.0
    cr = float(np.mean([_ratio(tp[k], tp[k] + fn[k]) for k in present])) if present.size else 0.0
    op = _ratio(tp.sum(), tp.sum() + fp.sum())
    orr = _ratio(tp.sum(), tp.sum() + fn.sum())
    return PrfResult(cp, cr, _f1(cp, cr), op, orr, _f1(op, orr), excluded, zero_den)


# -- video metrics -----------------------------------------------------------

def hit_at_one(scores: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels) > 0.5
    top = np.argsort(-np.asarray(scores, dtype=np.float64), axis=1, kind="stable")[:, 0]
    return float(np.mean(labels[np.arange(labels.shape[0]), top]))


def perr(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mean over examples with any true label of precision within the top-|truth| predictions."""
    labels = np.asarray(labels) > 0.5
    order = np.argsort(-np.asarray(scores, dtype=np.float64), axis=1, kind="stable")
    vals = []
    for i in range(labels.shape[0]):
        n = int(labels[i].sum())
        if n == 0:
            continue
        vals.append(labels[i, order[i, :n]].mean())
    return float(np.mean(vals)) if vals else 0.0


def global_average_precision(scores: np.ndarray, labels: np.ndarray, top_k: int = 20) -> float:
    """AP over the pooled top-``top_k`` predictions of every example, ranked globally.

    The denominator is the total number of true labels, so positives that
    never make an example's top-k still cost recall.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels) > 0.5
    B, N = scores.shape
    k = min(top_k, N)
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    pooled_scores = np.take_along_axis(scores, order, axis=1).reshape(-1)
    pooled_hits = np.take_along_axis(labels, order, axis=1).reshape(-1)
    total_pos = int(labels.sum())
    if total_pos == 0:
        return 0.0
    hits = pooled_hits[_rank(pooled_scores)]
    ranks = np.flatnonzero(hits) + 1
    precisions = np.arange(1, ranks.size + 1) / ranks
    return float(precisions.sum() / total_pos)


def video_metrics(scores: np.ndarray, labels: np.ndarray, gap_k: int = 20) -> dict[str, float]:
    return {
        "Hit@1": hit_at_one(scores, labels),
        "PERR": perr(scores, labels),
        "mAP": map_score(scores, labels),
        f"GAP@{gap_k}": global_average_precision(scores, labels, gap_k),
    }


def image_metrics(scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5,
                  top_k: int = 3) -> dict[str, float]:
    out = {"mAP": map_score(scores, labels)}
    for key, val in prf_metrics(scores, labels, threshold).as_dict().items():
        out[f"all.{key}"] = val
    for key, val in prf_metrics(scores, labels, top_k=top_k).as_dict().items():
        out[f"top{top_k}.{key}"] = val
    return out
