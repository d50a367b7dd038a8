"""Label co-occurrence graph built from multi-label annotations."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .nn_core.io import save_csv


class MalformedAnnotations(ValueError):
    pass


@dataclass
class AnnotationSet:
    num_labels: int
    examples: list[frozenset[int]] = field(default_factory=list)
    ids: list[str] | None = None

    def __post_init__(self):
        if self.num_labels < 1:
            raise MalformedAnnotations("num_labels must be positive")
        cleaned = []
        for i, labels in enumerate(self.examples):
            s = frozenset(int(k) for k in labels)
            bad = [k for k in s if k < 0 or k >= self.num_labels]
            if bad:
                raise MalformedAnnotations(
                    f"example {i}: label indices {sorted(bad)} outside 0..{self.num_labels - 1}")
            cleaned.append(s)
        self.examples = cleaned

    def __len__(self) -> int:
        return len(self.examples)

    def to_matrix(self) -> np.ndarray:
        """Binary B x N indicator matrix."""
        Y = np.zeros((len(self.examples), self.num_labels))
        for i, labels in enumerate(self.examples):
            Y[i, sorted(labels)] = 1.0
        return Y

    @classmethod
    def from_matrix(cls, Y: np.ndarray, ids: list[str] | None = None) -> "AnnotationSet":
        Y = np.asarray(Y)
        return cls(Y.shape[1], [frozenset(np.flatnonzero(row > 0.5).tolist()) for row in Y], ids)


@dataclass
class LabelGraph:
    counts: np.ndarray
    A: np.ndarray
    A_sym: np.ndarray
    priors: np.ndarray
    num_examples: int

    @property
    def num_labels(self) -> int:
        return self.counts.shape[0]

    def unobserved(self) -> list[int]:
        return np.flatnonzero(np.diag(self.counts) == 0).tolist()


def count_cooccurrence(ann: AnnotationSet) -> np.ndarray:
    """counts[i, j] = number of examples carrying both i and j (diagonal: per-label counts)."""
    Y = ann.to_matrix().astype(np.int64)
    return Y.T @ Y


def conditional_matrix(counts: np.ndarray) -> np.ndarray:
    """A[i, j] = P(i | j) = counts[i, j] / counts[j, j]; columns of unseen labels stay zero."""
    counts = np.asarray(counts)
    occ = np.diag(counts).astype(np.float64)
    A = np.zeros(counts.shape, dtype=np.float64)
    seen = occ > 0
    A[:, seen] = counts[:, seen] / occ[seen]
    return A


def symmetrize(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"symmetrize needs a square matrix, got {A.shape}")
    return (A + A.T) / 2


def label_priors(ann: AnnotationSet) -> np.ndarray:
    if len(ann) == 0:
        raise MalformedAnnotations("label priors need at least one example")
    return np.diag(count_cooccurrence(ann)) / len(ann)


def build_graph(ann: AnnotationSet) -> LabelGraph:
    counts = count_cooccurrence(ann)
    A = conditional_matrix(counts)
    return LabelGraph(counts=counts, A=A, A_sym=symmetrize(A),
                      priors=label_priors(ann), num_examples=len(ann))


# -- file formats ---------------------------------------------------------

def parse_annotations(lines: Iterable[str], num_labels: int | None = None) -> AnnotationSet:
    """Parse ``example_id<TAB>space-separated label indices`` lines.

    When ``num_labels`` is omitted it is inferred as max index + 1.
    """
    ids, examples = [], []
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        if "\t" not in line:
            raise MalformedAnnotations(f"line {lineno}: expected 'id<TAB>labels'")
        ex_id, rest = line.split("\t", 1)
        try:
            labels = [int(tok) for tok in rest.split()]
        except ValueError as exc:
            raise MalformedAnnotations(f"line {lineno}: non-integer label in {rest!r}") from exc
        ids.append(ex_id)
        examples.append(labels)
    if num_labels is None:
        num_labels = 1 + max((max(e) for e in examples if e), default=0)
    return AnnotationSet(num_labels, examples, ids)


def read_annotations(path: str | Path, num_labels: int | None = None) -> AnnotationSet:
    with open(path, encoding="utf-8") as fh:
        return parse_annotations(fh, num_labels)


def write_annotations(path: str | Path, ann: AnnotationSet) -> None:
    ids = ann.ids or [f"ex{i:06d}" for i in range(len(ann))]
    with open(path, "w", encoding="utf-8") as fh:
        for ex_id, labels in zip(ids, ann.examples):
            fh.write(f"{ex_id}\t{' '.join(str(k) for k in sorted(labels))}\n")


def read_label_names(path: str | Path | None, num_labels: int) -> list[str]:
    if path is None or not Path(path).exists():
        return [f"label_{k}" for k in range(num_labels)]
    with open(path, encoding="utf-8") as fh:
        names = [ln.strip() for ln in fh.read().splitlines()]
    names = [n for n in names if n]
    if len(names) < num_labels:
        names += [f"label_{k}" for k in range(len(names), num_labels)]
    return names[:num_labels]


def export_graph(graph: LabelGraph, out_dir: str | Path, names: Sequence[str]) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for fname, mat in (("counts.csv", graph.counts), ("A.csv", graph.A), ("A_sym.csv", graph.A_sym)):
        save_csv(out / fname, mat, header=list(names), index=list(names))
        written.append(out / fname)
    save_csv(out / "priors.csv", graph.priors[:, None], header=["prior"], index=list(names))
    written.append(out / "priors.csv")
    return written


def graph_summary(graph: LabelGraph, names: Sequence[str]) -> str:
    lines = [f"examples={graph.num_examples}", f"labels={graph.num_labels}"]
    missing = graph.unobserved()
    lines.append("unobserved_labels=" + (",".join(names[k] for k in missing) if missing else "none"))
    off = graph.A_sym[~np.eye(graph.num_labels, dtype=bool)]
    lines.append(f"mean_offdiag_A_sym={off.mean() if off.size else 0.0!r}")
    for k, name in enumerate(names):
        lines.append(f"prior.{name}={graph.priors[k]!r}")
    return "\n".join(lines) + "\n"
