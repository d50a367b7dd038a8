"""Planted multi-label benchmark with block-structured label co-occurrence.

Every label owns a fixed channel pattern. When a label is present its pattern
is added to one randomly chosen cell region (image) or time segment (video),
on top of Gaussian noise. Optional distractor blocks carry patterns from a
separate unlabeled pool. Label regions are kept as ground-truth boxes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..label_graph import AnnotationSet, build_graph, read_annotations, write_annotations
from ..nn_core import make_rng
from ..nn_core.io import load_tensor, save_tensor


class SpecError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    task: str = "image"
    num_labels: int = 12
    groups: int = 2
    q_in: float = 0.35
    q_out: float = 0.05
    noise: float = 0.5
    amplitude: float = 1.0
    n_train: int = 2000
    n_test: int = 500
    channels: int = 6
    grid: int = 16
    region: int = 4
    frames: int = 64
    segment: int = 16
    distractors: int = 0
    distractor_patterns: int = 6

    def validate(self) -> None:
        if self.task not in ("image", "video"):
            raise SpecError(f"task must be image or video, not {self.task!r}")
        if self.num_labels < 1 or self.groups < 1 or self.groups > self.num_labels:
            raise SpecError("need 1 <= groups <= num_labels")
        if not 0.0 <= self.q_out < self.q_in <= 1.0:
            raise SpecError(f"need 0 <= q_out < q_in <= 1, got q_in={self.q_in}, q_out={self.q_out}")
        if self.distractors < 0 or (self.distractors and self.distractor_patterns < 1):
            raise SpecError("distractors need a non-empty distractor pattern pool")
        if self.distractors >= self.slots:
            raise SpecError(f"{self.distractors} distractors leave no room among {self.slots} slots")
        if self.noise < 0 or self.channels < 1 or self.n_train < 1 or self.n_test < 0:
            raise SpecError("noise, channels and example counts must be non-negative/positive")
        if self.task == "image" and (self.region < 1 or self.grid % self.region):
            raise SpecError(f"grid {self.grid} must be a multiple of region {self.region}")
        if self.task == "video" and (self.segment < 1 or self.frames % self.segment):
            raise SpecError(f"frames {self.frames} must be a multiple of segment {self.segment}")

    @property
    def slots(self) -> int:
        if self.task == "image":
            return (self.grid // self.region) ** 2
        return self.frames // self.segment

    def group_of(self) -> np.ndarray:
        return np.arange(self.num_labels) * self.groups // self.num_labels


@dataclass
class Split:
    inputs: np.ndarray  # B x H x W x C (image) or B x T x C (video)
    labels: np.ndarray  # B x N binary
    boxes: np.ndarray   # B x N x 4 (r0, c0, r1, c1) / (t0, t1, -1, -1); -1 when absent

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, idx) -> "Split":
        return Split(self.inputs[idx], self.labels[idx], self.boxes[idx])


@dataclass
class Dataset:
    spec: SyntheticSpec
    train: Split
    test: Split
    patterns: np.ndarray


def _sample_split(spec: SyntheticSpec, n: int, patterns: np.ndarray, clutter: np.ndarray,
                  rng: np.random.Generator) -> Split:
    N = spec.num_labels
    group = spec.group_of()
    side = spec.grid // spec.region if spec.task == "image" else 0
    if spec.task == "image":
        x = spec.noise * rng.standard_normal((n, spec.grid, spec.grid, spec.channels))
    else:
        x = spec.noise * rng.standard_normal((n, spec.frames, spec.channels))
    labels = np.zeros((n, N))
    boxes = np.full((n, N, 4), -1.0)
    for i in range(n):
        g = rng.integers(spec.groups)
        rate = np.where(group == g, spec.q_in, spec.q_out)
        present = np.flatnonzero(rng.random(N) < rate)
        room = spec.slots - spec.distractors
        if present.size > room:
            present = np.sort(rng.choice(present, room, replace=False))
        where = rng.choice(spec.slots, present.size + spec.distractors, replace=False)
        fill = [patterns[k] for k in present]
        if spec.distractors:
            fill += list(clutter[rng.integers(len(clutter), size=spec.distractors)])
        for j, (slot, pattern) in enumerate(zip(where, fill)):
            if spec.task == "image":
                r0, c0 = (slot // side) * spec.region, (slot % side) * spec.region
                r1, c1 = r0 + spec.region, c0 + spec.region
                x[i, r0:r1, c0:c1] += pattern
                box = (r0, c0, r1, c1)
            else:
                t0 = slot * spec.segment
                x[i, t0:t0 + spec.segment] += pattern
                box = (t0, t0 + spec.segment, -1, -1)
            if j < present.size:
                labels[i, present[j]] = 1.0
                boxes[i, present[j]] = box
    return Split(x, labels, boxes)


def gen_synthetic_dataset(spec: SyntheticSpec, seed: int) -> Dataset:
    spec.validate()
    rng = make_rng(seed, 7)
    patterns = rng.standard_normal((spec.num_labels + spec.distractor_patterns, spec.channels))
    patterns *= spec.amplitude / np.linalg.norm(patterns, axis=1, keepdims=True)
    labelled, clutter = patterns[:spec.num_labels], patterns[spec.num_labels:]
    train = _sample_split(spec, spec.n_train, labelled, clutter, make_rng(seed, 7, 1))
    test = _sample_split(spec, spec.n_test, labelled, clutter, make_rng(seed, 7, 2))
    return Dataset(spec, train, test, labelled)


def location_masks(boxes: np.ndarray, in_grid: tuple[int, ...], out_grid: tuple[int, ...]) -> np.ndarray:
    """Rasterize boxes onto a feature grid: B x N x M booleans, True where a cell is
    at least half covered by the label's planted region."""
    B, N, _ = boxes.shape
    if len(in_grid) == 2:
        H, W = in_grid
        h, w = out_grid
        rows = np.arange(h) * H / h, (np.arange(h) + 1) * H / h
        cols = np.arange(w) * W / w, (np.arange(w) + 1) * W / w
        r0, c0, r1, c1 = (boxes[..., j][..., None] for j in range(4))
        ov_r = np.clip(np.minimum(r1, rows[1]) - np.maximum(r0, rows[0]), 0, None) / (H / h)
        ov_c = np.clip(np.minimum(c1, cols[1]) - np.maximum(c0, cols[0]), 0, None) / (W / w)
        cover = ov_r[..., :, None] * ov_c[..., None, :]
        mask = (cover >= 0.5).reshape(B, N, h * w)
    else:
        (T,), (t,) = in_grid, out_grid
        lo, hi = np.arange(t) * T / t, (np.arange(t) + 1) * T / t
        t0, t1 = boxes[..., 0][..., None], boxes[..., 1][..., None]
        cover = np.clip(np.minimum(t1, hi) - np.maximum(t0, lo), 0, None) / (T / t)
        mask = cover >= 0.5
    absent = (boxes[..., 0] < 0)[..., None]
    return mask & ~absent


# -- disk format ------------------------------------------------------------

def _spec_lines(spec: SyntheticSpec) -> str:
    return "".join(f"{k}={v}\n" for k, v in asdict(spec).items())


def _parse_spec(text: str) -> SyntheticSpec:
    fields = SyntheticSpec.__dataclass_fields__
    kw = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        key, val = line.split("=", 1)
        kw[key] = type(fields[key].default)(val)
    return SyntheticSpec(**kw)


def write_dataset(ds: Dataset, out_dir: str | Path, seed: int) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "spec.txt").write_text(f"# seed={seed}\n" + _spec_lines(ds.spec), encoding="utf-8")
    (out / "labels.txt").write_text("".join(f"label_{k:02d}\n" for k in range(ds.spec.num_labels)),
                                    encoding="utf-8")
    save_tensor(out / "patterns.cmat", ds.patterns)
    for name, split in (("train", ds.train), ("test", ds.test)):
        save_tensor(out / f"{name}_inputs.cmat", split.inputs)
        save_tensor(out / f"{name}_masks.cmat", split.boxes)
        ann = AnnotationSet.from_matrix(split.labels, [f"{name}{i:06d}" for i in range(len(split))])
        write_annotations(out / f"{name}_labels.txt", ann)
    graph = build_graph(AnnotationSet.from_matrix(ds.train.labels))
    with open(out / "summary.txt", "w", encoding="utf-8") as fh:
        fh.write(f"train_examples={len(ds.train)}\ntest_examples={len(ds.test)}\n")
        fh.write("priors=" + " ".join(f"{p:.6f}" for p in graph.priors) + "\n")
        fh.write("cooccurrence:\n")
        for row in graph.counts:
            fh.write(" ".join(str(int(c)) for c in row) + "\n")
    return out


def read_dataset(data_dir: str | Path) -> Dataset:
    d = Path(data_dir)
    spec = _parse_spec((d / "spec.txt").read_text(encoding="utf-8"))
    splits = {}
    for name in ("train", "test"):
        ann = read_annotations(d / f"{name}_labels.txt", spec.num_labels)
        splits[name] = Split(load_tensor(d / f"{name}_inputs.cmat"), ann.to_matrix(),
                             load_tensor(d / f"{name}_masks.cmat"))
    return Dataset(spec, splits["train"], splits["test"], load_tensor(d / "patterns.cmat"))
