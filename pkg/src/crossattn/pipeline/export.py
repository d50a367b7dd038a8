"""Attention map export: PGM heatmaps, exact CSVs and the mass-inside-mask statistic."""

from __future__ import annotations

from pathlib import Path

import numpy as np

PGM_MAXVAL = 65535


def write_pgm(path: str | Path, grid: np.ndarray) -> tuple[float, float]:
    """Min-max scale a 2-D map to 16-bit plain PGM; min and max go in comment lines."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError(f"PGM export needs a 2-D map, got shape {grid.shape}")
    lo, hi = float(grid.min()), float(grid.max())
    span = hi - lo
    scaled = np.zeros(grid.shape, dtype=np.int64) if span == 0 else \
        np.rint((grid - lo) / span * PGM_MAXVAL).astype(np.int64)
    h, w = grid.shape
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"P2\n# min={lo!r}\n# max={hi!r}\n{w} {h}\n{PGM_MAXVAL}\n")
        for row in scaled:
            fh.write(" ".join(str(v) for v in row) + "\n")
    return lo, hi


def read_pgm(path: str | Path) -> tuple[np.ndarray, float, float]:
    """Return (raw integer grid, min, max) so callers can undo the scaling."""
    lo = hi = None
    tokens = []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                if key == "min":
                    lo = float(val)
                elif key == "max":
                    hi = float(val)
                continue
            tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise ValueError(f"{path}: not a plain PGM file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    raw = np.array([int(t) for t in tokens[4:4 + w * h]], dtype=np.int64).reshape(h, w)
    if lo is None or hi is None:
        lo, hi = 0.0, float(maxval)
    return raw, lo, hi


def pgm_values(path: str | Path) -> np.ndarray:
    """Undo min-max scaling; exact up to half a quantization step of the stored range."""
    raw, lo, hi = read_pgm(path)
    return lo + raw / PGM_MAXVAL * (hi - lo)


def mass_in_mask(a: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Attention mass on masked locations; ``a`` and ``mask`` share their trailing M axis."""
    return (np.asarray(a) * np.asarray(mask, dtype=np.float64)).sum(axis=-1)


def localization_summary(a: np.ndarray, masks: np.ndarray) -> dict[str, float]:
    """Mean in-mask mass over (example, label) pairs with a non-empty mask, against |mask|/M.

    ``a`` is B x N x M (or B x 1 x M for a category-shared map), ``masks`` is B x N x M.
    """
    a = np.broadcast_to(a, masks.shape)
    sizes = masks.sum(axis=-1)
    keep = sizes > 0
    if not keep.any():
        raise ValueError("no non-empty masks to score")
    mass = mass_in_mask(a, masks)[keep]
    uniform = (sizes / masks.shape[-1])[keep]
    return {"pairs": float(keep.sum()), "mass": float(mass.mean()),
            "uniform_mass": float(uniform.mean()), "ratio": float(mass.mean() / uniform.mean())}


def export_maps(out_dir: str | Path, example_ids: list[str], label_names: list[str],
                selections: list[list[int]], maps_a: np.ndarray, maps_z: np.ndarray,
                grid: tuple[int, ...], masks: np.ndarray | None = None,
                tag: str = "") -> list[dict]:
    """Write one heatmap per selected (example, category) and return summary rows.

    Image grids give ``<id>_<tag><label>.pgm`` plus the raw ``.csv`` of a_k;
    1-D (video) grids give a per-location CSV with z and a. Category-shared
    maps (first axis of size 1) are exported under every selected category.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for b, (ex, cats) in enumerate(zip(example_ids, selections)):
        for k in cats:
            row_k = k if maps_a.shape[1] > 1 else 0
            a, z = maps_a[b, row_k], maps_z[b, row_k]
            stem = f"{ex}_{tag}{label_names[k]}"
            if len(grid) == 2:
                h, w = grid
                write_pgm(out / f"{stem}.pgm", a.reshape(h, w))
                with open(out / f"{stem}.csv", "w", encoding="utf-8") as fh:
                    for line in a.reshape(h, w):
                        fh.write(",".join(repr(float(v)) for v in line) + "\n")
            else:
                with open(out / f"{stem}_frames.csv", "w", encoding="utf-8") as fh:
                    fh.write("location,z,a\n")
                    for i, (zi, ai) in enumerate(zip(z, a)):
                        fh.write(f"{i},{float(zi)!r},{float(ai)!r}\n")
            row = {"example": ex, "label": label_names[k], "file": stem}
            if masks is not None:
                m = masks[b, k]
                row["mask_size"] = int(m.sum())
                row["mass_in_mask"] = float(mass_in_mask(a, m)) if m.any() else float("nan")
                row["uniform_mass"] = float(m.sum() / m.size)
            rows.append(row)
    return rows


def write_summary(path: str | Path, rows: list[dict]) -> None:
    if not rows:
        Path(path).write_text("", encoding="utf-8")
        return
    cols = list(rows[0])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in cols) + "\n")
