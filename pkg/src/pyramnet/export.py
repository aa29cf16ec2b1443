"""Colored OBJ export of per-point labels."""

from __future__ import annotations

import colorsys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

DIFF_COLOR = (1.0, 0.0, 0.0)
VARIANTS = ("pred", "gt", "diff")

_BASE = [
    (0.12, 0.47, 0.71),
    (1.00, 0.50, 0.05),
    (0.17, 0.63, 0.17),
    (0.58, 0.40, 0.74),
    (0.55, 0.34, 0.29),
    (0.89, 0.47, 0.76),
    (0.50, 0.50, 0.50),
    (0.74, 0.74, 0.13),
    (0.09, 0.75, 0.81),
    (0.68, 0.78, 0.91),
]


def palette(num_labels):
    """Fixed (P, 3) RGB table in [0, 1]; label i always maps to the same color.

    Beyond the hand-picked base colors, hues follow the golden-ratio sequence.
    Pure red is never produced because it marks mismatches.
    """
    colors = list(_BASE[:num_labels])
    i = 0
    while len(colors) < num_labels:
        hue = (0.1 + i * 0.618033988749895) % 1.0
        sat = 0.55 + 0.35 * ((i // 7) % 2)
        colors.append(colorsys.hsv_to_rgb(hue, sat, 0.85))
        i += 1
    out = np.round(np.array(colors, dtype=np.float64).reshape(-1, 3), 4)
    out[np.all(out == DIFF_COLOR, axis=1)] = (0.8, 0.1, 0.1)
    return out


def label_colors(points, pred=None, gt=None, variant="pred", num_labels=None):
    """Per-point RGB for one export variant.

    ``diff`` paints points whose prediction disagrees with the ground truth red
    and leaves the rest in their ground-truth color.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown export variant {variant!r}; choose from {VARIANTS}")
    n = len(points)
    needed = {"pred": (pred,), "gt": (gt,), "diff": (pred, gt)}[variant]
    if any(a is None for a in needed):
        raise DataError(f"{variant} export needs {'predicted and ground-truth' if variant == 'diff' else variant} labels")
    arrays = [np.asarray(a, dtype=np.int64).reshape(-1) for a in needed]
    for a in arrays:
        if a.shape != (n,):
            raise DataError(f"label array has {a.size} entries for {n} points")
    if num_labels is None:
        num_labels = int(max(a.max() for a in arrays)) + 1
    pal = palette(num_labels)
    if variant == "pred":
        return pal[arrays[0]]
    colors = pal[arrays[-1]]
    if variant == "diff":
        colors[arrays[0] != arrays[1]] = DIFF_COLOR
    return colors


def obj_text(points, colors):
    xyz = np.asarray(points, dtype=np.float64)[:, :3]
    lines = [
        f"v {x:.6f} {y:.6f} {z:.6f} {r:.4f} {g:.4f} {b:.4f}"
        for (x, y, z), (r, g, b) in zip(xyz, colors)
    ]
    return "\n".join(lines) + "\n"


def write_obj(path, points, colors):
    path = Path(path)
    path.write_text(obj_text(points, colors))
    return path


def read_obj_colors(path):
    """Vertex positions and colors from an exported file: ((N, 3), (N, 3))."""
    rows = [
        [float(t) for t in line.split()[1:7]]
        for line in Path(path).read_text().splitlines()
        if line.startswith("v ")
    ]
    arr = np.array(rows, dtype=np.float64).reshape(-1, 6)
    return arr[:, :3], arr[:, 3:]


def count_flagged(colors):
    return int(np.sum(np.all(np.asarray(colors) == DIFF_COLOR, axis=1)))
