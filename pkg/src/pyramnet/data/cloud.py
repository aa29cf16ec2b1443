"""Point-cloud container plus normalisation and augmentation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..errors import DataError

TASKS = ("classification", "part_seg", "scene_seg")


@dataclass
class PointCloud:
    """N x F attribute matrix; columns 0..2 are x, y, z."""

    points: np.ndarray
    cloud_label: Optional[int] = None
    point_labels: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points)
        if self.points.ndim != 2 or self.points.shape[0] < 1 or self.points.shape[1] < 3:
            raise DataError(f"point cloud must be N x F with N >= 1, F >= 3; got {self.points.shape}")
        if self.point_labels is not None:
            self.point_labels = np.asarray(self.point_labels, dtype=np.int64)
            if self.point_labels.shape != (self.points.shape[0],):
                raise DataError(
                    f"point_labels shape {self.point_labels.shape} != ({self.points.shape[0]},)"
                )

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def f(self):
        return self.points.shape[1]


@dataclass
class Dataset:
    clouds: list
    task: str
    num_classes: int
    split: str = "train"
    seed: int = 0
    class_names: list = field(default_factory=list)
    category_parts: list = field(default_factory=list)  # part_seg: part ids per category

    def __len__(self):
        return len(self.clouds)


def normalize_unit_sphere(cloud):
    """Centre xyz on the centroid and scale so the farthest point has norm 1.

    Columns beyond xyz are left untouched.
    """
    xyz = cloud.points[:, :3].astype(np.float64)
    centred = xyz - xyz.mean(axis=0)
    scale = np.sqrt((centred**2).sum(axis=1)).max()
    if not scale > 1e-12:
        raise DataError("cannot normalise: all points coincide")
    pts = cloud.points.copy()
    pts[:, :3] = centred / scale
    meta = dict(cloud.meta)
    if "boundary_y" in meta:
        meta["boundary_y"] = (meta["boundary_y"] - xyz.mean(axis=0)[1]) / scale
    return replace(cloud, points=pts, meta=meta)


def rotation_about_y(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def augment(cloud, seed=None, rng=None, rotate=True, sigma=0.01, clip=0.05):
    """Random rotation about the vertical (y) axis, then clipped Gaussian jitter on xyz."""
    if rng is None:
        rng = np.random.default_rng(seed)
    pts = cloud.points.copy()
    xyz = pts[:, :3].astype(np.float64)
    if rotate:
        xyz = xyz @ rotation_about_y(rng.uniform(0.0, 2.0 * np.pi)).T
    if sigma > 0:
        xyz = xyz + np.clip(sigma * rng.standard_normal(xyz.shape), -clip, clip)
    pts[:, :3] = xyz
    return replace(cloud, points=pts)
