"""Desk-scale synthetic datasets built from analytic surfaces.

Classification clouds come from four primitive surfaces; part-segmentation
clouds are two-part shapes (a cylindrical body with a cap on top) whose part
labels follow exactly from the height of each point.
"""

from __future__ import annotations

import zlib

import numpy as np

from ..errors import ConfigError
from .cloud import Dataset, PointCloud, normalize_unit_sphere, rotation_about_y

CLASSIFICATION_SHAPES = ("sphere", "cube", "cylinder", "torus")
PART_SHAPES = {
    "capsule": ("body", "cap"),
    "rocket": ("body", "nose"),
}


# primitive surfaces (canonical pose, unit size) ---------------------------------

def _sphere(n, rng):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _cube(n, rng):
    face = rng.integers(0, 6, n)
    uv = rng.uniform(-1.0, 1.0, (n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, -1.0, 1.0)
    for a in range(3):
        others = [b for b in range(3) if b != a]
        sel = axis == a
        pts[sel, a] = sign[sel]
        pts[np.ix_(sel, others)] = uv[sel]
    return pts


def _disk(n, rng, radius):
    r = radius * np.sqrt(rng.random(n))
    t = rng.uniform(0.0, 2 * np.pi, n)
    return r * np.cos(t), r * np.sin(t)


def _cylinder(n, rng, radius=1.0, height=2.0):
    side = 2 * np.pi * radius * height
    cap = np.pi * radius**2
    part = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    pts = np.empty((n, 3))
    t = rng.uniform(0.0, 2 * np.pi, n)
    pts[:, 0] = radius * np.cos(t)
    pts[:, 2] = radius * np.sin(t)
    pts[:, 1] = rng.uniform(-height / 2, height / 2, n)
    for which, y in ((1, -height / 2), (2, height / 2)):
        sel = part == which
        x, z = _disk(int(sel.sum()), rng, radius)
        pts[sel, 0], pts[sel, 2], pts[sel, 1] = x, z, y
    return pts


def _torus(n, rng, major=1.0, minor=0.35):
    # area element is proportional to (major + minor cos phi); rejection-sample phi
    phi = np.empty(0)
    while phi.size < n:
        cand = rng.uniform(0.0, 2 * np.pi, 2 * n)
        keep = rng.random(2 * n) * (major + minor) < major + minor * np.cos(cand)
        phi = np.concatenate([phi, cand[keep]])
    phi = phi[:n]
    theta = rng.uniform(0.0, 2 * np.pi, n)
    ring = major + minor * np.cos(phi)
    return np.stack([ring * np.cos(theta), minor * np.sin(phi), ring * np.sin(theta)], axis=1)


_PRIMITIVES = {"sphere": _sphere, "cube": _cube, "cylinder": _cylinder, "torus": _torus}


def sample_primitive(name, n, rng):
    try:
        return _PRIMITIVES[name](n, rng)
    except KeyError:
        raise ConfigError(f"unknown synthetic class {name!r}; known: {sorted(_PRIMITIVES)}") from None


def random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


# two-part shapes -------------------------------------------------------------------

def sample_two_part(name, n, rng):
    """Return (points, part index in {0, 1}, boundary height).

    The body spans 0 <= y <= height; every cap point lies strictly above it.
    """
    if name not in PART_SHAPES:
        raise ConfigError(f"unknown part shape {name!r}; known: {sorted(PART_SHAPES)}")
    radius = rng.uniform(0.4, 0.6)
    height = rng.uniform(1.0, 1.6)
    side = 2 * np.pi * radius * height
    bottom = np.pi * radius**2
    if name == "capsule":
        top = 2 * np.pi * radius**2
    else:
        cone_h = rng.uniform(0.5, 0.9)
        top = np.pi * radius * np.hypot(radius, cone_h)
    which = rng.choice(3, size=n, p=np.array([side, bottom, top]) / (side + bottom + top))
    pts = np.empty((n, 3))
    t = rng.uniform(0.0, 2 * np.pi, n)

    sel = which == 0
    pts[sel, 0] = radius * np.cos(t[sel])
    pts[sel, 2] = radius * np.sin(t[sel])
    pts[sel, 1] = height * rng.random(int(sel.sum()))

    sel = which == 1
    x, z = _disk(int(sel.sum()), rng, radius)
    pts[sel, 0], pts[sel, 1], pts[sel, 2] = x, 0.0, z

    sel = which == 2
    m = int(sel.sum())
    if name == "capsule":
        # height above the boundary is uniform on a hemisphere (Archimedes)
        h = 1.0 - rng.random(m)  # (0, 1]
        ring = radius * np.sqrt(1.0 - h**2)
        pts[sel, 1] = height + radius * h
    else:
        frac = np.sqrt(rng.random(m))  # distance from apex, area-uniform, in [0, 1)
        ring = radius * frac
        pts[sel, 1] = height + cone_h * (1.0 - frac)
    pts[sel, 0] = ring * np.cos(t[sel])
    pts[sel, 2] = ring * np.sin(t[sel])
    return pts, (which == 2).astype(np.int64), height


def _split_of(seed, index):
    return "test" if zlib.crc32(f"{seed}:{index}".encode()) % 5 == 0 else "train"


def make_synthetic(task, classes=None, per_class=32, n_points=256, seed=0, pose=True, split=None):
    """Build a labelled synthetic dataset.

    ``split`` of None returns every cloud; "train"/"test" keep the
    deterministic 80/20 partition by hashed cloud index.
    """
    rng = np.random.default_rng(seed)
    clouds = []
    if task == "classification":
        classes = list(classes or CLASSIFICATION_SHAPES)
        for label, name in enumerate(classes):
            sample_primitive(name, 1, np.random.default_rng(0))  # validates the name
            for _ in range(per_class):
                pts = sample_primitive(name, n_points, rng)
                if pose:
                    pts = pts * rng.uniform(0.8, 1.2, size=3)
                    pts = pts @ random_rotation(rng).T
                cloud = PointCloud(pts, cloud_label=label)
                clouds.append(normalize_unit_sphere(cloud) if pose else cloud)
        dataset = Dataset(clouds, task, len(classes), seed=seed, class_names=classes)
    elif task == "part_seg":
        classes = list(classes or PART_SHAPES)
        names, category_parts = [], []
        for cat, name in enumerate(classes):
            if name not in PART_SHAPES:
                raise ConfigError(f"unknown part shape {name!r}; known: {sorted(PART_SHAPES)}")
            first = len(names)
            names.extend(f"{name}/{part}" for part in PART_SHAPES[name])
            category_parts.append([first, first + 1])
        for cat, name in enumerate(classes):
            for _ in range(per_class):
                pts, part, boundary = sample_two_part(name, n_points, rng)
                if pose:
                    pts = pts @ rotation_about_y(rng.uniform(0, 2 * np.pi)).T
                    s = rng.uniform(0.8, 1.2)
                    pts, boundary = pts * s, boundary * s
                cloud = PointCloud(
                    pts,
                    cloud_label=cat,
                    point_labels=np.asarray(category_parts[cat])[part],
                    meta={"boundary_y": boundary},
                )
                clouds.append(normalize_unit_sphere(cloud) if pose else cloud)
        dataset = Dataset(
            clouds, task, len(names), seed=seed, class_names=names, category_parts=category_parts
        )
    else:
        raise ConfigError(f"synthetic data supports classification and part_seg, not {task!r}")
    if split is not None:
        dataset.clouds = [c for i, c in enumerate(clouds) if _split_of(seed, i) == split]
        dataset.split = split
    else:
        dataset.split = "all"
    return dataset


def split_dataset(dataset):
    """Deterministic 80/20 (train, test) partition by hashed cloud index."""
    out = []
    for split in ("train", "test"):
        clouds = [c for i, c in enumerate(dataset.clouds) if _split_of(dataset.seed, i) == split]
        out.append(
            Dataset(
                clouds,
                dataset.task,
                dataset.num_classes,
                split,
                dataset.seed,
                list(dataset.class_names),
                [list(p) for p in dataset.category_parts],
            )
        )
    return tuple(out)
