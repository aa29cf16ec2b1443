"""Binary point-cloud records (PCLD), dataset directories and converters.

A dataset directory holds ``manifest.txt`` (``class_id<TAB>name`` lines)
and one sub-directory per split containing ``*.pcld`` files. Record layout,
all little-endian::

    b"PCLD" | u32 version | u32 N | u32 F | u32 task | i32 cloud_label (-1: none)
    | u32 has_point_labels | f32[N*F] points | i32[N] point labels (if present)

For part segmentation the manifest names are ``category/part`` so the part
set of every category can be recovered from the manifest alone.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import DataError, ParseError
from .cloud import TASKS, Dataset, PointCloud, normalize_unit_sphere
from .mesh import load_mesh, sample_surface

MAGIC = b"PCLD"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIiI")


def encode_cloud(cloud, task):
    n, f = cloud.points.shape
    has_labels = cloud.point_labels is not None
    label = -1 if cloud.cloud_label is None else int(cloud.cloud_label)
    parts = [
        _HEADER.pack(MAGIC, VERSION, n, f, TASKS.index(task), label, int(has_labels)),
        np.ascontiguousarray(cloud.points, dtype="<f4").tobytes(),
    ]
    if has_labels:
        parts.append(np.ascontiguousarray(cloud.point_labels, dtype="<i4").tobytes())
    return b"".join(parts)


def decode_cloud(blob, path="<bytes>"):
    """Return (PointCloud, task) from one PCLD record."""
    if len(blob) < _HEADER.size:
        raise ParseError("truncated PCLD header", path=path)
    magic, version, n, f, task, label, has_labels = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}", path=path)
    if version != VERSION:
        raise ParseError(f"unsupported PCLD version {version}", path=path)
    if task >= len(TASKS):
        raise ParseError(f"unknown task tag {task}", path=path)
    need = _HEADER.size + 4 * n * f + (4 * n if has_labels else 0)
    if len(blob) != need:
        raise ParseError(f"record size {len(blob)} != expected {need}", path=path)
    off = _HEADER.size
    pts = np.frombuffer(blob, dtype="<f4", count=n * f, offset=off).reshape(n, f).astype(np.float32)
    labels = None
    if has_labels:
        labels = np.frombuffer(blob, dtype="<i4", count=n, offset=off + 4 * n * f).astype(np.int64)
    cloud = PointCloud(pts, cloud_label=None if label < 0 else label, point_labels=labels)
    return cloud, TASKS[task]


def write_pcld(path, cloud, task):
    Path(path).write_bytes(encode_cloud(cloud, task))


def read_pcld(path):
    return decode_cloud(Path(path).read_bytes(), path=str(path))


def write_manifest(path, names):
    Path(path).write_text("".join(f"{i}\t{name}\n" for i, name in enumerate(names)))


def read_manifest(path):
    names = {}
    for no, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            cid, name = line.split("\t", 1)
            names[int(cid)] = name.strip()
        except ValueError:
            raise ParseError(f"expected 'class_id<TAB>name', got {line!r}", line=no, path=str(path)) from None
    if sorted(names) != list(range(len(names))):
        raise ParseError("class ids must be 0..P-1 without gaps", path=str(path))
    return [names[i] for i in range(len(names))]


def category_parts_from_names(names):
    """Group ``category/part`` names into per-category part-id lists."""
    order, groups = [], {}
    for pid, name in enumerate(names):
        cat = name.split("/", 1)[0]
        if cat not in groups:
            order.append(cat)
            groups[cat] = []
        groups[cat].append(pid)
    return [groups[c] for c in order]


def write_dataset(root, dataset, split=None):
    root = Path(root)
    split = split or dataset.split
    (root / split).mkdir(parents=True, exist_ok=True)
    write_manifest(root / "manifest.txt", dataset.class_names)
    for i, cloud in enumerate(dataset.clouds):
        write_pcld(root / split / f"{i:06d}.pcld", cloud, dataset.task)
    return root


def read_dataset(root, split="train"):
    root = Path(root)
    folder = root / split
    if not folder.is_dir():
        raise DataError(f"dataset split not found: {folder}")
    names = read_manifest(root / "manifest.txt")
    clouds, tasks = [], set()
    for path in sorted(folder.glob("*.pcld")):
        cloud, task = read_pcld(path)
        clouds.append(cloud)
        tasks.add(task)
    if not clouds:
        raise DataError(f"no .pcld records in {folder}")
    if len(tasks) != 1:
        raise DataError(f"mixed task tags in {folder}: {sorted(tasks)}")
    task = tasks.pop()
    p = len(names)
    for i, cloud in enumerate(clouds):
        labels = cloud.point_labels if task != "classification" else cloud.cloud_label
        if labels is None:
            raise DataError(f"cloud {i} in {folder} has no labels for task {task}")
        if np.any(np.asarray(labels) >= p) or np.any(np.asarray(labels) < 0):
            raise DataError(f"cloud {i} in {folder} has labels outside [0, {p})")
    parts = category_parts_from_names(names) if task == "part_seg" else []
    return Dataset(clouds, task, p, split=split, class_names=names, category_parts=parts)


# converters -----------------------------------------------------------------------

def mesh_to_cloud(path, n_points=1024, seed=0, label=None):
    cloud = sample_surface(load_mesh(path), n_points, seed=seed)
    cloud.cloud_label = label
    return normalize_unit_sphere(cloud)


def txt_to_cloud(path, point_labels=False, label=None, normalize=True):
    """Whitespace- or comma-separated rows; with ``point_labels`` the last column is the label."""
    rows = []
    for no, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.replace(",", " ").strip()
        if not line or line.startswith("#"):
            continue
        try:
            rows.append([float(t) for t in line.split()])
        except ValueError:
            raise ParseError(f"non-numeric row {line!r}", line=no, path=str(path)) from None
        if rows and len(rows[-1]) != len(rows[0]):
            raise ParseError("ragged row", line=no, path=str(path))
    if not rows:
        raise DataError(f"{path}: no points")
    arr = np.asarray(rows)
    labels = None
    if point_labels:
        labels = arr[:, -1].astype(np.int64)
        arr = arr[:, :-1]
    cloud = PointCloud(arr, cloud_label=label, point_labels=labels)
    return normalize_unit_sphere(cloud) if normalize else cloud


def convert(src, dst, fmt=None, task="classification", n_points=1024, seed=0, label=None, point_labels=False):
    """Convert an OFF, OBJ or TXT file into a PCLD record."""
    fmt = (fmt or Path(src).suffix.lstrip(".")).lower()
    if fmt in ("off", "obj"):
        cloud = mesh_to_cloud(src, n_points, seed, label)
    elif fmt == "txt":
        cloud = txt_to_cloud(src, point_labels=point_labels, label=label, normalize=task != "scene_seg")
    else:
        raise DataError(f"cannot convert format {fmt!r}")
    write_pcld(dst, cloud, task)
    return cloud
