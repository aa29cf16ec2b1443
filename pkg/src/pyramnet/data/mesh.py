"""OFF / OBJ triangle-mesh loading and area-weighted surface sampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError, ParseError
from .cloud import PointCloud

log = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray  # (T, 3) int64
    dropped_faces: int = 0

    def face_areas(self):
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def _clean(raw_faces, vertices, path):
    faces = np.asarray(raw_faces, dtype=np.int64).reshape(-1, 3)
    mesh = TriangleMesh(np.asarray(vertices, dtype=np.float64).reshape(-1, 3), faces)
    if len(faces):
        keep = mesh.face_areas() > DEGENERATE_AREA
        dropped = int((~keep).sum())
        if dropped:
            log.warning("%s: dropped %d degenerate face(s)", path, dropped)
        mesh.faces = faces[keep]
        mesh.dropped_faces = dropped
    return mesh


def _fan(poly):
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


def _parse_off(lines, path):
    # ModelNet ships some files with the counts glued to the header ("OFF490 518 0").
    body = [(no, ln.split("#", 1)[0].strip()) for no, ln in enumerate(lines, 1)]
    body = [(no, ln) for no, ln in body if ln]
    if not body or not body[0][1].startswith("OFF"):
        raise ParseError("missing OFF header", line=body[0][0] if body else 1, path=path)
    no, header = body[0]
    rest = header[3:].strip()
    pos = 1
    if not rest:
        if len(body) < 2:
            raise ParseError("missing vertex/face counts", line=no, path=path)
        no, rest = body[1]
        pos = 2
    try:
        nv, nf = (int(t) for t in rest.split()[:2])
    except ValueError:
        raise ParseError(f"bad count line {rest!r}", line=no, path=path) from None
    if len(body) < pos + nv + nf:
        raise ParseError("file ends before all vertices/faces are read", line=body[-1][0], path=path)
    verts = []
    for no, ln in body[pos : pos + nv]:
        try:
            verts.append([float(t) for t in ln.split()[:3]])
        except ValueError:
            raise ParseError(f"bad vertex {ln!r}", line=no, path=path) from None
        if len(verts[-1]) != 3:
            raise ParseError(f"vertex needs 3 coordinates: {ln!r}", line=no, path=path)
    faces = []
    for no, ln in body[pos + nv : pos + nv + nf]:
        try:
            toks = [int(t) for t in ln.split()]
        except ValueError:
            raise ParseError(f"bad face {ln!r}", line=no, path=path) from None
        if not toks or toks[0] < 3 or len(toks) < toks[0] + 1:
            raise ParseError(f"bad face {ln!r}", line=no, path=path)
        poly = toks[1 : toks[0] + 1]
        for idx in poly:
            if idx < 0 or idx >= nv:
                raise ParseError(f"face index {idx} out of range [0, {nv})", line=no, path=path)
        faces.extend(_fan(poly))
    return verts, faces


def _parse_obj(lines, path):
    verts, faces = [], []
    pending = []
    for no, ln in enumerate(lines, 1):
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        toks = ln.split()
        if toks[0] == "v":
            try:
                verts.append([float(t) for t in toks[1:4]])
            except ValueError:
                raise ParseError(f"bad vertex {ln!r}", line=no, path=path) from None
            if len(verts[-1]) != 3:
                raise ParseError(f"vertex needs 3 coordinates: {ln!r}", line=no, path=path)
        elif toks[0] == "f":
            if len(toks) < 4:
                raise ParseError(f"face needs >= 3 vertices: {ln!r}", line=no, path=path)
            try:
                poly = [int(t.split("/")[0]) for t in toks[1:]]
            except ValueError:
                raise ParseError(f"bad face {ln!r}", line=no, path=path) from None
            pending.append((no, poly, len(verts)))
    nv = len(verts)
    for no, poly, seen in pending:
        resolved = []
        for idx in poly:
            # negative indices are relative to the vertices seen so far
            j = idx - 1 if idx > 0 else seen + idx
            if idx == 0 or j < 0 or j >= nv:
                raise ParseError(f"face index {idx} out of range for {nv} vertices", line=no, path=path)
            resolved.append(j)
        faces.extend(_fan(resolved))
    return verts, faces


def load_mesh(path, format=None):
    """Read an OFF or OBJ file into a triangulated mesh.

    Polygons are fan-triangulated and faces with area <= 1e-12 are dropped.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    text = path.read_text()
    return parse_mesh(text, fmt, path=str(path))


def parse_mesh(text, format, path="<string>"):
    lines = text.splitlines()
    if format == "off":
        verts, faces = _parse_off(lines, path)
    elif format == "obj":
        verts, faces = _parse_obj(lines, path)
    else:
        raise ParseError(f"unknown mesh format {format!r}", path=path)
    return _clean(faces, verts, path)


def sample_surface(mesh, n, seed=0, return_faces=False):
    """Draw ``n`` points uniformly over the surface area of ``mesh``.

    Faces are picked with probability proportional to area, then a point is
    placed with square-root barycentric sampling.
    """
    areas = mesh.face_areas() if len(mesh.faces) else np.zeros(0)
    total = areas.sum()
    if not total > 0:
        raise DataError("mesh has zero total surface area")
    rng = np.random.default_rng(seed)
    face = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))[:, None]
    r2 = rng.random(n)[:, None]
    tri = mesh.vertices[mesh.faces[face]]
    pts = (1 - r1) * tri[:, 0] + r1 * (1 - r2) * tri[:, 1] + r1 * r2 * tri[:, 2]
    cloud = PointCloud(pts.astype(np.float64))
    if return_faces:
        return cloud, face
    return cloud
