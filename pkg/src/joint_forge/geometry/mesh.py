"""Triangle meshes: OBJ subset I/O, area/volume, and surface sampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from ..errors import DegenerateMesh, IndexOutOfRange, MalformedFace


@dataclass(eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    # B-Rep face id -> triangle indices, from "g face N" markers
    groups: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise IndexOutOfRange("triangle references a missing vertex")

    @cached_property
    def corners(self) -> np.ndarray:
        """(T, 3, 3) triangle corner coordinates."""
        return self.vertices[self.triangles]

    @cached_property
    def triangle_areas(self) -> np.ndarray:
        c = self.corners
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    @property
    def area(self) -> float:
        return float(self.triangle_areas.sum())

    @cached_property
    def signed_volume(self) -> float:
        c = self.corners
        if not len(c):
            return 0.0
        return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)

    @property
    def volume(self) -> float:
        return abs(self.signed_volume)

    @property
    def bounds(self) -> np.ndarray:
        return np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    @property
    def diagonal(self) -> float:
        lo, hi = self.bounds
        return float(np.linalg.norm(hi - lo))

    def transformed(self, transform) -> "TriMesh":
        return TriMesh(transform.apply(self.vertices), self.triangles.copy(), dict(self.groups))

    @cached_property
    def sdf(self):
        from .sdf import MeshSDF

        return MeshSDF(self)


def parse_obj(text: str) -> TriMesh:
    """Read v/f/g lines; anything else is ignored.

    ``g face N`` starts a group collecting the following triangles under B-Rep
    face id N. Face tokens may carry ``/vt/vn`` suffixes and negative indices.
    """
    vertices: list[list[float]] = []
    triangles: list[list[int]] = []
    groups: dict[int, list[int]] = {}
    current: Optional[int] = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        parts = raw.split()
        if not parts:
            continue
        tag = parts[0]
        if tag == "v":
            try:
                vertices.append([float(x) for x in parts[1:4]])
            except ValueError:
                raise MalformedFace(f"line {lineno}: bad vertex {raw!r}") from None
            if len(vertices[-1]) != 3:
                raise MalformedFace(f"line {lineno}: vertex needs 3 coordinates")
        elif tag == "f":
            if len(parts) != 4:
                raise MalformedFace(f"line {lineno}: only triangles are supported, got {len(parts) - 1} corners")
            tri = []
            for tok in parts[1:]:
                try:
                    idx = int(tok.split("/")[0])
                except ValueError:
                    raise MalformedFace(f"line {lineno}: bad face index {tok!r}") from None
                idx = idx - 1 if idx > 0 else len(vertices) + idx
                if not 0 <= idx < len(vertices):
                    raise IndexOutOfRange(f"line {lineno}: vertex index {tok} out of range")
                tri.append(idx)
            if current is not None:
                groups[current].append(len(triangles))
            triangles.append(tri)
        elif tag == "g":
            current = None
            if len(parts) >= 3 and parts[1] == "face":
                try:
                    current = int(parts[2])
                except ValueError:
                    current = None
                if current is not None:
                    groups.setdefault(current, [])
    return TriMesh(
        np.asarray(vertices, dtype=np.float64).reshape(-1, 3),
        np.asarray(triangles, dtype=np.int64).reshape(-1, 3),
        {k: np.asarray(v, dtype=np.int64) for k, v in groups.items()},
    )


def write_obj(mesh: TriMesh) -> str:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    grouped = np.zeros(len(mesh.triangles), dtype=bool)
    order: list[tuple[Optional[int], np.ndarray]] = []
    for face_id in sorted(mesh.groups):
        idx = mesh.groups[face_id]
        grouped[idx] = True
        order.append((face_id, idx))
    rest = np.flatnonzero(~grouped)
    if rest.size:
        order.insert(0, (None, rest))
    for face_id, idx in order:
        if face_id is not None:
            lines.append(f"g face {face_id}")
        for a, b, c in mesh.triangles[idx].tolist():
            lines.append(f"f {a + 1} {b + 1} {c + 1}")
    return "\n".join(lines) + "\n"


def sample_surface(mesh: TriMesh, count: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Area-uniform surface points and the triangle each came from."""
    if count < 1:
        raise ValueError("count must be >= 1")
    areas = mesh.triangle_areas
    total = areas.sum() if len(areas) else 0.0
    if not total > 0:
        raise DegenerateMesh("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    tri = rng.choice(len(areas), size=count, p=areas / total)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    c = mesh.corners[tri]
    pts = (1 - r1)[:, None] * c[:, 0] + (r1 * (1 - r2))[:, None] * c[:, 1] + (r1 * r2)[:, None] * c[:, 2]
    return pts, tri


MIN_ACCEPTANCE = 1e-4


def sample_volume(mesh: TriMesh, count: int, seed, batch: int = 4096) -> np.ndarray:
    """Uniform points inside a closed mesh by rejection from its bounding box."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if not mesh.volume > 0:
        raise DegenerateMesh("mesh encloses no volume")
    rng = np.random.default_rng(seed)
    lo, hi = mesh.bounds
    kept: list[np.ndarray] = []
    have = drawn = 0
    while have < count:
        pts = lo + (hi - lo) * rng.random((max(batch, count), 3))
        inside = mesh.sdf.inside(pts)
        drawn += len(pts)
        kept.append(pts[inside])
        have += int(inside.sum())
        if drawn >= 64 * batch and have / drawn < MIN_ACCEPTANCE:
            raise DegenerateMesh(f"volume rejection acceptance {have / drawn:.2e} below {MIN_ACCEPTANCE}")
    return np.concatenate(kept)[:count]


_CANONICAL_COVARIANCE = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 120.0


def mass_properties(mesh: TriMesh) -> tuple[float, np.ndarray, np.ndarray]:
    """Volume, centroid and inertia tensor about the centroid, for unit density.

    Sums signed tetrahedra spanned by the origin and each triangle, so the
    result is exact for the polyhedron the mesh bounds.
    """
    c = mesh.corners
    dets = np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2]))
    volume = dets.sum() / 6.0
    if abs(volume) < 1e-15:
        raise DegenerateMesh("mesh encloses no volume")
    centroid = (dets[:, None] * c.sum(axis=1)).sum(axis=0) / (24.0 * volume)
    frames = np.transpose(c, (0, 2, 1))  # columns are the corners
    cov = np.einsum("t,tij,jk,tlk->il", dets, frames, _CANONICAL_COVARIANCE, frames)
    cov -= volume * np.outer(centroid, centroid)
    inertia = np.trace(cov) * np.eye(3) - cov
    if volume < 0:
        volume, inertia = -volume, -inertia
    return float(volume), centroid, inertia
