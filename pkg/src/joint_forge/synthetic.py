"""Parametric peg / plate / box parts with exact graphs and watertight meshes.

Templates
---------
peg_plate
    A cylindrical peg and a rectangular plate with one to three through holes
    in a row. One hole matches the peg radius and is the labeled joint; an
    optional sibling hole repeats that radius without a label.
cube_pair
    Two boxes mated top face to bottom face.
stack
    Plate, peg and a washer-like cap, for sequential multi-part assembly.

Every part is built in a canonical frame and then given a random rigid
placement, so ground-truth transforms are never trivial.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.spatial.transform import Rotation

from .brep import AxisSpec, Joint, JointSet, PartGraph, label_joint_set, part_graph_from_dict, part_graph_to_dict
from .errors import InvalidConfig
from .fileio import atomic_write_text
from .geometry.mesh import TriMesh, mass_properties, write_obj
from .geometry.transforms import PoseParams, RigidTransform, transform_from_axes

RADII = (1.0, 1.5, 2.0, 2.5)
THICKNESSES = (1.0, 2.0)
PEG_LENGTHS = (4.0, 6.0, 8.0)
BOX_SIDES = (2.0, 3.0, 4.0)
CAP_WIDTH = 1.5
CAP_THICKNESS = 1.0
PLACEMENT_RANGE = 10.0
_SNAP = 1e-12
_KEY_DECIMALS = 9


@dataclass
class SyntheticConfig:
    n: int = 200
    seed: int = 0
    peg_plate_fraction: float = 0.8
    radii: tuple = RADII
    cell: float = 6.0
    thicknesses: tuple = THICKNESSES
    peg_lengths: tuple = PEG_LENGTHS
    max_holes: int = 3
    sibling_prob: float = 0.3
    segments: int = 32
    random_placement: bool = True

    def validate(self) -> None:
        if self.n < 0:
            raise InvalidConfig("n must be >= 0")
        if not 0.0 <= self.peg_plate_fraction <= 1.0:
            raise InvalidConfig("peg_plate_fraction must lie in [0, 1]")
        if not 0.0 <= self.sibling_prob <= 1.0:
            raise InvalidConfig("sibling_prob must lie in [0, 1]")
        if self.segments < 8 or self.segments % 8:
            raise InvalidConfig("segments must be a positive multiple of 8")
        if not 1 <= self.max_holes <= 3:
            raise InvalidConfig("max_holes must be 1, 2 or 3")
        if not self.radii or min(self.radii) <= 0 or max(self.radii) >= 0.45 * self.cell:
            raise InvalidConfig("radii must be positive and leave a wall inside each cell")
        if len(set(self.radii)) < self.max_holes:
            raise InvalidConfig("need at least max_holes distinct radii")
        if min(self.thicknesses) <= 0 or min(self.peg_lengths) < max(self.thicknesses) + 2 * CAP_THICKNESS:
            raise InvalidConfig("pegs must be longer than the plate plus a cap on top")


@dataclass
class SyntheticPart:
    graph: PartGraph
    mesh: TriMesh


@dataclass
class SyntheticSample:
    name: str
    parts: tuple[SyntheticPart, SyntheticPart]
    joint_set: JointSet
    template: str

    def to_joint_sample(self):
        """The same sample in the form the loaders produce, meshes in memory."""
        from .dataset import JointSample

        a, b = self.parts
        return JointSample.in_memory(self.joint_set, a.graph, b.graph, a.mesh, b.mesh)


@dataclass
class StackAssembly:
    """Parts in assembly order, the pair sequence, and ground-truth placements."""

    parts: list[SyntheticPart]
    # (new part, already placed part it joins), by index into parts
    sequence: list[tuple[int, int]]
    joint_sets: list[JointSet]
    placements: list[RigidTransform] = field(default_factory=list)


# ---------------------------------------------------------------------------
# part assembly helpers


class _PartBuilder:
    def __init__(self, part_id: str):
        self.part_id = part_id
        self.nodes: list[dict] = []
        self.links: list[tuple[int, int]] = []
        self._vertex_key: dict[tuple, int] = {}
        self.vertices: list[np.ndarray] = []
        self.triangles: list[tuple[int, int, int]] = []
        self.groups: dict[int, list[int]] = {}

    def node(self, kind: str, etype: str, origin, direction, *, length=0.0, area=0.0, radius=None,
             reversed_=False, convex=True) -> int:
        idx = len(self.nodes)
        self.nodes.append(
            {
                "id": idx,
                "kind": kind,
                "type": etype,
                "reversed": reversed_,
                "length": float(length),
                "area": float(area),
                "dihedral": float(np.pi / 2) if kind == "edge" else 0.0,
                "convexity": ("Convex" if convex else "Concave") if kind == "edge" else None,
                "axis_origin": [float(x) for x in origin],
                "axis_dir": [float(x) for x in direction],
                "radius": None if radius is None else float(radius),
            }
        )
        return idx

    def link(self, a: int, b: int) -> None:
        self.links.append((a, b))

    def edge_between(self, edge: int, face_a: int, face_b: int, face_link: bool = True) -> None:
        self.link(face_a, edge)
        self.link(face_b, edge)
        if face_link:
            self.link(face_a, face_b)

    def _vertex(self, p) -> int:
        p = np.asarray(p, dtype=np.float64)
        key = tuple(np.round(p, _KEY_DECIMALS) + 0.0)
        idx = self._vertex_key.get(key)
        if idx is None:
            idx = len(self.vertices)
            self._vertex_key[key] = idx
            self.vertices.append(p)
        return idx

    def triangles_for(self, face_id: int, tris: Sequence, outward: Union[np.ndarray, Callable]) -> None:
        """Add triangles to a face, wound so their normals point ``outward``."""
        group = self.groups.setdefault(face_id, [])
        for a, b, c in tris:
            a, b, c = (np.asarray(x, dtype=np.float64) for x in (a, b, c))
            normal = np.cross(b - a, c - a)
            want = outward((a + b + c) / 3.0) if callable(outward) else outward
            if normal @ want < 0:
                b, c = c, b
            group.append(len(self.triangles))
            self.triangles.append((self._vertex(a), self._vertex(b), self._vertex(c)))

    def build(self, placement: RigidTransform) -> SyntheticPart:
        vertices = placement.apply(np.asarray(self.vertices))
        mesh = TriMesh(vertices, np.asarray(self.triangles), {k: np.asarray(v) for k, v in self.groups.items()})
        nodes = []
        for node in self.nodes:
            node = dict(node)
            node["axis_origin"] = placement.apply(np.asarray(node["axis_origin"])).tolist()
            node["axis_dir"] = placement.apply_direction(np.asarray(node["axis_dir"])).tolist()
            nodes.append(node)
        volume, _, inertia = mass_properties(mesh)
        doc = {
            "part_id": self.part_id,
            "bbox": mesh.bounds.tolist(),
            "mesh": f"{self.part_id}.obj",
            "nodes": nodes,
            "links": [{"s": s, "t": t} for s, t in self.links],
            "volume": volume,
            "inertia": np.sort(np.linalg.eigvalsh(inertia)).tolist(),
        }
        return SyntheticPart(part_graph_from_dict(doc), mesh)


def _ring(n_seg: int) -> np.ndarray:
    angles = 2 * np.pi * np.arange(n_seg) / n_seg
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _square_ring(center, half: float, n_seg: int) -> np.ndarray:
    """Points where rays at the ring angles leave a square of half-width ``half``."""
    dirs = _ring(n_seg)
    pts = dirs * (half / np.abs(dirs).max(axis=1))[:, None]
    pts[np.abs(np.abs(pts) - half) < _SNAP] = np.sign(pts[np.abs(np.abs(pts) - half) < _SNAP]) * half
    pts[np.abs(pts) < _SNAP] = 0.0
    return pts + center


def _strip(lower: np.ndarray, upper: np.ndarray, closed: bool) -> list:
    """Triangles between two matching polylines."""
    tris = []
    count = len(lower)
    for k in range(count if closed else count - 1):
        k1 = (k + 1) % count
        tris.append((lower[k], lower[k1], upper[k1]))
        tris.append((lower[k], upper[k1], upper[k]))
    return tris


def _lift(points2d: np.ndarray, z: float) -> np.ndarray:
    return np.column_stack([points2d, np.full(len(points2d), z)])


def _add_box_edges(b: _PartBuilder, faces: dict, size) -> None:
    """Twelve line edges of an axis-aligned box anchored at the origin."""
    sx, sy, sz = size
    corner = lambda x, y, z: np.array([x, y, z], dtype=np.float64)  # noqa: E731
    specs = []
    for z, face_z in ((sz, "top"), (0.0, "bottom")):
        specs += [
            (corner(0, 0, z), corner(sx, 0, z), face_z, "-y"),
            (corner(0, sy, z), corner(sx, sy, z), face_z, "+y"),
            (corner(0, 0, z), corner(0, sy, z), face_z, "-x"),
            (corner(sx, 0, z), corner(sx, sy, z), face_z, "+x"),
        ]
    for x, face_x in ((0.0, "-x"), (sx, "+x")):
        for y, face_y in ((0.0, "-y"), (sy, "+y")):
            specs.append((corner(x, y, 0), corner(x, y, sz), face_x, face_y))
    for start, end, fa, fb in specs:
        length = float(np.linalg.norm(end - start))
        e = b.node("edge", "Line", start, (end - start) / length, length=length)
        b.edge_between(e, faces[fa], faces[fb])


def _add_box_faces(b: _PartBuilder, size, top_area: float, top_centroid_xy) -> dict:
    sx, sy, sz = size
    cx, cy = top_centroid_xy
    faces = {
        "top": b.node("face", "Plane", (cx, cy, sz), (0, 0, 1), area=top_area),
        "bottom": b.node("face", "Plane", (cx, cy, 0), (0, 0, -1), area=top_area),
        "-y": b.node("face", "Plane", (sx / 2, 0, sz / 2), (0, -1, 0), area=sx * sz),
        "+y": b.node("face", "Plane", (sx / 2, sy, sz / 2), (0, 1, 0), area=sx * sz),
        "-x": b.node("face", "Plane", (0, sy / 2, sz / 2), (-1, 0, 0), area=sy * sz),
        "+x": b.node("face", "Plane", (sx, sy / 2, sz / 2), (1, 0, 0), area=sy * sz),
    }
    return faces


_SIDE_NORMALS = {"-y": (0, -1, 0), "+y": (0, 1, 0), "-x": (-1, 0, 0), "+x": (1, 0, 0)}


def _box_side_walls(b: _PartBuilder, faces: dict, outline: np.ndarray, size) -> None:
    """Side walls of a prism whose top outline vertices are ``outline``."""
    sx, sy, sz = size
    picks = {
        "-y": (outline[:, 1] == 0.0, 0),
        "+y": (outline[:, 1] == sy, 0),
        "-x": (outline[:, 0] == 0.0, 1),
        "+x": (outline[:, 0] == sx, 1),
    }
    for name, (mask, sort_axis) in picks.items():
        pts = outline[mask]
        pts = pts[np.argsort(pts[:, sort_axis], kind="stable")]
        b.triangles_for(faces[name], _strip(_lift(pts, 0.0), _lift(pts, sz), closed=False),
                        np.asarray(_SIDE_NORMALS[name], dtype=np.float64))


# ---------------------------------------------------------------------------
# templates


def make_peg(part_id: str, radius: float, length: float, n_seg: int, placement: RigidTransform) -> SyntheticPart:
    """Cylinder along +z from its base at the origin."""
    b = _PartBuilder(part_id)
    z = (0.0, 0.0, 1.0)
    cyl = b.node("face", "Cylinder", (0, 0, 0), z, area=2 * np.pi * radius * length, radius=radius)
    bottom = b.node("face", "Plane", (0, 0, 0), (0, 0, -1), area=np.pi * radius**2)
    top = b.node("face", "Plane", (0, 0, length), z, area=np.pi * radius**2)
    c_bot = b.node("edge", "Circle", (0, 0, 0), z, length=2 * np.pi * radius, radius=radius)
    c_top = b.node("edge", "Circle", (0, 0, length), z, length=2 * np.pi * radius, radius=radius)
    b.edge_between(c_bot, cyl, bottom)
    b.edge_between(c_top, cyl, top)

    ring = radius * _ring(n_seg)
    lower, upper = _lift(ring, 0.0), _lift(ring, length)
    b.triangles_for(cyl, _strip(lower, upper, closed=True), lambda p: np.array([p[0], p[1], 0.0]))
    for face, pts, normal in ((bottom, lower, -1.0), (top, upper, 1.0)):
        center = np.array([0.0, 0.0, pts[0, 2]])
        fan = [(center, pts[k], pts[(k + 1) % n_seg]) for k in range(n_seg)]
        b.triangles_for(face, fan, np.array([0.0, 0.0, normal]))
    return b.build(placement)


def make_plate(
    part_id: str,
    radii: Sequence[float],
    thickness: float,
    cell: float,
    n_seg: int,
    placement: RigidTransform,
) -> tuple[SyntheticPart, list[int]]:
    """Plate of square cells with a centered hole each, plus a half-cell solid end.

    Returns the part and the cylinder-face index of every hole.
    """
    holes = len(radii)
    size = (holes * cell + cell / 2, cell, thickness)
    centers = [np.array([(i + 0.5) * cell, cell / 2]) for i in range(holes)]
    rect_area = size[0] * size[1]
    hole_areas = [np.pi * r**2 for r in radii]
    top_area = rect_area - sum(hole_areas)
    centroid = (np.array([size[0] / 2, size[1] / 2]) * rect_area - sum(a * c for a, c in zip(hole_areas, centers))) / top_area

    b = _PartBuilder(part_id)
    faces = _add_box_faces(b, size, top_area, centroid)
    _add_box_edges(b, faces, size)
    hole_faces = []
    z = (0.0, 0.0, 1.0)
    for c, r in zip(centers, radii):
        cyl = b.node("face", "Cylinder", (c[0], c[1], 0), z, area=2 * np.pi * r * thickness, radius=r, reversed_=True)
        c_top = b.node("edge", "Circle", (c[0], c[1], thickness), z, length=2 * np.pi * r, radius=r)
        c_bot = b.node("edge", "Circle", (c[0], c[1], 0), z, length=2 * np.pi * r, radius=r)
        b.edge_between(c_top, cyl, faces["top"])
        b.edge_between(c_bot, cyl, faces["bottom"])
        hole_faces.append(cyl)

    # top outline: per-cell annulus between the hole polygon and the square
    tris2d = []
    outline = []
    for c, r, cyl in zip(centers, radii, hole_faces):
        inner = c + r * _ring(n_seg)
        outer = _square_ring(c, cell / 2, n_seg)
        outline.append(outer)
        tris2d += _strip(inner, outer, closed=True)
        wall = _strip(_lift(inner, 0.0), _lift(inner, thickness), closed=True)
        b.triangles_for(cyl, wall, lambda p, c=c: np.array([c[0] - p[0], c[1] - p[1], 0.0]))
    # solid end block, fanned from its far bottom corner
    x0, x1 = holes * cell, size[0]
    seam = outline[-1][np.abs(outline[-1][:, 0] - x0) < _SNAP]
    seam = seam[np.argsort(seam[:, 1])]
    apex = np.array([x1, 0.0])
    chain = list(seam) + [np.array([x1, cell])]
    tris2d += [(apex, chain[k], chain[k + 1]) for k in range(len(chain) - 1)]
    outline.append(np.array([apex, [x1, cell]]))
    for zval, face, sign in ((thickness, faces["top"], 1.0), (0.0, faces["bottom"], -1.0)):
        lifted = [tuple(_lift(np.asarray(t), zval)) for t in tris2d]
        b.triangles_for(face, lifted, np.array([0.0, 0.0, sign]))
    outline = np.unique(np.round(np.concatenate(outline), _KEY_DECIMALS) + 0.0, axis=0)
    _box_side_walls(b, faces, outline, size)
    return b.build(placement), hole_faces


def make_box(part_id: str, size, placement: RigidTransform) -> SyntheticPart:
    sx, sy, sz = size
    b = _PartBuilder(part_id)
    faces = _add_box_faces(b, size, sx * sy, (sx / 2, sy / 2))
    _add_box_edges(b, faces, size)
    rect = np.array([[0, 0], [sx, 0], [sx, sy], [0, sy]], dtype=np.float64)
    for zval, face, sign in ((sz, faces["top"], 1.0), (0.0, faces["bottom"], -1.0)):
        quad = _lift(rect, zval)
        b.triangles_for(face, [(quad[0], quad[1], quad[2]), (quad[0], quad[2], quad[3])], np.array([0.0, 0.0, sign]))
    _box_side_walls(b, faces, rect, size)
    return b.build(placement)


def make_cap(part_id: str, inner: float, outer: float, thickness: float, n_seg: int,
             placement: RigidTransform) -> SyntheticPart:
    """Annular washer around +z, bottom face at z = 0."""
    b = _PartBuilder(part_id)
    z = (0.0, 0.0, 1.0)
    ring_area = np.pi * (outer**2 - inner**2)
    top = b.node("face", "Plane", (0, 0, thickness), z, area=ring_area)
    bottom = b.node("face", "Plane", (0, 0, 0), (0, 0, -1), area=ring_area)
    outer_cyl = b.node("face", "Cylinder", (0, 0, 0), z, area=2 * np.pi * outer * thickness, radius=outer)
    inner_cyl = b.node("face", "Cylinder", (0, 0, 0), z, area=2 * np.pi * inner * thickness, radius=inner, reversed_=True)
    for r, cyl in ((outer, outer_cyl), (inner, inner_cyl)):
        for zval, face in ((thickness, top), (0.0, bottom)):
            e = b.node("edge", "Circle", (0, 0, zval), z, length=2 * np.pi * r, radius=r)
            b.edge_between(e, cyl, face)
    ring = _ring(n_seg)
    for zval, face, sign in ((thickness, top, 1.0), (0.0, bottom, -1.0)):
        b.triangles_for(face, _strip(_lift(inner * ring, zval), _lift(outer * ring, zval), closed=True),
                        np.array([0.0, 0.0, sign]))
    for r, cyl, sign in ((outer, outer_cyl, 1.0), (inner, inner_cyl, -1.0)):
        wall = _strip(_lift(r * ring, 0.0), _lift(r * ring, thickness), closed=True)
        b.triangles_for(cyl, wall, lambda p, s=sign: s * np.array([p[0], p[1], 0.0]))
    return b.build(placement)


# ---------------------------------------------------------------------------
# samples


def random_placement(rng: np.random.Generator, enabled: bool = True) -> RigidTransform:
    if not enabled:
        return RigidTransform.identity()
    rot = Rotation.random(random_state=rng).as_matrix()
    return RigidTransform(rot, rng.uniform(-PLACEMENT_RANGE, PLACEMENT_RANGE, size=3))


def _axis(part: SyntheticPart, index: int) -> AxisSpec:
    return part.graph.axes[index]


def _joint(part1: SyntheticPart, u: int, part2: SyntheticPart, v: int, pose: PoseParams) -> Joint:
    t = transform_from_axes(_axis(part1, u), _axis(part2, v), pose)
    return Joint(u=u, v=v, transform=t.matrix, offset=pose.offset, rotation=pose.rotation, flip=pose.flip)


def peg_plate_sample(name: str, rng: np.random.Generator, cfg: SyntheticConfig) -> SyntheticSample:
    holes = int(rng.integers(1, cfg.max_holes + 1))
    radii = list(rng.choice(np.asarray(cfg.radii), size=holes, replace=False))
    labeled = int(rng.integers(holes))
    if holes > 1 and rng.random() < cfg.sibling_prob:
        other = int(rng.choice([i for i in range(holes) if i != labeled]))
        radii[other] = radii[labeled]
    radius = float(radii[labeled])
    thickness = float(rng.choice(np.asarray(cfg.thicknesses)))
    length = float(rng.choice(np.asarray(cfg.peg_lengths)))
    peg = make_peg(f"{name}_peg", radius, length, cfg.segments, random_placement(rng, cfg.random_placement))
    plate, hole_faces = make_plate(
        f"{name}_plate", [float(r) for r in radii], thickness, cfg.cell, cfg.segments,
        random_placement(rng, cfg.random_placement),
    )
    pose = PoseParams(offset=-(length - thickness) / 2)
    js = JointSet(
        parts=(peg.graph.part_id, plate.graph.part_id),
        joints=[_joint(peg, 0, plate, hole_faces[labeled], pose)],
        holes=(False, True),
        name=name,
    )
    label_joint_set(js, peg.graph, plate.graph)
    return SyntheticSample(name, (peg, plate), js, "peg_plate")


def cube_pair_sample(name: str, rng: np.random.Generator, cfg: SyntheticConfig) -> SyntheticSample:
    sides = np.asarray(BOX_SIDES)
    box1 = make_box(f"{name}_box1", tuple(rng.choice(sides, size=3)), random_placement(rng, cfg.random_placement))
    box2 = make_box(f"{name}_box2", tuple(rng.choice(sides, size=3)), random_placement(rng, cfg.random_placement))
    # face 0 is the top, face 1 the bottom; normals face each other, hence the flip
    js = JointSet(
        parts=(box1.graph.part_id, box2.graph.part_id),
        joints=[_joint(box1, 0, box2, 1, PoseParams(flip=True))],
        holes=(False, False),
        name=name,
    )
    label_joint_set(js, box1.graph, box2.graph)
    return SyntheticSample(name, (box1, box2), js, "cube_pair")


def gen_synthetic(cfg: Optional[SyntheticConfig] = None) -> list[SyntheticSample]:
    cfg = cfg or SyntheticConfig()
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    out = []
    for i in range(cfg.n):
        name = f"s{i:05d}"
        if rng.random() < cfg.peg_plate_fraction:
            out.append(peg_plate_sample(name, rng, cfg))
        else:
            out.append(cube_pair_sample(name, rng, cfg))
    return out


def make_stack(seed: int = 0, cfg: Optional[SyntheticConfig] = None) -> StackAssembly:
    """Plate with one hole, a peg through it, and a cap resting on the plate."""
    cfg = cfg or SyntheticConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    radius = float(rng.choice(np.asarray(cfg.radii)))
    thickness = float(rng.choice(np.asarray(cfg.thicknesses)))
    length = float(rng.choice(np.asarray(cfg.peg_lengths)))
    plate, (hole,) = make_plate("stack_plate", [radius], thickness, cfg.cell, cfg.segments,
                                random_placement(rng, cfg.random_placement))
    peg = make_peg("stack_peg", radius, length, cfg.segments, random_placement(rng, cfg.random_placement))
    cap = make_cap("stack_cap", radius, radius + CAP_WIDTH, CAP_THICKNESS, cfg.segments,
                   random_placement(rng, cfg.random_placement))
    peg_joint = _joint(peg, 0, plate, hole, PoseParams(offset=-(length - thickness) / 2))
    # cap inner cylinder is face 3; its bottom sits on the plate top
    cap_joint = _joint(cap, 3, peg, 0, PoseParams(offset=(length + thickness) / 2))
    sets = [
        label_joint_set(JointSet((peg.graph.part_id, plate.graph.part_id), [peg_joint], (False, True), "stack_1"),
                        peg.graph, plate.graph),
        label_joint_set(JointSet((cap.graph.part_id, peg.graph.part_id), [cap_joint], (True, False), "stack_2"),
                        cap.graph, peg.graph),
    ]
    peg_place = RigidTransform.from_matrix(peg_joint.transform)
    cap_place = peg_place @ RigidTransform.from_matrix(cap_joint.transform)
    return StackAssembly([plate, peg, cap], [(1, 0), (2, 1)], sets, [RigidTransform.identity(), peg_place, cap_place])


# ---------------------------------------------------------------------------
# files


def write_part(part: SyntheticPart, out_dir: Path) -> None:
    atomic_write_text(out_dir / f"{part.graph.part_id}.json", json.dumps(part_graph_to_dict(part.graph), sort_keys=True))
    atomic_write_text(out_dir / part.graph.mesh, write_obj(part.mesh))


def write_dataset(samples: Sequence[SyntheticSample], out_dir) -> Path:
    """One JSON + OBJ per part and one ``joint_set_<name>.json`` per sample."""
    from .brep import joint_set_to_dict

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for sample in samples:
        for part in sample.parts:
            write_part(part, out_dir)
        atomic_write_text(
            out_dir / f"joint_set_{sample.name}.json", json.dumps(joint_set_to_dict(sample.joint_set), sort_keys=True)
        )
    return out_dir
