"""B-Rep part graphs: parsing, joint axes, featurization and label expansion.

A part is a graph whose vertices are B-Rep faces and edges and whose links are
face/edge adjacency. Geometric parameters (axis origin, axis direction, radius)
are precomputed per entity and stored in the JSON document, so deriving a joint
axis is a lookup plus normalization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

import numpy as np

from .errors import (
    EmptyGraph,
    InvalidGeometry,
    MalformedDocument,
    SchemaViolation,
    UnsupportedEntity,
)

SURFACE_TYPES = (
    "Plane",
    "Cylinder",
    "Cone",
    "Sphere",
    "Torus",
    "EllipticalCylinder",
    "EllipticalCone",
    "Nurbs",
)
CURVE_TYPES = ("Line", "Arc", "Circle", "Ellipse", "EllipticalArc", "Nurbs")
CONVEXITY_TYPES = ("Convex", "Concave", "Smooth")

FEATURE_NAMES = ("type", "reversed", "length", "area", "dihedral", "convexity")
DEFAULT_FEATURES = frozenset({"type", "reversed", "length"})

# surfaces whose axis comes from (origin, axis)
_AXIAL_SURFACES = {"Cylinder", "Cone", "Torus", "EllipticalCylinder", "EllipticalCone"}
_ROUND_TYPES = {"Cylinder", "Circle", "Arc"}

DIRECTION_TOL = 1e-6
EQUIV_ANGLE_TOL = 1e-4
EQUIV_DIST_FRAC = 1e-6
SIBLING_REL_TOL = 1e-3


class EntityKind(Enum):
    FACE = "face"
    EDGE = "edge"


@dataclass(eq=False)
class AxisSpec:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.direction = np.asarray(self.direction, dtype=np.float64).reshape(3)

    def transformed(self, transform) -> "AxisSpec":
        """The axis carried by a rigid transform (anything with apply/apply_direction)."""
        return AxisSpec(transform.apply(self.origin), transform.apply_direction(self.direction))


@dataclass(eq=False)
class Entity:
    kind: EntityKind
    type: str
    reversed: bool = False
    length: float = 0.0
    area: float = 0.0
    dihedral: float = 0.0
    convexity: Optional[str] = None
    axis_origin: Optional[np.ndarray] = None
    axis_dir: Optional[np.ndarray] = None
    radius: Optional[float] = None
    node_id: int = 0

    @property
    def is_nurbs(self) -> bool:
        return self.type == "Nurbs"

    @property
    def is_face(self) -> bool:
        return self.kind is EntityKind.FACE

    @property
    def type_key(self) -> str:
        """Kind-qualified type name, e.g. ``face:Cylinder``."""
        return f"{self.kind.value}:{self.type}"

    @property
    def size(self) -> float:
        """Area for faces, length for edges."""
        return self.area if self.is_face else self.length


@dataclass(eq=False)
class PartGraph:
    part_id: str
    entities: list[Entity]
    links: list[tuple[int, int]]
    mesh: str = ""
    bbox: np.ndarray = field(default_factory=lambda: np.zeros((2, 3)))
    volume: Optional[float] = None
    inertia: Optional[list[float]] = None

    def __post_init__(self):
        self.bbox = np.asarray(self.bbox, dtype=np.float64).reshape(2, 3)
        n = len(self.entities)
        for s, t in self.links:
            if not (0 <= s < n and 0 <= t < n):
                raise SchemaViolation(f"link ({s}, {t}) references a missing vertex")
            if s == t:
                raise SchemaViolation(f"self-loop on vertex {s}")
        self._axes = [None if e.is_nurbs else derive_axis(e) for e in self.entities]
        deg = np.zeros(n, dtype=np.int64)
        for s, t in self.links:
            deg[s] += 1
            deg[t] += 1
        self._degree = deg

    def __len__(self) -> int:
        return len(self.entities)

    @property
    def n(self) -> int:
        return len(self.entities)

    @property
    def axes(self) -> list[Optional[AxisSpec]]:
        return self._axes

    @property
    def degree(self) -> np.ndarray:
        return self._degree

    @property
    def kinds(self) -> np.ndarray:
        """Boolean array, True where the vertex is a face."""
        return np.array([e.is_face for e in self.entities], dtype=bool)

    @property
    def nurbs_mask(self) -> np.ndarray:
        return np.array([e.is_nurbs for e in self.entities], dtype=bool)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.bbox[1] - self.bbox[0]))

    def edge_index(self) -> np.ndarray:
        """Links as a (2, E) array of vertex indices."""
        if not self.links:
            return np.zeros((2, 0), dtype=np.int64)
        return np.asarray(self.links, dtype=np.int64).T.copy()

    @property
    def has_hole_entities(self) -> bool:
        return any(e.type == "Cylinder" for e in self.entities)


def _vec3(value, what: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise SchemaViolation(f"{what} must be a 3-vector, got {value!r}") from None
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise SchemaViolation(f"{what} must be a finite 3-vector, got {value!r}")
    return arr


def _unit(vec: np.ndarray, what: str) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm < DIRECTION_TOL:
        raise InvalidGeometry(f"{what} has degenerate direction {vec.tolist()}")
    return vec / norm


def derive_axis(entity: Entity) -> AxisSpec:
    """Joint axis (origin, unit direction) implied by an entity's geometry.

    Planes use centroid and normal, axial surfaces their origin and axis,
    spheres their origin and global +Z, lines the start point and line
    direction, conics their center and normal.
    """
    if entity.is_nurbs:
        raise UnsupportedEntity("NURBS entities have no joint axis")
    if entity.axis_origin is None:
        raise InvalidGeometry(f"{entity.type_key} entity is missing axis_origin")
    origin = np.asarray(entity.axis_origin, dtype=np.float64)
    if entity.is_face and entity.type == "Sphere":
        return AxisSpec(origin.copy(), np.array([0.0, 0.0, 1.0]))
    if entity.axis_dir is None:
        raise InvalidGeometry(f"{entity.type_key} entity is missing axis_dir")
    direction = _unit(np.asarray(entity.axis_dir, dtype=np.float64), entity.type_key)
    return AxisSpec(origin.copy(), direction)


def _parse_entity(node: dict, pos: int) -> Entity:
    if not isinstance(node, dict):
        raise SchemaViolation(f"node {pos} is not an object")
    for key in ("id", "kind", "type"):
        if key not in node:
            raise SchemaViolation(f"node {pos} is missing '{key}'")
    try:
        kind = EntityKind(node["kind"])
    except ValueError:
        raise SchemaViolation(f"node {pos}: bad kind {node['kind']!r}") from None
    allowed = SURFACE_TYPES if kind is EntityKind.FACE else CURVE_TYPES
    etype = node["type"]
    if etype not in allowed:
        raise SchemaViolation(f"node {pos}: bad {kind.value} type {etype!r}")
    convexity = node.get("convexity")
    if convexity is not None and convexity not in CONVEXITY_TYPES:
        raise SchemaViolation(f"node {pos}: bad convexity {convexity!r}")

    def num(key, default=0.0):
        val = node.get(key, default)
        if val is None:
            return default
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise SchemaViolation(f"node {pos}: '{key}' must be a number")
        return float(val)

    length, area = num("length"), num("area")
    if length < 0 or area < 0:
        raise InvalidGeometry(f"node {pos}: negative length or area")
    reversed_flag = node.get("reversed", False)
    if not isinstance(reversed_flag, bool):
        raise SchemaViolation(f"node {pos}: 'reversed' must be a boolean")

    origin = node.get("axis_origin")
    direction = node.get("axis_dir")
    origin = None if origin is None else _vec3(origin, f"node {pos} axis_origin")
    if direction is not None:
        direction = _vec3(direction, f"node {pos} axis_dir")
        direction = _unit(direction, f"node {pos} axis_dir")
    radius = node.get("radius")
    if radius is not None:
        radius = num("radius")
    node_id = node["id"]
    if isinstance(node_id, bool) or not isinstance(node_id, int):
        raise SchemaViolation(f"node {pos}: 'id' must be an integer")
    entity = Entity(
        kind=kind,
        type=etype,
        reversed=reversed_flag,
        length=length,
        area=area,
        dihedral=num("dihedral"),
        convexity=convexity,
        axis_origin=origin,
        axis_dir=direction,
        radius=radius,
        node_id=node_id,
    )
    if not entity.is_nurbs:
        derive_axis(entity)
    return entity


def part_graph_from_dict(doc: dict) -> PartGraph:
    if not isinstance(doc, dict):
        raise SchemaViolation("part graph document must be a JSON object")
    for key in ("part_id", "nodes", "links"):
        if key not in doc:
            raise SchemaViolation(f"part graph is missing '{key}'")
    if not isinstance(doc["nodes"], list) or not isinstance(doc["links"], list):
        raise SchemaViolation("'nodes' and 'links' must be lists")
    entities = [_parse_entity(node, i) for i, node in enumerate(doc["nodes"])]
    pos = {}
    for i, ent in enumerate(entities):
        if ent.node_id in pos:
            raise SchemaViolation(f"duplicate node id {ent.node_id}")
        pos[ent.node_id] = i
    links = []
    seen = set()
    for link in doc["links"]:
        try:
            s, t = link["s"], link["t"]
        except (TypeError, KeyError):
            raise SchemaViolation(f"bad link {link!r}") from None
        if s not in pos or t not in pos:
            raise SchemaViolation(f"link ({s}, {t}) references an unknown node id")
        s, t = pos[s], pos[t]
        if s == t:
            raise SchemaViolation(f"self-loop on node {link['s']}")
        key = (min(s, t), max(s, t))
        if key in seen:
            raise SchemaViolation(f"duplicate link {link!r}")
        seen.add(key)
        links.append((s, t))
    bbox = doc.get("bbox", [[0, 0, 0], [0, 0, 0]])
    try:
        bbox = np.asarray(bbox, dtype=np.float64).reshape(2, 3)
    except (TypeError, ValueError):
        raise SchemaViolation("'bbox' must be two 3-vectors") from None
    inertia = doc.get("inertia")
    return PartGraph(
        part_id=str(doc["part_id"]),
        entities=entities,
        links=links,
        mesh=str(doc.get("mesh", "")),
        bbox=bbox,
        volume=None if doc.get("volume") is None else float(doc["volume"]),
        inertia=None if inertia is None else [float(x) for x in inertia],
    )


def parse_part_graph(json_document: str) -> PartGraph:
    try:
        doc = json.loads(json_document)
    except (json.JSONDecodeError, TypeError) as exc:
        raise MalformedDocument(str(exc)) from None
    return part_graph_from_dict(doc)


def _list(vec) -> Optional[list]:
    return None if vec is None else [float(x) for x in vec]


def part_graph_to_dict(part: PartGraph) -> dict:
    nodes = []
    for e in part.entities:
        nodes.append(
            {
                "id": e.node_id,
                "kind": e.kind.value,
                "type": e.type,
                "reversed": e.reversed,
                "length": e.length,
                "area": e.area,
                "dihedral": e.dihedral,
                "convexity": e.convexity,
                "axis_origin": _list(e.axis_origin),
                "axis_dir": _list(e.axis_dir),
                "radius": e.radius,
            }
        )
    ids = [e.node_id for e in part.entities]
    doc = {
        "part_id": part.part_id,
        "bbox": [_list(part.bbox[0]), _list(part.bbox[1])],
        "mesh": part.mesh,
        "nodes": nodes,
        "links": [{"s": ids[s], "t": ids[t]} for s, t in part.links],
    }
    if part.volume is not None:
        doc["volume"] = part.volume
    if part.inertia is not None:
        doc["inertia"] = list(part.inertia)
    return doc


def serialize_part_graph(part: PartGraph) -> str:
    return json.dumps(part_graph_to_dict(part))


# ---------------------------------------------------------------------------
# features


def feature_width(active_features: Iterable[str] = DEFAULT_FEATURES) -> int:
    active = set(active_features)
    unknown = active - set(FEATURE_NAMES)
    if unknown:
        raise SchemaViolation(f"unknown features {sorted(unknown)}")
    width = 0
    if "type" in active:
        width += len(SURFACE_TYPES) + len(CURVE_TYPES)
    width += sum(1 for name in ("reversed", "length", "area", "dihedral") if name in active)
    if "convexity" in active:
        width += len(CONVEXITY_TYPES)
    return width


def featurize(part: PartGraph, active_features: Iterable[str] = DEFAULT_FEATURES) -> np.ndarray:
    """Per-vertex feature matrix (n x F).

    Column blocks, in order and only when active: surface/curve type one-hot,
    reversed flag, edge length, face area, dihedral angle, convexity one-hot.
    Faces leave edge-only slots at zero and vice versa.
    """
    active = set(active_features)
    width = feature_width(active)
    out = np.zeros((part.n, width))
    n_surf = len(SURFACE_TYPES)
    for row, e in enumerate(part.entities):
        col = 0
        if "type" in active:
            slot = SURFACE_TYPES.index(e.type) if e.is_face else n_surf + CURVE_TYPES.index(e.type)
            out[row, slot] = 1.0
            col = n_surf + len(CURVE_TYPES)
        if "reversed" in active:
            out[row, col] = float(e.reversed)
            col += 1
        if "length" in active:
            out[row, col] = 0.0 if e.is_face else e.length
            col += 1
        if "area" in active:
            out[row, col] = e.area if e.is_face else 0.0
            col += 1
        if "dihedral" in active:
            out[row, col] = 0.0 if e.is_face else e.dihedral
            col += 1
        if "convexity" in active:
            if not e.is_face and e.convexity is not None:
                out[row, col + CONVEXITY_TYPES.index(e.convexity)] = 1.0
            col += len(CONVEXITY_TYPES)
    return out


# ---------------------------------------------------------------------------
# joint connectivity


@dataclass(frozen=True)
class ConnectivityIndex:
    """Dense n x m link enumeration between two parts, row-major."""

    n: int
    m: int

    @property
    def num_edges(self) -> int:
        return self.n * self.m

    def edge(self, k: int) -> tuple[int, int]:
        if not 0 <= k < self.n * self.m:
            raise IndexError(k)
        return divmod(k, self.m)

    def index(self, u: int, v: int) -> int:
        if not (0 <= u < self.n and 0 <= v < self.m):
            raise IndexError((u, v))
        return u * self.m + v

    def sources(self) -> np.ndarray:
        return np.repeat(np.arange(self.n), self.m)

    def targets(self) -> np.ndarray:
        return np.tile(np.arange(self.m), self.n)


def build_connectivity(g1: PartGraph, g2: PartGraph) -> ConnectivityIndex:
    if g1.n == 0 or g2.n == 0:
        raise EmptyGraph("both part graphs need at least one vertex")
    return ConnectivityIndex(g1.n, g2.n)


# ---------------------------------------------------------------------------
# label expansion


def _point_line_distance(point, axis: AxisSpec) -> float:
    diff = point - axis.origin
    return float(np.linalg.norm(diff - np.dot(diff, axis.direction) * axis.direction))


def same_line(a: AxisSpec, b: AxisSpec, angle_tol: float, dist_tol: float) -> bool:
    """True if two axes lie on one infinite line, in either direction."""
    cos = min(1.0, abs(float(np.dot(a.direction, b.direction))))
    sin = float(np.linalg.norm(np.cross(a.direction, b.direction)))
    if np.arctan2(sin, cos) > angle_tol:
        return False
    dist = max(_point_line_distance(b.origin, a), _point_line_distance(a.origin, b))
    return dist <= dist_tol


def expand_equivalents(part: PartGraph, entity_index: int) -> set[int]:
    """All entities whose joint axis is collinear with the given entity's."""
    if part.entities[entity_index].is_nurbs:
        raise UnsupportedEntity("NURBS entities have no joint axis")
    axis = part.axes[entity_index]
    dist_tol = EQUIV_DIST_FRAC * part.diagonal
    out = {entity_index}
    for j, other in enumerate(part.axes):
        if other is not None and same_line(axis, other, EQUIV_ANGLE_TOL, dist_tol):
            out.add(j)
    return out


def _sizes_match(a: float, b: float, rel_tol: float) -> bool:
    return abs(a - b) <= rel_tol * max(abs(a), abs(b))


def find_siblings(part: PartGraph, labeled: Iterable[int]) -> set[int]:
    """Unlabeled entities that look like a labeled one (type, size, degree)."""
    labeled = set(labeled)
    excluded = set(labeled)
    for i in labeled:
        if not part.entities[i].is_nurbs:
            excluded |= expand_equivalents(part, i)
    out = set()
    for j, cand in enumerate(part.entities):
        if j in excluded:
            continue
        for i in labeled:
            ref = part.entities[i]
            if (
                cand.kind is ref.kind
                and cand.type == ref.type
                and part.degree[j] == part.degree[i]
                and _sizes_match(cand.size, ref.size, SIBLING_REL_TOL)
            ):
                out.add(j)
                break
    return out


def is_round(entity: Entity) -> bool:
    return entity.type in _ROUND_TYPES and entity.radius is not None


# ---------------------------------------------------------------------------
# joint sets


def check_rigid(matrix: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    mat = np.asarray(matrix, dtype=np.float64)
    if mat.shape == (16,):
        mat = mat.reshape(4, 4)
    if mat.shape != (4, 4) or not np.all(np.isfinite(mat)):
        raise SchemaViolation("transform must be 16 finite floats")
    rot = mat[:3, :3]
    if (
        np.max(np.abs(rot.T @ rot - np.eye(3))) > tol
        or abs(np.linalg.det(rot) - 1.0) > tol
        or np.max(np.abs(mat[3] - [0, 0, 0, 1])) > tol
    ):
        raise InvalidGeometry("transform is not rigid")
    return mat


@dataclass(eq=False)
class Joint:
    u: int
    v: int
    transform: np.ndarray
    offset: float = 0.0
    rotation: float = 0.0
    flip: bool = False

    def __post_init__(self):
        self.transform = check_rigid(self.transform)


@dataclass(eq=False)
class JointSet:
    parts: tuple[str, str]
    joints: list[Joint]
    holes: tuple[bool, bool] = (False, False)
    name: str = ""
    equivalents: list[set[tuple[int, int]]] = field(default_factory=list)
    siblings: tuple[set[int], set[int]] = field(default_factory=lambda: (set(), set()))

    @property
    def has_hole(self) -> bool:
        return bool(self.holes[0] or self.holes[1])

    @property
    def has_siblings(self) -> bool:
        return bool(self.siblings[0] or self.siblings[1])

    def label_cells(self) -> set[tuple[int, int]]:
        return {(j.u, j.v) for j in self.joints}

    def equivalent_cells(self) -> set[tuple[int, int]]:
        out = self.label_cells()
        for eq in self.equivalents:
            out |= eq
        return out

    def label_matrix(self, n: int, m: int) -> np.ndarray:
        labels = np.zeros((n, m))
        for j in self.joints:
            labels[j.u, j.v] = 1.0
        return labels


def joint_set_from_dict(doc: dict) -> JointSet:
    if not isinstance(doc, dict):
        raise SchemaViolation("joint set document must be a JSON object")
    for key in ("parts", "joints"):
        if key not in doc:
            raise SchemaViolation(f"joint set is missing '{key}'")
    parts = doc["parts"]
    if not isinstance(parts, list) or len(parts) != 2:
        raise SchemaViolation("'parts' must list two part ids")
    if not doc["joints"]:
        raise SchemaViolation("a joint set needs at least one joint")
    joints = []
    for raw in doc["joints"]:
        try:
            joints.append(
                Joint(
                    u=int(raw["u"]),
                    v=int(raw["v"]),
                    transform=np.asarray(raw["transform"], dtype=np.float64),
                    offset=float(raw.get("offset", 0.0)),
                    rotation=float(raw.get("rotation", 0.0)),
                    flip=bool(raw.get("flip", False)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaViolation(f"bad joint {raw!r}: {exc}") from None
    holes = doc.get("holes", [False, False])
    return JointSet(
        parts=(str(parts[0]), str(parts[1])),
        joints=joints,
        holes=(bool(holes[0]), bool(holes[1])),
        name=str(doc.get("name", "")),
    )


def parse_joint_set(json_document: str) -> JointSet:
    try:
        doc = json.loads(json_document)
    except (json.JSONDecodeError, TypeError) as exc:
        raise MalformedDocument(str(exc)) from None
    return joint_set_from_dict(doc)


def joint_set_to_dict(js: JointSet) -> dict:
    doc = {
        "parts": list(js.parts),
        "joints": [
            {
                "u": j.u,
                "v": j.v,
                "transform": [float(x) for x in j.transform.reshape(-1)],
                "offset": j.offset,
                "rotation": j.rotation,
                "flip": j.flip,
            }
            for j in js.joints
        ],
        "holes": [bool(js.holes[0]), bool(js.holes[1])],
    }
    if js.name:
        doc["name"] = js.name
    return doc


def serialize_joint_set(js: JointSet) -> str:
    return json.dumps(joint_set_to_dict(js))


def label_joint_set(js: JointSet, g1: PartGraph, g2: PartGraph) -> JointSet:
    """Validate indices against the graphs and fill equivalents and siblings."""
    for j in js.joints:
        if not (0 <= j.u < g1.n and 0 <= j.v < g2.n):
            raise SchemaViolation(f"joint ({j.u}, {j.v}) out of range for {g1.n}x{g2.n}")
    equivalents = []
    for j in js.joints:
        if g1.entities[j.u].is_nurbs or g2.entities[j.v].is_nurbs:
            equivalents.append({(j.u, j.v)})
            continue
        eu = expand_equivalents(g1, j.u)
        ev = expand_equivalents(g2, j.v)
        equivalents.append({(a, b) for a in eu for b in ev})
    labeled1 = {a for eq in equivalents for a, _ in eq}
    labeled2 = {b for eq in equivalents for _, b in eq}
    js.equivalents = equivalents
    js.siblings = (find_siblings(g1, labeled1), find_siblings(g2, labeled2))
    return js
