"""Dataset loading, part hashing, joint consolidation and split assignment."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from decimal import ROUND_DOWN, Decimal
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .brep import Joint, JointSet, PartGraph, joint_set_from_dict, label_joint_set, part_graph_from_dict
from .errors import EmptyDataset, InvalidConfig, MissingPhysicalProps
from .fileio import read_json
from .geometry.mesh import TriMesh, parse_obj

SPLITS = ("train", "val", "test", "test-original")
DEFAULT_RATIOS = (0.7, 0.1, 0.1, 0.1)
TRANSFORM_DEDUP_TOL = 1e-6
JOINT_SET_PREFIX = "joint_set_"
SPLIT_FILE = "splits.json"


# ---------------------------------------------------------------------------
# loading


@dataclass(eq=False)
class JointSample:
    """A labeled joint set with both part graphs; meshes load on first use."""

    joint_set: JointSet
    part1: PartGraph
    part2: PartGraph
    root: Optional[Path] = None

    @property
    def name(self) -> str:
        return self.joint_set.name

    @property
    def has_hole(self) -> bool:
        return self.joint_set.has_hole

    def _mesh(self, part: PartGraph) -> TriMesh:
        if self.root is None or not part.mesh:
            raise FileNotFoundError(f"part {part.part_id} has no mesh file")
        return parse_obj((self.root / part.mesh).read_text())

    @cached_property
    def mesh1(self) -> TriMesh:
        return self._mesh(self.part1)

    @cached_property
    def mesh2(self) -> TriMesh:
        return self._mesh(self.part2)

    @classmethod
    def in_memory(cls, joint_set: JointSet, part1: PartGraph, part2: PartGraph,
                  mesh1: TriMesh, mesh2: TriMesh) -> "JointSample":
        """Sample whose meshes are already loaded."""
        sample = cls(joint_set, part1, part2)
        sample.__dict__["mesh1"], sample.__dict__["mesh2"] = mesh1, mesh2
        return sample


def load_dataset(root, names: Optional[Iterable[str]] = None) -> list[JointSample]:
    """Read every ``joint_set_*.json`` under ``root``, sorted by name."""
    root = Path(root)
    parts: dict[str, PartGraph] = {}

    def part(part_id: str) -> PartGraph:
        if part_id not in parts:
            parts[part_id] = part_graph_from_dict(read_json(root / f"{part_id}.json"))
        return parts[part_id]

    wanted = None if names is None else set(names)
    out = []
    for path in sorted(root.glob(f"{JOINT_SET_PREFIX}*.json")):
        name = path.stem[len(JOINT_SET_PREFIX):]
        if wanted is not None and name not in wanted:
            continue
        js = joint_set_from_dict(read_json(path))
        js.name = name
        g1, g2 = part(js.parts[0]), part(js.parts[1])
        label_joint_set(js, g1, g2)
        out.append(JointSample(js, g1, g2, root))
    if not out:
        raise EmptyDataset(f"no joint sets found in {root}")
    return out


def load_split(root, split: Optional[str], split_file=None) -> list[JointSample]:
    """Samples of one split as listed in ``split_file`` (default ``root/splits.json``).

    ``None`` or ``"all"`` loads every joint set under ``root``.
    """
    root = Path(root)
    if split is None or split == "all":
        return load_dataset(root)
    split_path = Path(split_file) if split_file else root / SPLIT_FILE
    if not split_path.exists():
        raise EmptyDataset(f"{root} has no {SPLIT_FILE}; run split first or use --split all")
    splits = read_json(split_path)
    if split not in splits:
        raise InvalidConfig(f"unknown split {split!r}")
    if not splits[split]:
        raise EmptyDataset(f"split {split!r} is empty")
    return load_dataset(root, splits[split])


# ---------------------------------------------------------------------------
# hashing


def truncate(value: float, places: int) -> str:
    """Decimal string cut (not rounded) to ``places`` digits: 3.14999 -> '3.1'."""
    quantum = Decimal(1).scaleb(-places)
    out = Decimal(repr(float(value))).quantize(quantum, rounding=ROUND_DOWN)
    if out == 0:
        out = abs(out)
    return str(out)


def part_hash(part: PartGraph) -> str:
    """Stable 64-bit hex digest of a part's truncated physical properties.

    Tokens, in order: volume (1 dp), principal moments of inertia (3 dp), then
    per entity its type key and its area or length (1 dp).
    """
    if part.volume is None or part.inertia is None:
        raise MissingPhysicalProps(f"part {part.part_id} lacks volume or inertia")
    tokens = [truncate(part.volume, 1)] + [truncate(x, 3) for x in part.inertia]
    for e in part.entities:
        tokens += [e.type_key, truncate(e.size, 1)]
    return hashlib.blake2b("|".join(tokens).encode(), digest_size=8).hexdigest()


# ---------------------------------------------------------------------------
# consolidation


@dataclass
class JointRecord:
    part1: PartGraph
    part2: PartGraph
    joint: Joint
    holes: tuple[bool, bool] = (False, False)


def _inverse(matrix: np.ndarray) -> np.ndarray:
    rot, trans = matrix[:3, :3], matrix[:3, 3]
    out = np.eye(4)
    out[:3, :3] = rot.T
    out[:3, 3] = -rot.T @ trans
    return out


def _swapped(joint: Joint) -> Joint:
    return Joint(joint.v, joint.u, _inverse(joint.transform), joint.offset, joint.rotation, joint.flip)


def _joint_key(joint: Joint) -> tuple:
    return (joint.u, joint.v, tuple(joint.transform.reshape(-1).tolist()), joint.offset, joint.rotation, joint.flip)


def consolidate(records: Sequence[JointRecord]) -> tuple[list[JointSet], dict[str, PartGraph]]:
    """Group joints by unordered part-hash pair and drop duplicate joints.

    Within a pair the part with the smaller hash comes first; joints recorded
    the other way round are mirrored (indices swapped, transform inverted).
    Each hash is represented by its lexicographically smallest part id. The
    result is independent of record order and a fixed point of
    ``consolidate(flatten(...))``.
    """
    reps: dict[str, PartGraph] = {}
    groups: dict[tuple[str, str], list[Joint]] = {}
    holes: dict[tuple[str, str], list[bool]] = {}
    for rec in records:
        h1, h2 = part_hash(rec.part1), part_hash(rec.part2)
        for h, p in ((h1, rec.part1), (h2, rec.part2)):
            if h not in reps or p.part_id < reps[h].part_id:
                reps[h] = p
        joint, flags = rec.joint, list(rec.holes)
        if h1 > h2:
            h1, h2 = h2, h1
            joint, flags = _swapped(joint), flags[::-1]
        elif h1 == h2:
            joint = min(joint, _swapped(joint), key=_joint_key)
            flags = [any(flags)] * 2
        key = (h1, h2)
        groups.setdefault(key, []).append(joint)
        acc = holes.setdefault(key, [False, False])
        holes[key] = [acc[0] or flags[0], acc[1] or flags[1]]
    out = []
    for key in sorted(groups):
        kept: list[Joint] = []
        for joint in sorted(groups[key], key=_joint_key):
            if not any(
                k.u == joint.u and k.v == joint.v and np.max(np.abs(k.transform - joint.transform)) <= TRANSFORM_DEDUP_TOL
                for k in kept
            ):
                kept.append(joint)
        h1, h2 = key
        js = JointSet(
            parts=(reps[h1].part_id, reps[h2].part_id),
            joints=kept,
            holes=(holes[key][0], holes[key][1]),
            name=f"{h1}_{h2}",
        )
        out.append(js)
    parts = {p.part_id: p for p in reps.values()}
    return out, parts


def flatten(joint_sets: Sequence[JointSet], parts: dict[str, PartGraph]) -> list[JointRecord]:
    """Inverse of grouping: one record per joint."""
    return [
        JointRecord(parts[js.parts[0]], parts[js.parts[1]], j, js.holes) for js in joint_sets for j in js.joints
    ]


# ---------------------------------------------------------------------------
# splits


def split_counts(total: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``total`` items."""
    ratios = [float(r) for r in ratios]
    if len(ratios) != len(SPLITS) or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidConfig(f"ratios must be {len(SPLITS)} non-negative numbers summing to 1")
    exact = [r * total for r in ratios]
    counts = [int(np.floor(x + 1e-9)) for x in exact]
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: total - sum(counts)]:
        counts[i] += 1
    return counts


def make_splits(
    joint_sets: Sequence[JointSet],
    ratios: Sequence[float] = DEFAULT_RATIOS,
    seed: int = 0,
    exclude_siblings: bool = True,
) -> dict[str, list[int]]:
    """Shuffled split assignment, as index lists per split name.

    With ``exclude_siblings`` set, sets that have sibling entities never reach
    val or test; they fill test-original and train instead.
    """
    counts = dict(zip(SPLITS, split_counts(len(joint_sets), ratios)))
    order = [int(i) for i in np.random.default_rng(seed).permutation(len(joint_sets))]
    out: dict[str, list[int]] = {s: [] for s in SPLITS}
    if exclude_siblings:
        clean = [i for i in order if not joint_sets[i].has_siblings]
        for split in ("val", "test"):
            out[split], clean = clean[: counts[split]], clean[counts[split]:]
        taken = set(out["val"]) | set(out["test"])
        rest = [i for i in order if i not in taken]
    else:
        rest = order
        for split in ("val", "test"):
            out[split], rest = rest[: counts[split]], rest[counts[split]:]
    out["test-original"], out["train"] = rest[: counts["test-original"]], rest[counts["test-original"]:]
    return out


def write_splits(root, joint_sets: Sequence[JointSet], splits: dict[str, list[int]]) -> Path:
    from .fileio import atomic_write_text

    doc = {name: [joint_sets[i].name for i in idx] for name, idx in splits.items()}
    return atomic_write_text(Path(root) / SPLIT_FILE, json.dumps(doc, indent=2, sort_keys=True))
