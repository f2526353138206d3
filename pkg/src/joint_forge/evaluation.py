"""Joint-axis accuracy, collinearity hits and chamfer pose evaluation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .brep import AxisSpec
from .errors import DegenerateDirection, EmptyDataset
from .geometry.chamfer import chamfer
from .geometry.mesh import sample_surface
from .geometry.transforms import RigidTransform
from .network import top_k

ANGLE_TOL_DEG = 10.0
DISTANCE_TOL = 0.1
POSE_EVAL_POINTS = 4096
REPORT_DIGITS = 6


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not norm > 1e-12:
        raise DegenerateDirection("axis direction has zero length")
    return v / norm


def line_distance(a: AxisSpec, b: AxisSpec) -> float:
    """Shortest distance between two infinite lines."""
    da, db = _unit(a.direction), _unit(b.direction)
    diff = np.asarray(b.origin, dtype=np.float64) - np.asarray(a.origin, dtype=np.float64)
    cross = np.cross(da, db)
    norm = np.linalg.norm(cross)
    if norm < 1e-9:
        return float(np.linalg.norm(diff - (diff @ da) * da))
    return float(abs(diff @ cross) / norm)


def axis_angle_deg(a: AxisSpec, b: AxisSpec) -> float:
    """Angle between two axes ignoring their sense, in degrees."""
    da, db = _unit(a.direction), _unit(b.direction)
    return float(np.degrees(np.arctan2(np.linalg.norm(np.cross(da, db)), abs(da @ db))))


def axes_collinear(a: AxisSpec, b: AxisSpec, scale: float = 1.0,
                   angle_tol: float = ANGLE_TOL_DEG, dist_tol: float = DISTANCE_TOL) -> bool:
    """Whether two axes are within the angle and (scaled) line-distance thresholds."""
    return axis_angle_deg(a, b) <= angle_tol and line_distance(a, b) * scale <= dist_tol


def collinear_hit(pred: Sequence[AxisSpec], gt: Sequence[AxisSpec], scale: float = 1.0) -> bool:
    """Hit when the predicted axes are collinear with the ground truth on both parts."""
    return all(axes_collinear(p, g, scale) for p, g in zip(pred, gt))


def pair_scale(bbox1: np.ndarray, bbox2: np.ndarray, transform: RigidTransform) -> float:
    """Factor mapping the assembled pair's largest extent onto the -1..1 range."""
    lo1, hi1 = np.asarray(bbox1, dtype=np.float64)
    corners = np.array([[x, y, z] for x in (lo1[0], hi1[0]) for y in (lo1[1], hi1[1]) for z in (lo1[2], hi1[2])])
    pts = np.vstack([transform.apply(corners), np.asarray(bbox2, dtype=np.float64)])
    extent = float(np.max(pts.max(axis=0) - pts.min(axis=0)))
    return 2.0 / extent if extent > 0 else 1.0


# ---------------------------------------------------------------------------
# axis accuracy


@dataclass
class Breakdown:
    all: float
    hole: Optional[float]
    no_hole: Optional[float]
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"all": self.all, "hole": self.hole, "no_hole": self.no_hole, "counts": dict(self.counts)}


def breakdown(values: Sequence[float], has_hole: Sequence[bool]) -> Breakdown:
    values = np.asarray(values, dtype=np.float64)
    if not len(values):
        raise EmptyDataset("nothing to evaluate")
    holes = np.asarray(has_hole, dtype=bool)

    def mean(mask):
        return float(values[mask].mean()) if mask.any() else None

    return Breakdown(
        all=float(values.mean()),
        hole=mean(holes),
        no_hole=mean(~holes),
        counts={"all": int(len(values)), "hole": int(holes.sum()), "no_hole": int((~holes).sum())},
    )


def sample_hits(scores: np.ndarray, sample, k: int = 1, equivalents: bool = True, mode: str = "cells") -> bool:
    """Top-k hit for one sample.

    ``cells`` mode checks membership in the labeled cells (plus their
    equivalents when requested). ``collinear`` mode accepts any predicted cell
    whose axes are collinear with a labeled joint's axes on both parts.
    """
    js = sample.joint_set
    preds = top_k(scores, k, np.isfinite(scores))
    if mode == "cells":
        targets = js.equivalent_cells() if equivalents else js.label_cells()
        return any((u, v) in targets for u, v, _ in preds)
    if mode != "collinear":
        raise ValueError(f"unknown hit mode {mode!r}")
    g1, g2 = sample.part1, sample.part2
    for u, v, _ in preds:
        for j in js.joints:
            scale = pair_scale(g1.bbox, g2.bbox, RigidTransform.from_matrix(j.transform))
            pred_axes = (g1.axes[u], g2.axes[v])
            if None in pred_axes:
                continue
            if collinear_hit(pred_axes, (g1.axes[j.u], g2.axes[j.v]), scale):
                return True
    return False


def axis_accuracy(
    score_list: Sequence[np.ndarray],
    samples: Sequence,
    k: int = 1,
    equivalents: bool = True,
    mode: str = "cells",
) -> Breakdown:
    """Top-k accuracy overall and split by the sample's hole flag."""
    if not samples:
        raise EmptyDataset("no samples to evaluate")
    if len(score_list) != len(samples):
        raise ValueError("one score matrix per sample is required")
    hits = [float(sample_hits(s, smp, k, equivalents, mode)) for s, smp in zip(score_list, samples)]
    return breakdown(hits, [smp.has_hole for smp in samples])


def random_expectation(samples: Sequence, equivalents: bool = True) -> float:
    """Mean probability that a uniform random pick over valid cells is a hit."""
    if not samples:
        raise EmptyDataset("no samples to evaluate")
    probs = []
    for smp in samples:
        valid = ~smp.part1.nurbs_mask[:, None] & ~smp.part2.nurbs_mask[None, :]
        cells = smp.joint_set.equivalent_cells() if equivalents else smp.joint_set.label_cells()
        probs.append(sum(1 for u, v in cells if valid[u, v]) / valid.sum())
    return float(np.mean(probs))


# ---------------------------------------------------------------------------
# pose evaluation


def assembly_cloud(points1: np.ndarray, points2: np.ndarray, transform: RigidTransform) -> np.ndarray:
    return np.vstack([transform.apply(points1), points2])


def _normalizer(cloud: np.ndarray) -> tuple[np.ndarray, float]:
    lo, hi = cloud.min(axis=0), cloud.max(axis=0)
    extent = float(np.max(hi - lo))
    return (lo + hi) / 2.0, (2.0 / extent if extent > 0 else 1.0)


def pose_chamfer(
    mesh1,
    mesh2,
    predicted: RigidTransform,
    gt_transforms: Sequence[RigidTransform],
    points: int = POSE_EVAL_POINTS,
    seed: int = 0,
) -> float:
    """Minimum over ground-truth joints of the chamfer distance between assemblies.

    Both parts are sampled once; each ground-truth assembly fixes the
    normalization (centered, largest extent mapped to 2) applied to both
    clouds before comparison.
    """
    if not gt_transforms:
        raise EmptyDataset("need at least one ground-truth transform")
    s1, s2 = np.random.SeedSequence(seed).spawn(2)
    p1, _ = sample_surface(mesh1, points, s1)
    p2, _ = sample_surface(mesh2, points, s2)
    pred = assembly_cloud(p1, p2, predicted)
    best = np.inf
    for gt_t in gt_transforms:
        gt = assembly_cloud(p1, p2, gt_t)
        center, scale = _normalizer(gt)
        best = min(best, chamfer((pred - center) * scale, (gt - center) * scale))
    return float(best)


def pose_eval(predicted: Sequence[RigidTransform], samples: Sequence, points: int = POSE_EVAL_POINTS,
              seed: int = 0) -> Breakdown:
    """Mean chamfer distance overall and split by hole flag."""
    if not samples:
        raise EmptyDataset("no samples to evaluate")
    values = []
    for t, smp in zip(predicted, samples):
        gts = [RigidTransform.from_matrix(j.transform) for j in smp.joint_set.joints]
        values.append(pose_chamfer(smp.mesh1, smp.mesh2, t, gts, points, seed))
    return breakdown(values, [smp.has_hole for smp in samples])


# ---------------------------------------------------------------------------
# reporting


def report(results: dict, meta: Optional[dict] = None) -> tuple[dict, str]:
    """JSON document and text table for named breakdowns.

    ``results`` maps a metric name to a :class:`Breakdown` (or its dict).
    """
    if not results:
        raise EmptyDataset("no results to report")
    doc = {"metrics": {}, "meta": dict(meta or {})}
    lines = [f"{'metric':<28}{'all':>12}{'hole':>12}{'no_hole':>12}"]

    def fmt(x):
        return f"{x:>12.{REPORT_DIGITS}f}" if x is not None else f"{'-':>12}"

    for name, value in results.items():
        d = value.to_dict() if isinstance(value, Breakdown) else dict(value)
        for key in ("all", "hole", "no_hole"):
            if d.get(key) is not None:
                d[key] = round(float(d[key]), REPORT_DIGITS)
        doc["metrics"][name] = d
        lines.append(f"{name:<28}{fmt(d['all'])}{fmt(d.get('hole'))}{fmt(d.get('no_hole'))}")
    return doc, "\n".join(lines)


def report_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True)
