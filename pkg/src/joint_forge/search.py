"""Joint pose search over the top-k axis predictions.

Each candidate (u, v) fixes a pair of axes. Part 1 is placed on part 2's axis
and Nelder-Mead tunes the offset along it and the rotation about it, once with
and once without a flip. The configuration with the lowest overlap/contact
cost wins.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .brep import AxisSpec, PartGraph
from .errors import NoValidPrediction
from .geometry.cost import DEFAULT_SAMPLES, CostModel, CostTerms
from .geometry.mesh import TriMesh
from .geometry.transforms import PoseParams, RigidTransform, rotation_about, transform_from_axes

SYMMETRY_ANGLES = (0.0, np.pi / 2, np.pi, 3 * np.pi / 2)


@dataclass
class SearchConfig:
    k: int = 50
    samples: int = DEFAULT_SAMPLES
    max_iter: int = 200
    tol: float = 1e-4
    reflect: float = 1.0
    expand: float = 2.0
    contract: float = 0.5
    shrink: float = 0.5
    symmetry_tol: float = 1e-3
    offset_step_frac: float = 0.05
    rotation_step: float = np.pi / 8
    offset_bound_frac: float = 1.5
    penalty: float = 1e3
    contact_tol: Optional[float] = None

    def validate(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not (self.reflect > 0 and self.expand > max(1.0, self.reflect) and 0 < self.contract < 1 and 0 < self.shrink < 1):
            raise ValueError("Nelder-Mead coefficients out of range")


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    iterations: int
    evaluations: int
    converged: bool


def nelder_mead(
    f: Callable[[np.ndarray], float],
    x0,
    steps=None,
    config: Optional[SearchConfig] = None,
) -> OptimResult:
    """Minimize ``f`` from ``x0``; the initial simplex offsets each coordinate by ``steps``.

    Stops once both the spread of function values and the simplex extent fall
    to ``config.tol``, or after ``config.max_iter`` iterations, and returns the
    best vertex seen.
    """
    cfg = config or SearchConfig()
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    dim = x0.size
    if steps is None:
        steps = np.where(x0 != 0, 0.05 * np.abs(x0), 0.00025)
    steps = np.broadcast_to(np.asarray(steps, dtype=np.float64), (dim,))
    evals = 0

    def call(x):
        nonlocal evals
        evals += 1
        return float(f(x))

    simplex = np.vstack([x0] + [x0 + steps[i] * np.eye(dim)[i] for i in range(dim)])
    values = np.array([call(x) for x in simplex])
    it = 0
    converged = False
    while it < cfg.max_iter:
        order = np.argsort(values, kind="stable")
        simplex, values = simplex[order], values[order]
        if (
            np.max(np.abs(values[1:] - values[0])) <= cfg.tol
            and np.max(np.abs(simplex[1:] - simplex[0])) <= cfg.tol
        ):
            converged = True
            break
        it += 1
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + cfg.reflect * (centroid - worst)
        fr = call(xr)
        if fr < values[0]:
            xe = centroid + cfg.expand * (xr - centroid)
            fe = call(xe)
            if fe < fr:
                simplex[-1], values[-1] = xe, fe
            else:
                simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[-2]:
            simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[-1]:
            xc = centroid + cfg.contract * (xr - centroid)
            fc = call(xc)
            if fc <= fr:
                simplex[-1], values[-1] = xc, fc
                continue
        else:
            xc = centroid + cfg.contract * (worst - centroid)
            fc = call(xc)
            if fc < values[-1]:
                simplex[-1], values[-1] = xc, fc
                continue
        for i in range(1, dim + 1):
            simplex[i] = simplex[0] + cfg.shrink * (simplex[i] - simplex[0])
            values[i] = call(simplex[i])
    best = int(np.argmin(values))
    return OptimResult(simplex[best].copy(), float(values[best]), it, evals, converged)


@dataclass
class RunLog:
    rank: int
    u: int
    v: int
    flip: bool
    symmetric: bool
    offset: float
    rotation: float
    cost: float
    iterations: int
    evaluations: int


@dataclass
class SearchResult:
    pose: PoseParams
    transform: RigidTransform
    cost: float
    terms: CostTerms
    u: int
    v: int
    runs: list[RunLog] = field(default_factory=list)
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "rank": self.pose.rank,
            "u": self.u,
            "v": self.v,
            "offset": self.pose.offset,
            "rotation": self.pose.rotation,
            "flip": self.pose.flip,
            "transform": self.transform.to_list(),
            "cost": self.cost,
            "overlap": self.terms.overlap,
            "contact": self.terms.contact,
            "seconds": self.seconds,
            "runs": [asdict(r) for r in self.runs],
        }


def run_seed(seed: int, rank: int, flip: bool) -> np.random.SeedSequence:
    """Independent sampler seed for one (prediction, flip) run."""
    return np.random.SeedSequence([int(seed), int(rank), int(flip)])


def _symmetrize(points: np.ndarray, axis: AxisSpec) -> np.ndarray:
    """Replicate points under quarter turns about ``axis``."""
    rel = points - axis.origin
    copies = [rel @ rotation_about(axis.direction, a).T for a in SYMMETRY_ANGLES]
    return np.concatenate(copies) + axis.origin


class _RunCost:
    """Cost model for one candidate axis pair.

    The moving part's samples are made invariant under quarter turns about
    its candidate axis. A part with that symmetry then scores identically
    at all four probe rotations, free of Monte-Carlo noise.
    """

    def __init__(self, mesh1, fixed, axis1: AxisSpec, config: SearchConfig, seed):
        quarter = max(1, config.samples // len(SYMMETRY_ANGLES))
        self.model = CostModel(mesh1, fixed, quarter, seed, config.contact_tol)
        self.model.surface_points = _symmetrize(self.model.surface_points, axis1)
        self.model.volume_points = _symmetrize(self.model.volume_points, axis1)
        self.model.samples = len(self.model.surface_points)


def search_pose(
    g1: PartGraph,
    g2: PartGraph,
    mesh1: TriMesh,
    mesh2: TriMesh,
    predictions: Sequence[tuple],
    config: Optional[SearchConfig] = None,
    seed: int = 0,
    others: Sequence[tuple[TriMesh, RigidTransform]] = (),
) -> SearchResult:
    """Best pose of part 1 against part 2 over ``predictions`` (u, v[, score]).

    ``others`` adds already-placed parts, given in part 2's frame, to the
    fixed side of the cost.
    """
    cfg = config or SearchConfig()
    cfg.validate()
    start = time.perf_counter()
    diag = mesh1.diagonal + mesh2.diagonal
    bound = cfg.offset_bound_frac * diag
    fixed = [(mesh2, RigidTransform.identity())] + list(others)
    best: Optional[tuple] = None
    runs: list[RunLog] = []
    for rank, pred in enumerate(list(predictions)[: cfg.k]):
        u, v = int(pred[0]), int(pred[1])
        axis1, axis2 = g1.axes[u], g2.axes[v]
        if axis1 is None or axis2 is None:
            continue
        for flip in (False, True):
            run = _RunCost(mesh1, fixed, axis1, cfg, run_seed(seed, rank, flip))

            def pose_of(offset, rotation, flip=flip, rank=rank):
                return PoseParams(rank=rank, offset=offset, rotation=rotation, flip=flip)

            def cost_at(offset, rotation, pose_of=pose_of, run=run):
                if not abs(offset) <= bound:
                    return cfg.penalty
                return run.model(transform_from_axes(axis1, axis2, pose_of(offset, rotation)))

            probes = [cost_at(0.0, a) for a in SYMMETRY_ANGLES]
            symmetric = max(probes) - min(probes) < cfg.symmetry_tol
            if symmetric:
                res = nelder_mead(lambda x: cost_at(x[0], 0.0), [0.0], [cfg.offset_step_frac * diag], cfg)
                offset, rotation = float(res.x[0]), 0.0
            else:
                res = nelder_mead(
                    lambda x: cost_at(x[0], x[1]), [0.0, 0.0], [cfg.offset_step_frac * diag, cfg.rotation_step], cfg
                )
                offset, rotation = float(res.x[0]), float(res.x[1])
            pose = pose_of(offset, rotation)
            runs.append(
                RunLog(rank, u, v, flip, symmetric, pose.offset, pose.rotation, res.fun, res.iterations, res.evaluations)
            )
            if best is None or res.fun < best[0]:
                best = (res.fun, pose, run, u, v, axis1, axis2)
    if best is None:
        raise NoValidPrediction("no prediction has joint axes on both parts")
    cost, pose, run, u, v, axis1, axis2 = best
    transform = transform_from_axes(axis1, axis2, pose)
    terms = run.model.terms(transform)
    return SearchResult(pose, transform, cost, terms, u, v, runs, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# sequential multi-part assembly


def assemble_sequence(
    parts: Sequence[tuple[PartGraph, TriMesh]],
    sequence: Sequence[tuple[int, int]],
    scorer: Callable[[PartGraph, PartGraph], np.ndarray],
    config: Optional[SearchConfig] = None,
    seed: int = 0,
) -> list[RigidTransform]:
    """Place parts one at a time, each against the part it joins.

    ``sequence`` lists (new, anchor) index pairs; the first anchor sits at the
    identity. ``scorer`` returns an n x m score matrix for (new, anchor), with
    -inf on cells that must not be predicted. The pose cost of each new part
    counts overlap and contact against every part placed so far. Returns the
    world placement of each part touched by the sequence, in sequence order
    starting with the first anchor.
    """
    from .network import top_k

    cfg = config or SearchConfig()
    if not sequence:
        return []
    placements: dict[int, RigidTransform] = {sequence[0][1]: RigidTransform.identity()}
    order = [sequence[0][1]]
    for step, (new, anchor) in enumerate(sequence):
        if anchor not in placements:
            raise ValueError(f"part {anchor} is not placed before part {new} joins it")
        g_new, m_new = parts[new]
        g_anchor, m_anchor = parts[anchor]
        to_anchor = placements[anchor].inverse()
        others = [(parts[i][1], to_anchor @ placements[i]) for i in order if i != anchor]
        scores = np.asarray(scorer(g_new, g_anchor), dtype=np.float64)
        preds = top_k(scores, cfg.k, np.isfinite(scores))
        result = search_pose(g_new, g_anchor, m_new, m_anchor, preds, cfg, seed + step, others)
        placements[new] = placements[anchor] @ result.transform
        order.append(new)
    return [placements[i] for i in order]
