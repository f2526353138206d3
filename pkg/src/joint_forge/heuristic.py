"""Non-learned baselines scoring the same n x m cell space as the network."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .brep import PartGraph, is_round
from .errors import EmptyDataset, EmptyGraph

MATCH_REL_TOL = 0.05


def _pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


@dataclass
class PairTypePrior:
    """Frequency of entity-type pairs among training labels, order-free."""

    table: dict[tuple[str, str], float] = field(default_factory=dict)

    def __call__(self, type_a: str, type_b: str) -> float:
        return self.table.get(_pair(type_a, type_b), 0.0)

    def to_json(self) -> str:
        return json.dumps({f"{a}|{b}": p for (a, b), p in sorted(self.table.items())}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PairTypePrior":
        raw = json.loads(text)
        return cls({tuple(k.split("|", 1)): float(v) for k, v in raw.items()})


def fit_prior(samples: Iterable) -> PairTypePrior:
    """Count labeled (type_u, type_v) pairs over ``JointSample``-like objects."""
    counts: Counter = Counter()
    for s in samples:
        for j in s.joint_set.joints:
            counts[_pair(s.part1.entities[j.u].type_key, s.part2.entities[j.v].type_key)] += 1
    total = sum(counts.values())
    if not total:
        raise EmptyDataset("cannot fit a prior without training joints")
    return PairTypePrior({k: v / total for k, v in counts.items()})


def _within(a: float, b: float, rel: float) -> bool:
    scale = max(abs(a), abs(b))
    return scale > 0 and abs(a - b) <= rel * scale


def heuristic_scores(
    g1: PartGraph,
    g2: PartGraph,
    prior: PairTypePrior,
    w_sim: float = 1.0,
    w_rad: float = 1.0,
    rel_tol: float = MATCH_REL_TOL,
) -> np.ndarray:
    """Type prior plus size-similarity and radius-match bonuses per cell."""
    if g1.n == 0 or g2.n == 0:
        raise EmptyGraph("heuristic needs two non-empty graphs")
    scores = np.zeros((g1.n, g2.n))
    for u, a in enumerate(g1.entities):
        for v, b in enumerate(g2.entities):
            if a.is_nurbs or b.is_nurbs:
                scores[u, v] = -np.inf
                continue
            s = prior(a.type_key, b.type_key)
            if a.kind is b.kind and _within(a.size, b.size, rel_tol):
                s += w_sim
            if is_round(a) and is_round(b) and _within(a.radius, b.radius, rel_tol):
                s += w_rad
            scores[u, v] = s
    return scores


def random_scores(g1: PartGraph, g2: PartGraph, seed) -> np.ndarray:
    """I.i.d. uniform scores with NURBS cells masked."""
    scores = np.random.default_rng(seed).random((g1.n, g2.n))
    scores[g1.nurbs_mask, :] = -np.inf
    scores[:, g2.nurbs_mask] = -np.inf
    return scores
