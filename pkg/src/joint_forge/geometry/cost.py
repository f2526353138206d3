"""Monte-Carlo overlap and contact estimates between posed parts."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import DegenerateMesh
from .mesh import TriMesh, sample_surface, sample_volume
from .transforms import RigidTransform

DEFAULT_SAMPLES = 4096
CONTACT_TOL_FRAC = 1e-3
OVERLAP_GATE = 0.1
CONTACT_WEIGHT = -10.0


def joint_cost(overlap: float, contact: float) -> float:
    """Overlap, minus a heavy contact reward that only applies when overlap is small."""
    weight = CONTACT_WEIGHT if overlap < OVERLAP_GATE else 0.0
    return float(overlap + weight * contact)


def default_contact_tol(mesh1: TriMesh, mesh2: TriMesh) -> float:
    return CONTACT_TOL_FRAC * (mesh1.diagonal + mesh2.diagonal)


@dataclass(frozen=True)
class CostTerms:
    overlap: float
    contact: float
    # per-sample hit fractions, kept for standard-error estimates
    p_volume: float
    p_area: float
    samples: int

    @property
    def cost(self) -> float:
        return joint_cost(self.overlap, self.contact)


class CostModel:
    """Cost of placing a moving part against one or more fixed parts.

    Surface and volume samples of the moving part are drawn once in its own
    frame; each evaluation maps them through the candidate transform and then
    into every fixed part's frame for signed-distance queries. A sample counts
    as overlapping when it is inside any fixed part, and as touching when it
    lies within ``contact_tol`` of any fixed surface.
    """

    def __init__(
        self,
        moving: TriMesh,
        fixed: Sequence[tuple[TriMesh, RigidTransform]] | TriMesh,
        samples: int = DEFAULT_SAMPLES,
        seed=0,
        contact_tol: Optional[float] = None,
    ):
        if isinstance(fixed, TriMesh):
            fixed = [(fixed, RigidTransform.identity())]
        if not fixed:
            raise ValueError("need at least one fixed part")
        self.moving = moving
        self.fixed = [(mesh, placement.inverse()) for mesh, placement in fixed]
        for mesh in [moving] + [m for m, _ in fixed]:
            if not mesh.area > 0:
                raise DegenerateMesh("mesh has zero surface area")
            if not mesh.volume > 0:
                raise DegenerateMesh("mesh encloses no volume")
        self.samples = samples
        root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        surf_seed, vol_seed = root.spawn(2)
        self.surface_points, _ = sample_surface(moving, samples, surf_seed)
        self.volume_points = sample_volume(moving, samples, vol_seed)
        fixed_area = sum(m.area for m, _ in fixed)
        fixed_volume = sum(m.volume for m, _ in fixed)
        self.area_norm = moving.area / min(moving.area, fixed_area)
        self.volume_norm = moving.volume / min(moving.volume, fixed_volume)
        if contact_tol is None:
            contact_tol = CONTACT_TOL_FRAC * (moving.diagonal + max(m.diagonal for m, _ in fixed))
        self.contact_tol = float(contact_tol)

    def terms(self, transform: RigidTransform) -> CostTerms:
        touching = np.zeros(len(self.surface_points), dtype=bool)
        inside = np.zeros(len(self.volume_points), dtype=bool)
        for mesh, to_local in self.fixed:
            step = to_local @ transform
            touching |= mesh.sdf.within(step.apply(self.surface_points), self.contact_tol)
            inside |= mesh.sdf.inside(step.apply(self.volume_points))
        p_area = float(touching.mean())
        p_volume = float(inside.mean())
        return CostTerms(
            overlap=p_volume * self.volume_norm,
            contact=p_area * self.area_norm,
            p_volume=p_volume,
            p_area=p_area,
            samples=self.samples,
        )

    def __call__(self, transform: RigidTransform) -> float:
        return self.terms(transform).cost


def overlap_and_contact(
    mesh1: TriMesh,
    mesh2: TriMesh,
    samples: int = DEFAULT_SAMPLES,
    seed=0,
    contact_tol: Optional[float] = None,
) -> tuple[float, float]:
    """(C_overlap, C_contact) for two meshes already in a common frame."""
    if contact_tol is None:
        contact_tol = default_contact_tol(mesh1, mesh2)
    terms = CostModel(mesh1, mesh2, samples, seed, contact_tol).terms(RigidTransform.identity())
    return terms.overlap, terms.contact
