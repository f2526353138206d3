import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from joint_forge.geometry import RigidTransform, TriMesh
from joint_forge.synthetic import make_peg, make_plate

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def box_mesh(lo=(-0.5, -0.5, -0.5), hi=(0.5, 0.5, 0.5)) -> TriMesh:
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    # outward-facing triangles of the 8-corner box, corner index = 4x + 2y + z
    tris = np.array([
        [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
        [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
        [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
    ])
    return TriMesh(corners, tris)


@pytest.fixture
def unit_cube() -> TriMesh:
    return box_mesh()


@pytest.fixture
def peg():
    return make_peg("peg", 2.0, 6.0, 32, RigidTransform.identity())


@pytest.fixture
def two_hole_plate():
    return make_plate("plate", [2.0, 2.0], 1.0, 6.0, 32, RigidTransform.identity())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def synthetic_samples(n, seed=0, **kwargs):
    """Generated samples as loader-style joint samples with meshes in memory."""
    from joint_forge.synthetic import SyntheticConfig, gen_synthetic

    cfg = SyntheticConfig(n=n, seed=seed, **kwargs)
    return [s.to_joint_sample() for s in gen_synthetic(cfg)]


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
