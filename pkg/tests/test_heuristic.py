import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import chisquare

from conftest import synthetic_samples
from joint_forge.brep import Entity, EntityKind, PartGraph, part_graph_from_dict, part_graph_to_dict
from joint_forge.errors import EmptyDataset, EmptyGraph
from joint_forge.evaluation import random_expectation
from joint_forge.heuristic import PairTypePrior, fit_prior, heuristic_scores, random_scores
from joint_forge.network import top_k


def cylinder(radius, area=10.0):
    return Entity(EntityKind.FACE, "Cylinder", area=area, axis_origin=np.zeros(3),
                  axis_dir=np.array([0.0, 0, 1]), radius=radius)


def single(entity, pid="p"):
    return PartGraph(pid, [entity], [])


def scaled(part: PartGraph, factor: float) -> PartGraph:
    doc = part_graph_to_dict(part)
    for node in doc["nodes"]:
        node["length"] *= factor
        node["area"] *= factor**2
        if node.get("radius") is not None:
            node["radius"] *= factor
        if node.get("axis_origin") is not None:
            node["axis_origin"] = [c * factor for c in node["axis_origin"]]
    doc["bbox"] = [[c * factor for c in row] for row in doc["bbox"]]
    return part_graph_from_dict(doc)


@pytest.fixture(scope="module")
def samples():
    return synthetic_samples(30, seed=2, sibling_prob=0.0)


class TestPrior:
    def test_single_pair_type(self, samples):
        pegs = [s for s in samples if s.has_hole]
        prior = fit_prior(pegs)
        assert prior("face:Cylinder", "face:Cylinder") == 1.0

    def test_two_types_equal(self, samples):
        peg = next(s for s in samples if s.has_hole)
        box = next(s for s in samples if not s.has_hole)
        prior = fit_prior([peg, box])
        assert prior("face:Cylinder", "face:Cylinder") == 0.5
        assert prior("face:Plane", "face:Plane") == 0.5

    def test_symmetrized(self):
        class Fake:
            def __init__(self, a, b):
                from joint_forge.brep import Joint, JointSet
                self.part1, self.part2 = single(a), single(b)
                self.joint_set = JointSet(("p", "p"), [Joint(0, 0, np.eye(4))])

        circle = Entity(EntityKind.EDGE, "Circle", length=1.0, axis_origin=np.zeros(3), axis_dir=np.array([0.0, 0, 1]))
        prior = fit_prior([Fake(cylinder(1.0), circle), Fake(circle, cylinder(1.0))])
        assert prior("face:Cylinder", "edge:Circle") == prior("edge:Circle", "face:Cylinder") == 1.0
        assert sum(prior.table.values()) == pytest.approx(1.0)

    def test_unseen_zero(self):
        assert PairTypePrior({("a", "b"): 1.0})("a", "c") == 0.0

    def test_json_round_trip(self, samples):
        prior = fit_prior(samples)
        assert PairTypePrior.from_json(prior.to_json()).table == prior.table

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            fit_prior([])


class TestHeuristicScores:
    def test_radius_within_five_percent(self):
        prior = PairTypePrior()
        s = heuristic_scores(single(cylinder(3.0, 1.0)), single(cylinder(3.05, 2.0)), prior)
        assert s[0, 0] == 1.0

    def test_radius_off(self):
        s = heuristic_scores(single(cylinder(3.0, 1.0)), single(cylinder(4.0, 2.0)), PairTypePrior())
        assert s[0, 0] == 0.0

    def test_peg_hole_argmax(self, samples):
        prior = fit_prior(samples)
        for s in samples:
            if not s.has_hole:
                continue
            scores = heuristic_scores(s.part1, s.part2, prior)
            # exhaustive oracle: the best cells pair round entities of the labeled radius
            best = np.argwhere(scores == scores.max())
            r = s.part1.entities[s.joint_set.joints[0].u].radius
            for u, v in best:
                assert s.part2.entities[v].radius == pytest.approx(r)
            (u, v, _), = top_k(scores, 1)
            assert (u, v) in s.joint_set.equivalent_cells()

    def test_transpose_symmetry(self, samples):
        prior = fit_prior(samples)
        for s in samples[:5]:
            np.testing.assert_array_equal(heuristic_scores(s.part1, s.part2, prior),
                                          heuristic_scores(s.part2, s.part1, prior).T)

    @given(st.floats(0.01, 100.0))
    def test_scale_consistent(self, factor):
        s = synthetic_samples(1, seed=5, peg_plate_fraction=1.0)[0]
        prior = PairTypePrior({("face:Cylinder", "face:Cylinder"): 1.0})
        base = top_k(heuristic_scores(s.part1, s.part2, prior), 1)[0][:2]
        moved = heuristic_scores(scaled(s.part1, factor), scaled(s.part2, factor), prior)
        assert top_k(moved, 1)[0][:2] == base

    def test_nurbs_masked(self):
        nurbs = Entity(EntityKind.FACE, "Nurbs")
        g = PartGraph("p", [cylinder(1.0), nurbs], [(0, 1)])
        s = heuristic_scores(g, g, PairTypePrior())
        assert np.isneginf(s[1]).all() and np.isneginf(s[:, 1]).all()
        assert np.isfinite(s[0, 0])

    def test_empty(self):
        with pytest.raises(EmptyGraph):
            heuristic_scores(PartGraph("e", [], []), single(cylinder(1.0)), PairTypePrior())


class TestRandomScores:
    def test_deterministic(self, samples):
        s = samples[0]
        np.testing.assert_array_equal(random_scores(s.part1, s.part2, 7), random_scores(s.part1, s.part2, 7))

    def test_monte_carlo_rate(self):
        # 4 x 5 grid with 2 hit cells: top-1 hit probability 2/20
        parts = [PartGraph(f"p{k}", [cylinder(1.0) for _ in range(size)], []) for k, size in ((0, 4), (1, 5))]
        hits = {(0, 1), (3, 4)}
        trials = 10_000
        rate = np.mean([top_k(random_scores(*parts, seed), 1)[0][:2] in hits for seed in range(trials)])
        assert abs(rate - 0.10) <= 0.01

    def test_expectation_formula(self, samples):
        s = samples[0]
        valid = (~s.part1.nurbs_mask[:, None] & ~s.part2.nurbs_mask[None, :]).sum()
        expected = len(s.joint_set.equivalent_cells()) / valid
        assert random_expectation([s]) == pytest.approx(expected)

    def test_argmax_uniform(self):
        parts = [PartGraph(f"p{k}", [cylinder(1.0) for _ in range(size)], []) for k, size in ((0, 3), (1, 4))]
        counts = np.zeros(12)
        for seed in range(10_000):
            u, v, _ = top_k(random_scores(*parts, seed), 1)[0]
            counts[u * 4 + v] += 1
        assert chisquare(counts).pvalue > 0.01

    def test_nurbs_masked(self):
        g = PartGraph("p", [cylinder(1.0), Entity(EntityKind.FACE, "Nurbs")], [(0, 1)])
        s = random_scores(g, g, 0)
        assert np.isneginf(s[1]).all() and np.isneginf(s[:, 1]).all()
