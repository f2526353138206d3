"""Acceptance criteria, one test each, with a PASS/FAIL line per criterion.

Lines are printed as each criterion finishes and collected again in the
terminal summary under "acceptance criteria".
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import box_mesh, synthetic_samples
from joint_forge import autodiff as ad
from joint_forge.brep import AxisSpec
from joint_forge.evaluation import (
    axes_collinear,
    axis_accuracy,
    collinear_hit,
    pair_scale,
    pose_chamfer,
    random_expectation,
)
from joint_forge.geometry import RigidTransform
from joint_forge.geometry.cost import joint_cost, overlap_and_contact
from joint_forge.geometry.sdf import brute_force_signed_distance, signed_distance
from joint_forge.gradcheck import GRADCHECK_TOL, gradcheck
from joint_forge.heuristic import fit_prior, heuristic_scores, random_scores
from joint_forge.network import loss_ce, loss_sym, top_k
from joint_forge.search import SearchConfig, assemble_sequence, nelder_mead, search_pose
from joint_forge.synthetic import SyntheticConfig, gen_synthetic, make_stack
from joint_forge.train import TrainConfig, predict_scores, train
from joint_forge.dataset import consolidate, flatten, truncate
from test_dataset import corpus, fingerprint
from test_evaluation import two_joint_sample

OVERFIT_SAMPLES = 50
OVERFIT_EPOCHS = 30
POSE_SEARCH_K = 5
RANDOM_SEEDS = 100


@contextmanager
def criterion(request, name):
    """Record PASS or FAIL for ``name``; the body fills ``detail`` before asserting."""
    record = {"detail": ""}
    lines = request.config.__dict__.setdefault("acceptance_lines", [])
    try:
        yield record
    except BaseException as exc:
        line = f"FAIL {name}: {record['detail']} ({type(exc).__name__}: {exc})".replace("\n", " ")
        lines.append(line)
        print(line)
        raise
    line = f"PASS {name}: {record['detail']}"
    lines.append(line)
    print(line)


def uniform_single_positive(n, m):
    labels = np.zeros((n, m))
    labels[n // 2, m // 3] = 1.0
    return ad.Tensor(np.full((n, m), 0.7)), labels


@pytest.fixture(scope="session")
def overfit():
    """Peg/plate samples, a model trained on the first half, and the held-out half."""
    samples = synthetic_samples(2 * OVERFIT_SAMPLES, seed=0, peg_plate_fraction=1.0, sibling_prob=0.0)
    train_set, held_out = samples[:OVERFIT_SAMPLES], samples[OVERFIT_SAMPLES:]
    result = train(train_set, [], TrainConfig(epochs=OVERFIT_EPOCHS))
    return result, train_set, held_out


def model_accuracy(params, samples):
    return axis_accuracy([predict_scores(params, s.part1, s.part2) for s in samples], samples).all


class TestAcceptance:
    def test_gradient_correctness(self, request):
        with criterion(request, "gradient correctness") as c:
            rep = gradcheck(seed=0, networks=20, width=8, max_vertices=6)
            c["detail"] = f"max rel error {rep.max_rel_error:.2e} over {rep.checked} coords in {rep.seconds:.1f} s"
            assert rep.max_rel_error < GRADCHECK_TOL == 1e-4
            assert rep.seconds < 30.0

    def test_loss_analytics(self, request):
        with criterion(request, "loss analytics") as c:
            errors = []
            for n, m in [(4, 5), (1, 7), (9, 3), (12, 12)]:
                logits, labels = uniform_single_positive(n, m)
                errors.append(abs(loss_ce(logits, labels).item() - np.log(n * m)))
                errors.append(abs(loss_sym(logits, labels).item() - (np.log(n) + np.log(m))))
            c["detail"] = f"max deviation {max(errors):.1e}"
            assert max(errors) <= 1e-9

    def test_synthetic_overfit(self, request, overfit):
        with criterion(request, "synthetic overfit") as c:
            result, train_set, held_out = overfit
            train_acc = model_accuracy(result.best, train_set)
            held_acc = model_accuracy(result.best, held_out)
            c["detail"] = (f"train top-1 {train_acc:.2f}, held-out top-1 {held_acc:.2f} after "
                           f"{len(result.history)} epochs in {result.seconds:.0f} s")
            assert len(result.history) <= 300
            assert train_acc >= 0.95 and held_acc >= 0.80
            assert result.seconds < 600

    def test_baseline_ordering(self, request, overfit):
        with criterion(request, "baseline ordering") as c:
            result, train_set, held_out = overfit
            ours = model_accuracy(result.best, held_out)
            prior = fit_prior(train_set)
            heuristic = axis_accuracy([heuristic_scores(s.part1, s.part2, prior) for s in held_out], held_out).all
            random_runs = [
                axis_accuracy([random_scores(s.part1, s.part2, np.random.SeedSequence([seed, i]))
                               for i, s in enumerate(held_out)], held_out).all
                for seed in range(RANDOM_SEEDS)
            ]
            rand = float(np.mean(random_runs))
            expected = random_expectation(held_out)
            c["detail"] = (f"ours {ours:.3f} >= heuristic {heuristic:.3f} >= random {rand:.3f}; "
                           f"random expectation {expected:.3f}")
            assert ours >= heuristic >= rand
            assert abs(rand - expected) <= 0.03

    def test_geometry_oracles(self, request):
        with criterion(request, "geometry oracles") as c:
            cube = box_mesh()
            half, _ = overlap_and_contact(cube, cube.transformed(RigidTransform(np.eye(3), [0.5, 0, 0])),
                                          samples=10_000, seed=0)
            _, face = overlap_and_contact(cube, cube.transformed(RigidTransform(np.eye(3), [1.0, 0, 0])),
                                          samples=10_000, seed=0, contact_tol=1e-3)
            queries = np.random.default_rng(0).uniform(-1.5, 1.5, size=(1000, 3))
            gap = np.max(np.abs(np.abs(signed_distance(cube, queries))
                                - np.abs(brute_force_signed_distance(cube, queries))))
            c["detail"] = f"overlap {half:.4f}, contact {face:.4f}, sdf magnitude gap {gap:.1e}"
            assert abs(half - 0.5) <= 0.02
            assert abs(face - 1 / 6) <= 0.01
            assert gap == 0.0

    def test_lambda_rule(self, request):
        with criterion(request, "lambda rule") as c:
            low, high = joint_cost(0.05, 0.3), joint_cost(0.5, 0.3)
            c["detail"] = f"joint_cost(0.05, 0.3) = {low!r}, joint_cost(0.5, 0.3) = {high!r}"
            assert low == -2.95
            assert high == 0.5

    def test_pose_search(self, request, overfit):
        with criterion(request, "pose search") as c:
            result, _, held_out = overfit
            cfg = SearchConfig(k=POSE_SEARCH_K, samples=4096)
            hits, seconds = [], []
            for s in held_out:
                start = time.perf_counter()
                scores = predict_scores(result.best, s.part1, s.part2)
                res = search_pose(s.part1, s.part2, s.mesh1, s.mesh2, top_k(scores, cfg.k, np.isfinite(scores)), cfg)
                seconds.append(time.perf_counter() - start)
                collinear = False
                for j in s.joint_set.joints:
                    gt = RigidTransform.from_matrix(j.transform)
                    scale = pair_scale(s.part1.bbox, s.part2.bbox, gt)
                    axis = s.part1.axes[j.u]
                    collinear |= collinear_hit([axis.transformed(res.transform)], [axis.transformed(gt)], scale)
                hits.append(collinear and res.terms.overlap < 0.1)
            rate, mean_s = float(np.mean(hits)), float(np.mean(seconds))
            c["detail"] = f"{rate:.2f} collinear with overlap < 0.1 over {len(hits)} pairs, mean {mean_s:.2f} s"
            assert len(hits) == OVERFIT_SAMPLES
            assert rate >= 0.90
            assert mean_s <= 10.0

    def test_nelder_mead_rosenbrock(self, request):
        with criterion(request, "Nelder-Mead benchmark") as c:
            rosen = lambda x: (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2
            res = nelder_mead(rosen, [-1.2, 1.0], None, SearchConfig(tol=1e-10, max_iter=200))
            c["detail"] = f"f = {res.fun:.2e} after {res.iterations} iterations"
            assert res.fun < 1e-6 and res.iterations <= 200

    def test_collinearity_metric(self, request):
        with criterion(request, "collinearity metric") as c:
            z = AxisSpec([0.0, 0.0, 0.0], [0.0, 0.0, 1.0])
            cases = {
                "identical": AxisSpec([0.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
                "flipped": AxisSpec([0.0, 0.0, 2.0], [0.0, 0.0, -1.0]),
                "offset": AxisSpec([0.2, 0.0, 0.0], [0.0, 0.0, 1.0]),
            }
            got = {name: axes_collinear(axis, z) for name, axis in cases.items()}
            c["detail"] = ", ".join(f"{k} {'hit' if v else 'miss'}" for k, v in got.items())
            assert got == {"identical": True, "flipped": True, "offset": False}

    def test_consolidation(self, request):
        with criterion(request, "consolidation") as c:
            records = corpus(200)
            first = consolidate(records)
            again = consolidate(flatten(*first))
            shuffled = consolidate([records[i] for i in np.random.default_rng(7).permutation(len(records))])
            c["detail"] = (f"{len(records)} joints -> {len(first[0])} joint sets; "
                           f"truncate 3.14159 -> {truncate(3.14159, 1)}, 3.14999 -> {truncate(3.14999, 1)}")
            assert fingerprint(first) == fingerprint(again) == fingerprint(shuffled)
            assert truncate(3.14159, 1) == truncate(3.14999, 1) == "3.1"

    def test_chamfer_pose_eval(self, request):
        with criterion(request, "chamfer pose eval") as c:
            s = two_joint_sample()
            first, second = (RigidTransform.from_matrix(j.transform) for j in s.joint_set.joints)
            at_gt = pose_chamfer(s.mesh1, s.mesh2, first, [first])
            single = pose_chamfer(s.mesh1, s.mesh2, second, [first])
            both = pose_chamfer(s.mesh1, s.mesh2, second, [first, second])
            c["detail"] = f"CD at GT {at_gt}, other hole vs one GT {single:.4f}, vs both GTs {both}"
            assert at_gt == 0.0 and both == 0.0
            assert single > 0.0

    def test_multi_part_stack(self, request):
        with criterion(request, "multi-part demo") as c:
            stack = make_stack(0)
            prior = fit_prior(s.to_joint_sample() for s in gen_synthetic(SyntheticConfig(n=50, seed=1)))
            parts = [(p.graph, p.mesh) for p in stack.parts]
            cfg = SearchConfig(k=5, samples=4096)
            placements = assemble_sequence(parts, stack.sequence, lambda a, b: heuristic_scores(a, b, prior), cfg)
            order = [stack.sequence[0][1]] + [new for new, _ in stack.sequence]
            world = dict(zip(order, placements))
            collinear = []
            for (new, anchor), js in zip(stack.sequence, stack.joint_sets):
                j = js.joints[0]
                a = stack.parts[new].graph.axes[j.u].transformed(world[new])
                b = stack.parts[anchor].graph.axes[j.v].transformed(world[anchor])
                collinear.append(axes_collinear(a, b))
            overlaps = []
            for i, a in enumerate(order):
                for b in order[i + 1:]:
                    ov, _ = overlap_and_contact(stack.parts[a].mesh.transformed(world[a]),
                                                stack.parts[b].mesh.transformed(world[b]), 4096, 0)
                    overlaps.append(ov)
            c["detail"] = f"collinear {collinear}, max pairwise overlap {max(overlaps):.4f}"
            assert all(collinear)
            assert max(overlaps) < 0.1
