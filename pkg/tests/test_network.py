import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from joint_forge import autodiff as ad
from joint_forge.brep import ConnectivityIndex
from joint_forge.errors import CheckpointError, EmptyGraph, NoPositiveLabels, ShapeMismatch
from joint_forge.gradcheck import TOY_FEATURES, gradcheck, random_graph
from joint_forge.network import (
    GraphInput,
    ModelParams,
    NetworkConfig,
    encode,
    forward,
    loss_ce,
    loss_sym,
    predict_logits,
    top_k,
)

TOY = NetworkConfig(features=TOY_FEATURES, hidden=8)


def relu(x):
    return np.maximum(x, 0.0)


def ref_encode(p, features, is_face, edge_index):
    """Plain numpy encoder: per-kind MLP then two GATv2 layers with self-loops."""
    w = {k: t.data for k, t in p.tensors.items()}
    h = np.zeros((len(features), p.config.hidden))
    for mask, name in ((is_face, "face_mlp"), (~is_face, "edge_mlp")):
        x = features[mask]
        h[mask] = relu(x @ w[f"{name}.w1"] + w[f"{name}.b1"]) @ w[f"{name}.w2"] + w[f"{name}.b2"]
    n = len(features)
    nbrs = [{i} for i in range(n)]
    for s, t in edge_index.T:
        nbrs[s].add(t)
        nbrs[t].add(s)
    # duplicates in the edge list are separate messages, so rebuild as a list
    incoming = [[i] for i in range(n)]
    for s, t in edge_index.T:
        incoming[t].append(s)
        incoming[s].append(t)
    for layer, act in (("gat1", relu), ("gat2", lambda v: v)):
        xs, xd = h @ w[f"{layer}.w_src"], h @ w[f"{layer}.w_dst"]
        out = np.zeros_like(h)
        for i in range(n):
            js = incoming[i]
            pre = xs[js] + xd[i]
            pre = np.where(pre > 0, pre, 0.2 * pre)
            e = (pre @ w[f"{layer}.att"]).ravel()
            a = np.exp(e - e.max())
            a /= a.sum()
            out[i] = a @ xs[js]
        h = act(out + w[f"{layer}.bias"])
    return h


def ref_logits(p, h1, h2):
    w = {k: t.data for k, t in p.tensors.items()}
    out = np.zeros((len(h1), len(h2)))
    for u in range(len(h1)):
        for v in range(len(h2)):
            z = relu(np.concatenate([h1[u], h2[v]]) @ w["head.w1"] + w["head.b1"])
            z = relu(z @ w["head.w2"] + w["head.b2"])
            out[u, v] = (z @ w["head.w3"] + w["head.b3"])[0]
    return out


def toy_graph(seed, n):
    return random_graph(np.random.default_rng(seed), n, 2)


class TestEncode:
    def test_matches_reference(self):
        p = ModelParams.init(TOY, 3)
        g = toy_graph(0, 6)
        np.testing.assert_allclose(encode(p, g).data, ref_encode(p, g.features, g.is_face, g.edge_index),
                                   rtol=1e-12, atol=1e-12)

    def test_single_vertex_is_mlp_output(self):
        p = ModelParams.init(TOY, 1)
        g = GraphInput(np.array([[1.5, 1.0]]), np.array([True]), np.zeros((2, 0), dtype=np.int64))
        w = {k: t.data for k, t in p.tensors.items()}
        mlp = relu(g.features @ w["face_mlp.w1"] + w["face_mlp.b1"]) @ w["face_mlp.w2"] + w["face_mlp.b2"]
        # attention over the self-loop alone has weight 1
        after1 = relu(mlp @ w["gat1.w_src"] + w["gat1.bias"])
        expected = after1 @ w["gat2.w_src"] + w["gat2.bias"]
        np.testing.assert_allclose(encode(p, g).data, expected, rtol=1e-12)

    @given(st.integers(0, 10_000), st.integers(2, 7))
    def test_permutation_equivariance(self, seed, n):
        p = ModelParams.init(TOY, 5)
        g = toy_graph(seed, n)
        perm = np.random.default_rng(seed).permutation(n)
        inv = np.argsort(perm)
        permuted = GraphInput(g.features[perm], g.is_face[perm], inv[g.edge_index])
        np.testing.assert_allclose(encode(p, permuted).data, encode(p, g).data[perm], atol=1e-12)

    def test_isomorphic_templates(self, peg):
        from joint_forge.geometry import RigidTransform, rotation_about
        from joint_forge.synthetic import make_peg

        placement = RigidTransform(rotation_about([1.0, 2.0, 0.5], 0.7), np.array([1.0, 2.0, 3.0]))
        moved = make_peg("other", 2.0, 6.0, 32, placement)
        p = ModelParams.init(NetworkConfig(hidden=16), 0)
        a = encode(p, GraphInput.from_part(peg.graph)).data
        b = encode(p, GraphInput.from_part(moved.graph)).data
        np.testing.assert_allclose(np.sort(a, axis=0), np.sort(b, axis=0), atol=1e-12)

    def test_empty_graph(self):
        p = ModelParams.init(TOY, 0)
        g = GraphInput(np.zeros((0, 2)), np.zeros(0, bool), np.zeros((2, 0), dtype=np.int64))
        with pytest.raises(EmptyGraph):
            encode(p, g)

    def test_feature_width_mismatch(self):
        p = ModelParams.init(TOY, 0)
        g = GraphInput(np.zeros((2, 3)), np.array([True, False]), np.array([[0], [1]]))
        with pytest.raises(ShapeMismatch):
            encode(p, g)


class TestLogits:
    def test_matches_reference(self):
        p = ModelParams.init(TOY, 2)
        g1, g2 = toy_graph(1, 4), toy_graph(2, 3)
        h1, h2 = encode(p, g1), encode(p, g2)
        np.testing.assert_allclose(predict_logits(p, h1, h2).data, ref_logits(p, h1.data, h2.data),
                                   rtol=1e-12, atol=1e-12)

    def test_one_by_one(self):
        p = ModelParams.init(TOY, 0)
        g = toy_graph(0, 1)
        assert forward(p, g, g).shape == (1, 1)

    def test_duplicate_vertex_duplicates_column(self):
        p = ModelParams.init(TOY, 0)
        g1 = toy_graph(3, 3)
        # vertices 1 and 2 are twins: same features, both attached only to vertex 0
        feats = np.array([[1.0, 0.0], [2.0, 1.0], [2.0, 1.0]])
        g2 = GraphInput(feats, np.array([True, False, False]), np.array([[0, 0], [1, 2]]))
        logits = forward(p, g1, g2).data
        np.testing.assert_allclose(logits[:, 1], logits[:, 2], rtol=1e-14)

    def test_bad_index(self):
        p = ModelParams.init(TOY, 0)
        h = encode(p, toy_graph(0, 3))
        with pytest.raises(ShapeMismatch):
            predict_logits(p, h, h, ConnectivityIndex(2, 3))

    def test_rows_permute(self):
        p = ModelParams.init(TOY, 4)
        g1, g2 = toy_graph(5, 5), toy_graph(6, 4)
        perm = np.array([3, 0, 4, 1, 2])
        inv = np.argsort(perm)
        g1p = GraphInput(g1.features[perm], g1.is_face[perm], inv[g1.edge_index])
        np.testing.assert_allclose(forward(p, g1p, g2).data, forward(p, g1, g2).data[perm], atol=1e-12)


def _single(n, m, u=0, v=0):
    labels = np.zeros((n, m))
    labels[u, v] = 1.0
    return labels


class TestLosses:
    def test_ce_uniform(self):
        loss = loss_ce(ad.Tensor(np.zeros((4, 5))), _single(4, 5)).item()
        assert loss == pytest.approx(np.log(20), abs=1e-12)

    def test_ce_two_positives(self):
        labels = _single(4, 5)
        labels[2, 3] = 1.0
        expected = -sum(0.5 * np.log(1 / 20) for _ in range(2))
        assert loss_ce(ad.Tensor(np.zeros((4, 5))), labels).item() == pytest.approx(expected, abs=1e-12)

    def test_ce_limit(self):
        values = []
        for big in (0.0, 1.0, 5.0, 20.0, 50.0):
            logits = np.zeros((4, 5))
            logits[0, 0] = big
            values.append(loss_ce(ad.Tensor(logits), _single(4, 5)).item())
        assert all(a > b for a, b in zip(values, values[1:]))
        assert values[-1] < 1e-15

    def test_sym_uniform(self):
        loss = loss_sym(ad.Tensor(np.zeros((4, 5))), _single(4, 5)).item()
        assert loss == pytest.approx(np.log(5) + np.log(4), abs=1e-12)

    def test_sym_singleton(self):
        assert loss_sym(ad.Tensor(np.array([[3.7]])), np.ones((1, 1))).item() == 0.0

    def test_no_positive(self):
        with pytest.raises(NoPositiveLabels):
            loss_ce(ad.Tensor(np.zeros((2, 2))), np.zeros((2, 2)))
        with pytest.raises(NoPositiveLabels):
            loss_sym(ad.Tensor(np.zeros((2, 2))), np.zeros((2, 2)))

    def test_mask_excludes_cells(self):
        mask = np.ones((2, 3), bool)
        mask[:, 2] = False
        logits = np.zeros((2, 3))
        logits[:, 2] = 100.0
        assert loss_ce(ad.Tensor(logits), _single(2, 3), mask).item() == pytest.approx(np.log(4))

    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 1000), st.floats(-50, 50))
    def test_shift_invariant_and_nonnegative(self, n, m, seed, c):
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=(n, m)) * 3
        labels = (rng.random((n, m)) < 0.3).astype(float)
        labels[rng.integers(n), rng.integers(m)] = 1.0
        for fn in (loss_ce, loss_sym):
            base = fn(ad.Tensor(logits), labels).item()
            assert base >= 0
            assert fn(ad.Tensor(logits + c), labels).item() == pytest.approx(base, abs=1e-9)


class TestTopK:
    def test_unique_max(self):
        logits = np.zeros((3, 3))
        logits[2, 1] = 1.0
        assert top_k(logits, 1)[0][:2] == (2, 1)

    def test_ties_row_major(self):
        assert [c[:2] for c in top_k(np.zeros((3, 4)), 3)] == [(0, 0), (0, 1), (0, 2)]

    def test_all_cells(self, rng):
        logits = rng.normal(size=(3, 4))
        cells = top_k(logits, 12)
        assert sorted(c[:2] for c in cells) == [(u, v) for u in range(3) for v in range(4)]
        scores = [c[2] for c in cells]
        assert scores == sorted(scores, reverse=True)

    def test_masked_never_returned(self):
        mask = np.ones((2, 2), bool)
        mask[0, 0] = False
        logits = np.array([[9.0, 0.0], [0.0, 0.0]])
        cells = top_k(logits, 10, mask)
        assert len(cells) == 3 and (0, 0) not in [c[:2] for c in cells]

    def test_bad_k(self):
        with pytest.raises(ValueError):
            top_k(np.zeros((2, 2)), 0)


class TestParams:
    def test_save_load(self, tmp_path):
        p = ModelParams.init(TOY, 9)
        p.save(tmp_path / "m")
        q = ModelParams.load(tmp_path / "m")
        for a, b in zip(p, q):
            np.testing.assert_array_equal(a.data, b.data)
        assert q.config == p.config

    def test_load_garbage(self, tmp_path):
        ad.save_tensors(tmp_path / "m", {"x": np.ones(2)}, {})
        with pytest.raises(CheckpointError):
            ModelParams.load(tmp_path / "m")

    def test_default_shapes(self):
        p = ModelParams.init()
        assert p["face_mlp.w2"].shape == (384, 384)
        assert p["head.w1"].shape == (768, 384)
        assert p["head.w3"].shape == (384, 1)

    def test_init_deterministic(self):
        a, b = ModelParams.init(TOY, 11), ModelParams.init(TOY, 11)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.data, y.data)


def test_gradcheck_small():
    report = gradcheck(seed=3, networks=3)
    assert report.checked > 0
    assert report.max_rel_error < 1e-4
