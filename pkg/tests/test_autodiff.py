import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from joint_forge import autodiff as ad
from joint_forge.errors import CheckpointError, ConsumedTape, NonScalarLoss, ShapeMismatch


def numeric_grad(fn, x, h=1e-6):
    """Central differences of a scalar numpy function."""
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        orig = x[i]
        x[i] = orig + h
        up = fn(x)
        x[i] = orig - h
        down = fn(x)
        x[i] = orig
        out[i] = (up - down) / (2 * h)
    return out


def analytic_grad(build, x):
    t = ad.Tensor(x, requires_grad=True)
    with ad.Tape() as tape:
        loss = build(t)
    tape.backward(loss)
    return t.grad


def check_op(build, x, rtol=1e-6, atol=1e-8):
    def value(arr):
        with ad.Tape():
            return build(ad.Tensor(arr)).item()

    np.testing.assert_allclose(analytic_grad(build, x), numeric_grad(value, x), rtol=rtol, atol=atol)


class TestForward:
    def test_softmax_uniform(self):
        out = ad.softmax(ad.Tensor(np.zeros(4)))
        np.testing.assert_array_equal(out.data, [0.25] * 4)

    def test_matmul_identity(self, rng):
        a = rng.normal(size=(3, 5))
        np.testing.assert_array_equal(ad.matmul(ad.Tensor(np.eye(3)), ad.Tensor(a)).data, a)

    def test_shape_mismatch_message(self):
        with pytest.raises(ShapeMismatch, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((2, 3))))

    def test_add_mismatch(self):
        with pytest.raises(ShapeMismatch):
            ad.add(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((3, 2))))

    def test_row_bias_broadcast(self):
        out = ad.add(ad.Tensor(np.zeros((2, 3))), ad.Tensor([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(out.data, [[1, 2, 3], [1, 2, 3]])

    def test_leaky_relu(self):
        out = ad.leaky_relu(ad.Tensor([-1.0, 2.0]), 0.2)
        np.testing.assert_allclose(out.data, [-0.2, 2.0])

    def test_gather_out_of_range(self):
        with pytest.raises(ShapeMismatch):
            ad.gather_rows(ad.Tensor(np.zeros((2, 2))), [2])

    @given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)),
                  elements=st.floats(-1e3, 1e3)), st.sampled_from([0, 1, None]))
    def test_softmax_normalized(self, x, axis):
        out = ad.softmax(ad.Tensor(x), axis).data
        assert (out >= 0).all()
        np.testing.assert_allclose(out.sum(axis=axis), 1.0, atol=1e-12)

    def test_softmax_large_magnitude(self):
        out = ad.softmax(ad.Tensor([1e308, 1e308, -1e308]))
        np.testing.assert_allclose(out.data, [0.5, 0.5, 0.0])

    def test_log_softmax_mask(self):
        out = ad.log_softmax(ad.Tensor([1.0, 5.0, 1.0]), mask=[True, False, True])
        np.testing.assert_allclose(out.data, [np.log(0.5), 0.0, np.log(0.5)])

    def test_segment_softmax(self):
        out = ad.segment_softmax(ad.Tensor([0.0, 0.0, 3.0]), [0, 0, 1], 2)
        np.testing.assert_allclose(out.data, [0.5, 0.5, 1.0])


class TestBackward:
    def test_sum_of_squares(self):
        g = analytic_grad(lambda w: ad.sum_(w * w), [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(g, [2.0, 4.0, 6.0])

    def test_softmax_sum_zero(self, rng):
        g = analytic_grad(lambda x: ad.sum_(ad.softmax(x)), rng.normal(size=6))
        np.testing.assert_allclose(g, 0.0, atol=1e-15)

    def test_disconnected_is_zero(self):
        w = ad.Tensor([1.0, 2.0], requires_grad=True)
        unused = ad.Tensor([3.0], requires_grad=True)
        with ad.Tape() as tape:
            _ = unused * 2.0
            loss = ad.sum_(w)
        tape.backward(loss)
        np.testing.assert_array_equal(unused.grad, [0.0])

    def test_non_scalar(self):
        w = ad.Tensor([1.0, 2.0], requires_grad=True)
        with ad.Tape() as tape:
            out = w * 2.0
        with pytest.raises(NonScalarLoss):
            tape.backward(out)

    def test_consumed(self):
        w = ad.Tensor([1.0, 2.0], requires_grad=True)
        with ad.Tape() as tape:
            loss = ad.sum_(w * w)
        tape.backward(loss)
        with pytest.raises(ConsumedTape):
            tape.backward(loss)

    def test_fan_out_accumulates(self):
        g = analytic_grad(lambda x: ad.sum_(x + x + x), np.ones(3))
        np.testing.assert_array_equal(g, [3.0, 3.0, 3.0])

    @pytest.mark.parametrize("build", [
        lambda x: ad.sum_(ad.relu(x) * x),
        lambda x: ad.sum_(ad.leaky_relu(x, 0.2) * x),
        lambda x: ad.sum_(ad.softmax(x, 1) * x),
        lambda x: ad.sum_(ad.softmax(x, 0) * x),
        lambda x: ad.sum_(ad.log_softmax(x, None) * x),
        lambda x: ad.sum_(ad.log_softmax(x, 1, mask=np.array([[1, 0, 1], [1, 1, 0]], bool)) * x),
        lambda x: ad.sum_(ad.exp(x) * x),
        lambda x: ad.sum_(ad.log(ad.exp(x) + 1.0)),
        lambda x: ad.sum_(ad.matmul(x, ad.transpose(x)) * ad.matmul(x, ad.transpose(x))),
        lambda x: ad.sum_(ad.concat([x, x * 2.0], axis=1) * ad.concat([x, x], axis=1)),
        lambda x: ad.sum_(ad.reshape(x, (3, 2)) * ad.reshape(x, (3, 2))),
        lambda x: ad.sum_(ad.gather_rows(x, [1, 1, 0]) * ad.gather_rows(x, [0, 1, 1])),
        lambda x: ad.sum_(ad.scatter_add_rows(x, [2, 2], 3) * ad.scatter_add_rows(x * x, [0, 2], 3)),
        lambda x: ad.sum_(ad.sum_(x * x, axis=0) * ad.sum_(x, axis=0)),
        lambda x: ad.mean(x * x),
        lambda x: ad.sum_(ad.scale_rows(x, ad.sum_(x, axis=1)) * x),
        lambda x: ad.sum_(ad.segment_softmax(ad.reshape(x, (6,)), [0, 0, 1, 1, 1, 2], 3) * ad.reshape(x, (6,))),
        lambda x: ad.sum_(ad.add(x, ad.sum_(x, axis=0)) * x),
    ])
    def test_against_finite_differences(self, build):
        x = np.array([[0.3, -0.7, 1.1], [0.5, 0.9, -1.3]])
        check_op(build, x)

    @given(st.floats(-5, 5).filter(lambda a: abs(a) > 1e-3))
    def test_linear_in_loss(self, a):
        x = np.array([0.4, -1.2, 2.0])
        base = analytic_grad(lambda t: ad.sum_(ad.softmax(t) * t), x)
        scaled = analytic_grad(lambda t: ad.sum_(ad.softmax(t) * t) * a, x)
        np.testing.assert_allclose(scaled, a * base, rtol=1e-12, atol=1e-15)

    def test_deterministic(self, rng):
        x = rng.normal(size=(4, 3))
        build = lambda t: ad.sum_(ad.softmax(ad.matmul(t, ad.transpose(t)), 1) * ad.matmul(t, ad.transpose(t)))
        np.testing.assert_array_equal(analytic_grad(build, x), analytic_grad(build, x))


class TestAdam:
    def test_zero_grad_no_change(self):
        p = ad.Tensor([1.0, -2.0], requires_grad=True)
        state = ad.AdamState(lr=0.1)
        ad.adam_step([p], [np.zeros(2)], state)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])
        assert state.t == 1

    def test_first_step_magnitude(self):
        p = ad.Tensor([0.0], requires_grad=True)
        ad.adam_step([p], [np.ones(1)], ad.AdamState(lr=0.1))
        np.testing.assert_allclose(p.data, [-0.1], rtol=1e-6)

    def test_matches_scalar_simulation(self):
        # independent scalar Adam recursion
        lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
        x, m, v = 0.0, 0.0, 0.0
        expected = []
        for t in range(1, 101):
            m = b1 * m + (1 - b1)
            v = b2 * v + (1 - b2)
            x -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
            expected.append(x)
        p = ad.Tensor([0.0], requires_grad=True)
        state = ad.AdamState(lr=lr)
        got = []
        for _ in range(100):
            ad.adam_step([p], [np.ones(1)], state)
            got.append(p.data[0])
        np.testing.assert_allclose(got, expected, rtol=1e-12)
        assert np.all(np.diff(got) < 0)
        assert state.t == 100

    def test_shape_mismatch(self):
        p = ad.Tensor([0.0, 1.0], requires_grad=True)
        with pytest.raises(ShapeMismatch):
            ad.adam_step([p], [np.ones(3)], ad.AdamState())

    def test_wrapper_zero_grad(self):
        p = ad.Tensor([1.0], requires_grad=True)
        p.grad = np.ones(1)
        opt = ad.Adam([p], lr=0.5)
        opt.zero_grad()
        assert p.grad is None


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        tensors = {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=4)}
        ad.save_tensors(tmp_path / "ck", tensors, {"k": 1})
        loaded, meta = ad.load_tensors(tmp_path / "ck")
        assert meta == {"k": 1}
        for name in tensors:
            np.testing.assert_array_equal(loaded[name], tensors[name])

    def test_truncated_blob(self, tmp_path):
        ad.save_tensors(tmp_path / "ck", {"a": np.ones(4)})
        blob = tmp_path / "ck.bin"
        blob.write_bytes(blob.read_bytes()[:-8])
        with pytest.raises(CheckpointError):
            ad.load_tensors(tmp_path / "ck")

    def test_missing(self, tmp_path):
        with pytest.raises(CheckpointError):
            ad.load_tensors(tmp_path / "nope")
