import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hpnet import numerics as nx


def naive_matmul(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity(self, rng):
        b = rng.standard_normal((2, 2)).astype(np.float32)
        np.testing.assert_array_equal(nx.matmul(np.eye(2, dtype=np.float32), b), b)
        np.testing.assert_array_equal(nx.matmul(b, np.eye(2, dtype=np.float32)), b)

    def test_hand_case(self):
        out = nx.matmul(np.array([[1., 2.], [3., 4.]]), np.array([[0.], [1.]]))
        np.testing.assert_array_equal(out, [[2.], [4.]])

    def test_triple_loop_oracle(self, rng):
        a = rng.standard_normal((5, 7)).astype(np.float32)
        b = rng.standard_normal((7, 3)).astype(np.float32)
        np.testing.assert_allclose(nx.matmul(a, b), naive_matmul(a, b), atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(nx.ShapeError):
            nx.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_non_finite_is_surfaced(self):
        with pytest.raises(nx.NumericalError):
            nx.matmul(np.array([[np.inf]]), np.array([[1.0]]))

    def test_deterministic(self, rng):
        a = rng.standard_normal((16, 9)).astype(np.float32)
        b = rng.standard_normal((9, 4)).astype(np.float32)
        assert nx.matmul(a, b).tobytes() == nx.matmul(a.copy(), b.copy()).tobytes()


class TestMlp:
    def test_zero_params(self, rng):
        p = nx.init_mlp(rng, 3, 4, 2, std=0.0)
        y, _ = nx.mlp_forward(p, np.array([1.0, -2.0, 3.0], dtype=np.float32))
        np.testing.assert_array_equal(y, 0.0)

    def test_relu_identity(self):
        eye = np.eye(2)
        p = {"W1": eye, "b1": np.zeros(2), "W2": eye, "b2": np.zeros(2)}
        y, _ = nx.mlp_forward(p, np.array([-1.0, 2.0]))
        np.testing.assert_array_equal(y, [0.0, 2.0])

    def test_scalar_oracle(self, rng):
        p = nx.init_mlp(rng, 5, 6, 3, std=0.7)
        p["b1"] = rng.standard_normal(6).astype(np.float32)
        p["b2"] = rng.standard_normal(3).astype(np.float32)
        x = rng.standard_normal(5).astype(np.float32)
        y, _ = nx.mlp_forward(p, x)
        expected = []
        for o in range(3):
            acc = float(p["b2"][o])
            for h in range(6):
                pre = float(p["b1"][h]) + sum(float(p["W1"][h, i]) * float(x[i]) for i in range(5))
                acc += float(p["W2"][o, h]) * max(pre, 0.0)
            expected.append(acc)
        np.testing.assert_allclose(y, expected, atol=1e-6)

    def test_dimension_mismatch(self, rng):
        p = nx.init_mlp(rng, 3, 4, 2)
        with pytest.raises(nx.ShapeError):
            nx.mlp_forward(p, np.ones(4, dtype=np.float32))

    def test_backward_matches_finite_differences(self, rng):
        p = nx.params_astype(nx.init_mlp(rng, 4, 5, 3, std=1.0), np.float64)
        p["b1"] = rng.uniform(0.5, 1.0, 5)  # keep hidden units away from the kink
        x = np.abs(rng.standard_normal(4))
        w = rng.standard_normal(3)

        def f(q):
            y, _ = nx.mlp_forward(q, x)
            return float(w @ y)

        _, cache = nx.mlp_forward(p, x)
        grads, dx = nx.mlp_backward(p, cache, w)
        numeric = nx.finite_diff_grad(f, p, eps=1e-6)
        worst, _ = nx.max_relative_error(grads, numeric)
        assert worst < 1e-6

        def fx(q):
            y, _ = nx.mlp_forward(p, q["x"])
            return float(w @ y)

        np.testing.assert_allclose(dx, nx.finite_diff_grad(fx, {"x": x}, eps=1e-6)["x"], rtol=1e-6)


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        y = nx.one_hot(2, 5)
        assert nx.cross_entropy(np.zeros(5, dtype=np.float32), y) == pytest.approx(math.log(5), abs=1e-6)

    def test_confident_correct(self):
        s = np.zeros(5, dtype=np.float32)
        s[3] = 1000.0
        assert nx.cross_entropy(s, nx.one_hot(3, 5)) == pytest.approx(0.0, abs=1e-6)

    def test_direct_formula(self):
        s = np.array([0.3, -0.7, 1.1])
        p = np.exp(s) / np.exp(s).sum()
        assert nx.cross_entropy(s, nx.one_hot(2, 3, np.float64)) == pytest.approx(-math.log(p[2]), rel=1e-12)

    def test_strictly_positive(self, rng):
        s = rng.standard_normal(4)
        assert nx.cross_entropy(s, nx.one_hot(1, 4)) > 0

    @pytest.mark.parametrize("bad", [[0, 0, 0], [1, 1, 0], [0.5, 0.5, 0], [2, 0, 0]])
    def test_invalid_onehot(self, bad):
        with pytest.raises(ValueError):
            nx.cross_entropy(np.zeros(3), np.array(bad, dtype=float))

    def test_empty(self):
        with pytest.raises(ValueError):
            nx.cross_entropy(np.zeros(0), np.zeros(0))

    def test_grad_matches_finite_differences(self, rng):
        s = rng.standard_normal(6)
        y = nx.one_hot(4, 6, np.float64)
        g = nx.cross_entropy_grad(s, y)
        num = nx.finite_diff_grad(lambda q: nx.cross_entropy(q["s"], y), {"s": s}, eps=1e-6)["s"]
        np.testing.assert_allclose(g, num, atol=1e-8)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)))
    def test_softmax_is_a_distribution(self, logits):
        p = nx.softmax(logits.astype(np.float32))
        assert abs(float(p.sum()) - 1.0) <= 1e-6
        assert np.all(p > 0) and np.all(p <= 1)


class TestFiniteDiff:
    def test_square(self):
        g = nx.finite_diff_grad(lambda p: float(p["w"][0] ** 2), {"w": np.array([3.0])})
        assert g["w"][0] == pytest.approx(6.0, abs=1e-6)

    def test_constant(self, rng):
        p = {"a": rng.standard_normal((2, 3)), "b": rng.standard_normal(4)}
        g = nx.finite_diff_grad(lambda q: 1.5, p)
        for v in g.values():
            np.testing.assert_array_equal(v, 0.0)

    def test_restores_parameters(self, rng):
        p = {"a": rng.standard_normal(5)}
        before = p["a"].copy()
        nx.finite_diff_grad(lambda q: float(np.sum(q["a"] ** 3)), p)
        np.testing.assert_array_equal(p["a"], before)

    def test_non_finite_objective(self):
        with pytest.raises(nx.NumericalError), np.errstate(invalid="ignore"):
            nx.finite_diff_grad(lambda q: float(np.log(q["x"][0])), {"x": np.array([0.0])}, eps=1e-3)

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            nx.finite_diff_grad(lambda q: 0.0, {"x": np.zeros(1)}, eps=0.0)

    def test_relative_error_floor(self):
        np.testing.assert_allclose(nx.relative_error(np.array([1e-9]), np.array([0.0])), 1e-3)
        np.testing.assert_allclose(nx.relative_error(np.array([2.0]), np.array([1.0])), 0.5)


class TestParamHelpers:
    def test_nest_and_sub_roundtrip(self):
        p = {"W": np.ones(2), "b": np.zeros(1)}
        nested = nx.nest("gcn.p", p)
        assert set(nested) == {"gcn.p.W", "gcn.p.b"}
        assert set(nx.sub(nested, "gcn.p")) == {"W", "b"}
        assert nx.sub(nested, "gcn") == {"p.W": nested["gcn.p.W"], "p.b": nested["gcn.p.b"]}
