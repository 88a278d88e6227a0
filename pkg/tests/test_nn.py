import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scoretensor import autodiff as ad
from scoretensor.errors import ArgumentError, OptimizerError
from scoretensor.nn import AdamState, FourierEncoder, MlpParams, adam_step, fourier_encode, init_params, mlp_forward


class TestMlp:
    def test_identity_layer(self):
        p = MlpParams([np.eye(2)], [np.zeros(2)], [None])
        np.testing.assert_array_equal(mlp_forward(p, ad.constant([1.0, 2.0])).value, [1.0, 2.0])

    def test_single_softplus_unit(self):
        p = MlpParams([np.array([[2.0]])], [np.array([1.0])], ["softplus"])
        assert float(mlp_forward(p, ad.constant([0.0])).value[0]) == pytest.approx(1.31326, abs=1e-5)

    def test_deterministic(self):
        p = init_params([3, 5, 2], seed=0)
        x = ad.constant(np.ones((4, 3)))
        assert np.array_equal(mlp_forward(p, x).value, mlp_forward(p, x).value)

    def test_shape_mismatch(self):
        p = init_params([3, 2], seed=0)
        with pytest.raises(ArgumentError):
            mlp_forward(p, ad.constant(np.ones(2)))

    def test_layers_must_chain(self):
        with pytest.raises(ArgumentError):
            MlpParams([np.ones((2, 3)), np.ones((1, 3))], [np.ones(2), np.ones(1)], [None, None])

    def test_gradcheck_inputs_and_params(self):
        p = init_params([3, 6, 6, 1], seed=2)
        x0 = np.array([[0.2, -0.5, 1.1]])
        assert ad.gradcheck(lambda x: ad.sum(mlp_forward(p, x)), x0) < 1e-5
        for k in range(len(p.weights)):
            def f(w, k=k):
                q = MlpParams(list(p.weights), list(p.biases), list(p.activations))
                q.weights[k] = w
                return ad.sum(mlp_forward(q, ad.constant(x0)))
            assert ad.gradcheck(f, p.weights[k]) < 1e-5


class TestInit:
    def test_seeded(self):
        a, b = init_params([4, 7, 1], seed=9), init_params([4, 7, 1], seed=9)
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)

    def test_zero_bias(self):
        p = init_params([4, 7, 1], seed=9)
        assert all(np.all(b == 0) for b in p.biases)

    def test_glorot_std(self):
        w = init_params([512, 512], seed=1).weights[0]
        expected = math.sqrt(2.0 / 1024)
        assert abs(w.std() - expected) / expected < 0.15
        assert np.abs(w).max() <= math.sqrt(6.0 / 1024)

    def test_bad_sizes(self):
        with pytest.raises(ArgumentError):
            init_params([3], seed=0)


class TestFourier:
    def test_zero_coords(self):
        enc = FourierEncoder(np.array([[1.0, 2.0], [3.0, -1.0]]))
        out = fourier_encode(enc, ad.constant(np.zeros((1, 2)))).value
        np.testing.assert_array_equal(out[0, :2], 0.0)
        np.testing.assert_array_equal(out[0, 2:], 1.0)

    def test_quarter(self):
        enc = FourierEncoder(np.array([[1.0]]))
        out = fourier_encode(enc, ad.constant(np.array([0.25]))).value
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-15)

    @given(st.floats(-3, 3), st.integers(-3, 3))
    @settings(max_examples=30, deadline=None)
    def test_periodic_and_bounded(self, c, shift):
        enc = FourierEncoder(np.array([[1.0], [2.0], [-3.0]]))
        a = fourier_encode(enc, ad.constant(np.array([c]))).value
        b = fourier_encode(enc, ad.constant(np.array([c + shift]))).value
        np.testing.assert_allclose(a, b, atol=1e-9)
        assert np.all(np.abs(a) <= 1.0)

    def test_shape(self):
        enc = FourierEncoder.random(5, 2, 10.0, seed=0)
        assert enc.out_dim == 10
        with pytest.raises(ArgumentError):
            fourier_encode(enc, ad.constant(np.zeros(3)))

    def test_random_scale(self):
        enc = FourierEncoder.random(4000, 1, 10.0, seed=0)
        assert np.std(enc.B) == pytest.approx(10.0, rel=0.05)


class TestAdam:
    def test_zero_grad(self):
        params = {"w": np.array([1.0, -2.0])}
        state = AdamState()
        adam_step(state, params, {"w": np.zeros(2)})
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])
        assert state.t == 1

    def test_first_step_magnitude(self):
        params = {"w": np.zeros(3)}
        adam_step(AdamState(lr=1e-3), params, {"w": np.array([0.5, -2.0, 1e-3])})
        np.testing.assert_allclose(np.abs(params["w"]), 1e-3, rtol=1e-4)
        np.testing.assert_array_equal(np.sign(params["w"]), [-1, 1, -1])

    @pytest.mark.parametrize("c", [1e-2, 1.0, 1e3])
    def test_scale_equivariant_first_step(self, c):
        g = np.array([0.3, -0.1, 2.0])
        p1, p2 = {"w": np.zeros(3)}, {"w": np.zeros(3)}
        adam_step(AdamState(), p1, {"w": g})
        adam_step(AdamState(), p2, {"w": c * g})
        np.testing.assert_allclose(p1["w"], p2["w"], rtol=1e-4)

    def test_non_finite_refused(self):
        params = {"w": np.ones(2), "b": np.ones(1)}
        state = AdamState()
        with pytest.raises(OptimizerError):
            adam_step(state, params, {"b": np.ones(1), "w": np.array([1.0, np.nan])})
        np.testing.assert_array_equal(params["w"], 1.0)
        np.testing.assert_array_equal(params["b"], 1.0)
        assert state.t == 0

    def test_row_sparse_update(self):
        params = {"f": np.zeros((3, 2))}
        g = np.ones((3, 2))
        adam_step(AdamState(), params, {"f": g}, rows={"f": np.array([1])})
        assert np.all(params["f"][[0, 2]] == 0) and np.all(params["f"][1] != 0)

    def test_minimises_quadratic(self):
        params = {"w": np.array([3.0, -2.0])}
        state = AdamState(lr=0.1)
        for _ in range(500):
            adam_step(state, params, {"w": 2 * params["w"]})
        assert np.all(np.abs(params["w"]) < 1e-2)

    def test_default_hyperparameters(self):
        s = AdamState()
        assert (s.lr, s.beta1, s.beta2, s.eps_hat) == (1e-3, 0.9, 0.999, 1e-8)
