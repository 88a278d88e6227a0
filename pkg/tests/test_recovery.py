import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scoretensor import samplers
from scoretensor.dsm import TrainConfig
from scoretensor.energy import build_model
from scoretensor.errors import ConfigurationError, ParameterError
from scoretensor.recovery import (BcdConfig, ValueScaler, complete, denoise_bcd, exact_split,
                                  initial_values, soft_threshold)
from scoretensor.samplers import GridConfig, LangevinConfig
from scoretensor.tensor import SparseTensor, make_noise_schedule

finite = st.floats(-1e3, 1e3, allow_nan=False)
tau = st.floats(0, 100)


class TestSoftThreshold:
    @pytest.mark.parametrize("v,t,expected", [(1.2, 0.5, 0.7), (-0.3, 0.5, 0.0), (-2.0, 0.5, -1.5)])
    def test_examples(self, v, t, expected):
        assert soft_threshold(v, t) == pytest.approx(expected)

    @given(finite)
    def test_zero_threshold_identity(self, v):
        assert soft_threshold(v, 0.0) == v

    @given(finite, finite, tau)
    def test_non_expansive(self, a, b, t):
        assert abs(soft_threshold(a, t) - soft_threshold(b, t)) <= abs(a - b) + 1e-12

    @given(finite, tau)
    def test_shrinks(self, v, t):
        assert abs(soft_threshold(v, t)) <= abs(v)

    def test_negative_threshold(self):
        with pytest.raises(ParameterError):
            soft_threshold(1.0, -0.1)

    def test_minimises_penalised_square(self):
        rng = np.random.default_rng(0)
        r = rng.uniform(-2, 2, 10000)
        lam = rng.uniform(0, 2, 10000)
        grid = np.linspace(-3, 3, 6001)
        step = grid[1] - grid[0]
        s = soft_threshold(r, lam / 2)
        obj = lambda v: (r - v) ** 2 + lam * np.abs(v)
        brute = np.min((r[:, None] - grid) ** 2 + lam[:, None] * np.abs(grid), axis=1)
        # a grid value can only win by its discretisation error
        assert np.all(obj(s) <= brute + 1e-12)
        assert np.all(np.abs(s - grid[np.argmin((r[:, None] - grid) ** 2 + lam[:, None] * np.abs(grid), axis=1)]) <= step)


class TestExactSplit:
    @given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=1, max_size=50))
    @settings(max_examples=80)
    def test_sum_restores_observation(self, pairs):
        obs, s = np.array(pairs).T
        x, s2, bad = exact_split(obs, s)
        ok = ~bad
        assert np.all(x[ok] + s2[ok] == obs[ok])

    def test_repairs_when_magnitudes_match(self):
        rng = np.random.default_rng(1)
        obs = rng.uniform(0.5, 1.0, 100000)
        s = soft_threshold(obs - rng.uniform(0.5, 1.0, obs.size), 0.1)
        x, s2, bad = exact_split(obs, s)
        assert not bad.any()
        assert np.all(x + s2 == obs)
        assert np.max(np.abs(s2 - s)) <= 1e-15

    def test_flags_only_unrepresentable_sums(self):
        # x + s is a multiple of the finer of their ulps, which may miss the observation
        rng = np.random.default_rng(2)
        obs = rng.uniform(0.1, 0.9, 100000)
        s = soft_threshold(obs - rng.uniform(0, 1, obs.size), 0.1)
        x, s2, bad = exact_split(obs, s)
        assert np.all(x[~bad] + s2[~bad] == obs[~bad])
        grain = np.minimum(np.spacing(np.abs(x[bad])), np.spacing(np.abs(s2[bad])))
        assert np.all(np.mod(obs[bad], grain) != 0)


class QuadraticScore:
    """Sharp quadratic around 0.3 for Langevin, (x - 0.5)^2 for the grid."""

    def __init__(self, model, indices, timestamps=None):
        self.n = len(indices)

    def __call__(self, x, rows=None):
        return 1e4 * (x - 0.3)

    def energy(self, x, rows=None):
        return (x - 0.5) ** 2


@pytest.fixture
def stub_model(monkeypatch):
    monkeypatch.setattr(samplers, "ModelScore", QuadraticScore)
    return build_model("tabular", (4, 3), 2, 4, seed=0)


class TestComplete:
    def test_langevin_finds_centre(self, stub_model):
        idx = np.array([[i, j] for i in range(4) for j in range(3)])
        cfg = LangevinConfig(make_noise_schedule(0.03, 0.01, 3), eps=1e-5, steps=100)
        out = complete(stub_model, idx, "langevin", cfg, init=np.zeros(len(idx))).values
        assert np.all(np.abs(out - 0.3) < 0.05)

    def test_grid_finds_centre(self, stub_model):
        cfg = GridConfig(0.0, 1.0, 256)
        out = complete(stub_model, [[0, 0], [3, 2]], "grid", cfg).values
        assert np.all(np.abs(out - 0.5) <= 0.5 / 255)

    def test_empty_query(self, stub_model):
        assert complete(stub_model, np.zeros((0, 2), int)).values.size == 0

    def test_deterministic(self, stub_model):
        cfg = LangevinConfig(make_noise_schedule(0.1, 0.01, 3), eps=1e-6, steps=20, seed=4)
        a = complete(stub_model, [[1, 1], [2, 0]], "langevin", cfg).values
        assert np.array_equal(a, complete(stub_model, [[1, 1], [2, 0]], "langevin", cfg).values)

    def test_unknown_sampler(self, stub_model):
        with pytest.raises(ConfigurationError):
            complete(stub_model, [[0, 0]], "gibbs")


class TestInitialValues:
    def test_observed_position_and_fallback(self):
        obs = SparseTensor((2, 2), [[0, 0], [1, 1], [1, 0]], [1.0, 3.0, 5.0])
        np.testing.assert_array_equal(initial_values(obs, [[0, 0], [0, 1]]), [1.0, 3.0])

    def test_nearest_timestamp(self):
        obs = SparseTensor((1, 1), [[0, 0], [0, 0]], [1.0, 2.0], timestamps=[0.1, 0.9])
        out = initial_values(obs, [[0, 0], [0, 0]], np.array([0.2, 0.7]))
        np.testing.assert_array_equal(out, [1.0, 2.0])


class TestValueScaler:
    def test_round_trip(self):
        v = np.array([1.0, 3.0, 8.0])
        sc = ValueScaler.fit(v)
        np.testing.assert_allclose(sc.inverse(sc.forward(v)), v)
        assert sc.forward(v).mean() == pytest.approx(0.0, abs=1e-12)

    def test_constant_values(self):
        assert ValueScaler.fit([2.0, 2.0]).scale == 1.0


def noisy_tensor():
    rng = np.random.default_rng(2)
    idx = np.array([[i, j] for i in range(4) for j in range(3)])
    return SparseTensor((4, 3), idx, rng.uniform(0, 1, len(idx)))


def bcd_config(lam, iterations=2):
    return BcdConfig(iterations, lam, TrainConfig(epochs=0), sampler="grid",
                     sampler_config=GridConfig(0.0, 1.0, 256))


class TestDenoise:
    def test_zero_lambda_gives_posterior(self, stub_model):
        obs = noisy_tensor()
        res = denoise_bcd(obs, stub_model, bcd_config(0.0))
        post = complete(stub_model, obs.indices, "grid", GridConfig(0.0, 1.0, 256)).values
        np.testing.assert_array_equal(res.x, post)
        assert np.all(res.x + res.s == obs.values)

    def test_infinite_lambda_passes_observation(self, stub_model):
        obs = noisy_tensor()
        res = denoise_bcd(obs, stub_model, bcd_config(np.inf))
        np.testing.assert_array_equal(res.x, obs.values)
        assert np.all(res.s == 0)
        np.testing.assert_array_equal(res.X.values.reshape(4, 3), obs.values.reshape(4, 3))

    def test_history_and_split(self, stub_model):
        obs = noisy_tensor()
        res = denoise_bcd(obs, stub_model, bcd_config(0.2, iterations=3))
        assert [h["iteration"] for h in res.history] == [1, 2, 3]
        assert all(h["split_violations"] == 0 for h in res.history)
        assert np.all(res.x + res.s == obs.values)

    @pytest.mark.parametrize("kw,field", [({"iterations": 0}, "iterations"), ({"lambda_s": -1.0}, "lambda_s"),
                                          ({"sampler": "x"}, "sampler")])
    def test_config_validation(self, kw, field):
        with pytest.raises(ConfigurationError) as info:
            BcdConfig(**kw)
        assert field in info.value.fields
