import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scoretensor.errors import ArgumentError
from scoretensor.metrics import (MetricReport, evaluate, mae, nrmse, psnr, read_metrics_csv, rmse, ssim,
                                 write_metrics_csv)

vec = arrays(np.float64, st.integers(1, 30), elements=st.floats(-100, 100))


def texture(seed=0, shape=(48, 48)):
    rng = np.random.default_rng(seed)
    u, v = np.meshgrid(np.linspace(0, 4 * np.pi, shape[1]), np.linspace(0, 3 * np.pi, shape[0]))
    return 0.5 + 0.3 * np.sin(u) * np.cos(v) + 0.05 * rng.standard_normal(shape)


class TestErrors:
    def test_identical(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0 and mae([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_hand_values(self):
        assert rmse([3.0, 4.0], [0.0, 0.0]) == pytest.approx(math.sqrt(12.5))
        assert mae([3.0, 4.0], [0.0, 0.0]) == 3.5

    @given(vec, st.floats(-10, 10))
    def test_constant_offset(self, t, c):
        assert rmse(t + c, t) == pytest.approx(abs(c), abs=1e-9)
        assert mae(t + c, t) == pytest.approx(abs(c), abs=1e-9)

    @given(vec, st.data())
    def test_rmse_dominates_mae(self, t, data):
        p = data.draw(arrays(np.float64, t.shape, elements=st.floats(-100, 100)))
        assert rmse(p, t) >= mae(p, t) - 1e-9

    def test_empty_and_mismatch(self):
        with pytest.raises(ArgumentError):
            rmse([], [])
        with pytest.raises(ArgumentError):
            mae([1.0], [1.0, 2.0])


class TestPsnr:
    def test_twenty_db(self):
        assert psnr(np.full(4, 0.1), np.zeros(4)) == pytest.approx(20.0)

    def test_identical_is_inf(self):
        assert psnr([0.3], [0.3]) == math.inf

    def test_doubling_mse(self):
        a = psnr(np.full(4, 0.1), np.zeros(4))
        b = psnr(np.full(4, 0.1 * math.sqrt(2)), np.zeros(4))
        assert a - b == pytest.approx(10 * math.log10(2))

    def test_peak(self):
        assert psnr([255.0 * 0.1], [0.0], peak=255.0) == pytest.approx(20.0)


class TestNrmse:
    def test_examples(self):
        t = np.array([1.0, -2.0, 3.0])
        assert nrmse(t, t) == 0.0
        assert nrmse(np.zeros(3), t) == pytest.approx(1.0)
        assert nrmse(2 * t, t) == pytest.approx(1.0)

    @given(st.floats(0.01, 100))
    def test_scale_invariant(self, c):
        rng = np.random.default_rng(0)
        p, t = rng.normal(size=5), rng.normal(size=5)
        assert nrmse(c * p, c * t) == pytest.approx(nrmse(p, t), rel=1e-9)

    def test_zero_reference(self):
        with pytest.raises(ArgumentError):
            nrmse([1.0], [0.0])


class TestSsim:
    def test_identical(self):
        a = texture()
        assert ssim(a, a) == pytest.approx(1.0)

    def test_negative_is_anti_correlated(self):
        a = texture()
        assert ssim(1 - a, a) < 0

    def test_symmetric(self):
        a, b = texture(0), texture(1)
        assert ssim(a, b) == pytest.approx(ssim(b, a), rel=1e-12)

    def test_bounded(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            v = ssim(rng.random((20, 20)), rng.random((20, 20)))
            assert -1.0 <= v <= 1.0

    def test_matches_reference_implementation(self):
        metrics = pytest.importorskip("skimage.metrics")
        a, b = texture(0), texture(1)
        ref = metrics.structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                            use_sample_covariance=False)
        assert ssim(a, b) == pytest.approx(ref, abs=1e-6)

    def test_bands_averaged(self):
        a, b = texture(0), texture(1)
        stack_a, stack_b = np.stack([a, a], axis=2), np.stack([b, a], axis=2)
        assert ssim(stack_a, stack_b) == pytest.approx((ssim(a, b) + 1.0) / 2)

    def test_too_small(self):
        with pytest.raises(ArgumentError):
            ssim(np.ones((5, 5)), np.ones((5, 5)))


class TestReport:
    def test_csv_round_trip(self, tmp_path):
        path = tmp_path / "m.csv"
        write_metrics_csv(path, [("rmse", 0.5), ("psnr", math.inf)])
        assert path.read_text().splitlines() == ["metric,value", "rmse,0.5", "psnr,inf"]
        assert read_metrics_csv(path) == {"rmse": 0.5, "psnr": math.inf}

    def test_evaluate_mask(self):
        truth = np.zeros((2, 2))
        pred = np.array([[0.0, 1.0], [0.0, 5.0]])
        mask = np.array([[True, True], [False, False]])
        report = evaluate(pred, truth, mask, ("rmse", "mae"))
        assert report.count == 2 and report.mae == 0.5

    def test_rows_skip_missing(self):
        assert MetricReport(rmse=1.0).rows() == [("rmse", 1.0)]
