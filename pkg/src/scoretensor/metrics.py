"""Reconstruction metrics: RMSE, MAE, PSNR, SSIM, NRMSE."""

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ArgumentError

METRICS = ("rmse", "mae", "psnr", "ssim", "nrmse")


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ArgumentError(f"shape mismatch {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ArgumentError("metrics need at least one value")
    return pred, truth


def rmse(pred, truth):
    pred, truth = _pair(pred, truth)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def mae(pred, truth):
    pred, truth = _pair(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def psnr(pred, truth, peak=1.0):
    """10 log10(peak^2 / MSE); ``inf`` for a perfect reconstruction."""
    pred, truth = _pair(pred, truth)
    mse = float(np.mean((pred - truth) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def nrmse(pred, truth):
    """||pred - truth||_F / ||truth||_F."""
    pred, truth = _pair(pred, truth)
    norm = np.linalg.norm(truth)
    if norm == 0:
        raise ArgumentError("NRMSE is undefined for an all-zero reference")
    return float(np.linalg.norm(pred - truth) / norm)


def _gaussian_window(size=11, sigma=1.5):
    r = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(r ** 2) / (2 * sigma ** 2))
    return w / w.sum()


def _filter_valid(img, w):
    """Separable 'valid' correlation with the 1-D window ``w`` on both axes."""
    k = len(w)
    rows = sum(w[j] * img[j:img.shape[0] - k + 1 + j, :] for j in range(k))
    return sum(w[j] * rows[:, j:img.shape[1] - k + 1 + j] for j in range(k))


def ssim_2d(pred, truth, peak=1.0, size=11, sigma=1.5):
    pred, truth = _pair(pred, truth)
    if pred.ndim != 2:
        raise ArgumentError("ssim_2d expects a single 2-D slice")
    if min(pred.shape) < size:
        raise ArgumentError(f"image {pred.shape} is smaller than the {size}x{size} window")
    w = _gaussian_window(size, sigma)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mu_x = _filter_valid(pred, w)
    mu_y = _filter_valid(truth, w)
    sxx = _filter_valid(pred * pred, w) - mu_x ** 2
    syy = _filter_valid(truth * truth, w) - mu_y ** 2
    sxy = _filter_valid(pred * truth, w) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(pred, truth, peak=1.0):
    """Mean Gaussian-window SSIM; 3-D inputs are (H, W, bands), averaged over bands."""
    pred, truth = _pair(pred, truth)
    if pred.ndim == 2:
        return ssim_2d(pred, truth, peak)
    if pred.ndim == 3:
        return float(np.mean([ssim_2d(pred[..., b], truth[..., b], peak) for b in range(pred.shape[2])]))
    raise ArgumentError("ssim expects 2-D or 3-D arrays")


@dataclass
class MetricReport:
    rmse: float = None
    mae: float = None
    psnr: float = None
    ssim: float = None
    nrmse: float = None
    count: int = 0

    def rows(self, metrics=METRICS):
        out = []
        for name in metrics:
            value = getattr(self, name)
            if value is not None:
                out.append((name, value))
        return out

    def write_csv(self, path, metrics=METRICS):
        write_metrics_csv(path, self.rows(metrics))

    def as_dict(self):
        return asdict(self)


def format_value(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(float(value))


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for name, value in rows:
            w.writerow([name, format_value(value)])


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != ["metric", "value"]:
            raise ArgumentError(f"unexpected metrics header {header}")
        return {name: float(value) for name, value in r}


def evaluate(pred, truth, mask=None, metrics=("rmse", "mae"), peak=1.0):
    """Metrics over the positions selected by ``mask`` (all positions if None).

    Image metrics (PSNR, SSIM) use the full arrays; SSIM is skipped when a mask
    is given because a windowed statistic over scattered positions is undefined.
    """
    pred, truth = _pair(pred, truth)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != pred.shape:
            raise ArgumentError("mask shape does not match")
        p, t = pred[mask], truth[mask]
    else:
        p, t = pred.reshape(-1), truth.reshape(-1)
    report = MetricReport(count=int(p.size))
    for name in metrics:
        if name == "rmse":
            report.rmse = rmse(p, t)
        elif name == "mae":
            report.mae = mae(p, t)
        elif name == "psnr":
            report.psnr = psnr(p, t, peak)
        elif name == "nrmse":
            report.nrmse = nrmse(p, t)
        elif name == "ssim":
            if mask is not None:
                raise ArgumentError("SSIM is not defined over a scattered mask")
            report.ssim = ssim(pred, truth, peak)
        else:
            raise ArgumentError(f"unknown metric {name!r}")
    return report
