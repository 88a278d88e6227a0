"""Multi-noise denoising score matching and the coordinate smoothing loss."""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, OptimizerError, ParameterError, TrainingError
from .nn import AdamState, adam_step
from .tensor import NoiseSchedule, make_noise_schedule

LEVEL_MODES = ("all", "one")
DIVERGENCE_LIMIT = 1e6


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    schedule: NoiseSchedule = field(default_factory=lambda: make_noise_schedule(0.2, 0.01, 10))
    lr: float = 1e-3
    seed: int = 0
    smooth_weight: float = 0.0
    smooth_sigma: float = None
    level_mode: str = "all"

    def __post_init__(self):
        bad = []
        if int(self.epochs) != self.epochs or self.epochs < 0:
            bad.append("epochs")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            bad.append("batch_size")
        if not self.lr > 0:
            bad.append("lr")
        if self.level_mode not in LEVEL_MODES:
            bad.append("level_mode")
        if self.smooth_weight < 0:
            bad.append("smooth_weight")
        if self.smooth_sigma is not None and not self.smooth_sigma > 0:
            bad.append("smooth_sigma")
        if not isinstance(self.schedule, NoiseSchedule):
            bad.append("schedule")
        if bad:
            raise ConfigurationError(f"invalid training configuration: {', '.join(bad)}", bad)
        self.epochs = int(self.epochs)
        self.batch_size = int(self.batch_size)


@dataclass
class Batch:
    """Training entries: indices (n, D), values (n,), timestamps (n,) or None."""

    indices: np.ndarray
    values: np.ndarray
    timestamps: np.ndarray = None

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.ndim == 1:
            self.indices = self.indices[:, None]
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if len(self.values) == 0:
            raise ParameterError("empty batch")
        if len(self.indices) != len(self.values):
            raise ParameterError("indices and values differ in length")
        if self.timestamps is not None:
            self.timestamps = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)

    def __len__(self):
        return len(self.values)

    def rows(self, sel):
        ts = None if self.timestamps is None else self.timestamps[sel]
        return Batch(self.indices[sel], self.values[sel], ts)


def _score_residual_loss(bound, batch, sample_of_row, sigma_row, noise_row, weight_row):
    """sum_r w_r (dE/dx(x~_r) - (x~_r - x_r) / s_r^2)^2 over stacked rows.

    Row r perturbs sample ``sample_of_row[r]`` of the batch with noise scale
    ``sigma_row[r]`` and standard normal draw ``noise_row[r]``.
    """
    x = batch.values[sample_of_row]
    x_tilde = x + sigma_row * noise_row
    z = bound.factor_of(batch.indices)
    if len(sample_of_row) != len(batch) or np.any(sample_of_row != np.arange(len(batch))):
        z = ad.take(z, sample_of_row)
    t = None if batch.timestamps is None else batch.timestamps[sample_of_row]
    s = bound.score(x_tilde, z, t)
    target = (x_tilde - x) / sigma_row ** 2
    res = ad.sub(s, target)
    return ad.sum(ad.mul(weight_row, ad.mul(res, res)))


def _check_loss(loss, what):
    v = float(loss.value)
    if not np.isfinite(v):
        raise TrainingError(f"non-finite {what}", diagnostics={"loss": v})
    return loss


def dsm_loss_level(bound, batch, sigma, rng=None, noise=None):
    """Denoising score matching loss at one noise scale.

    0.5 * mean_b (dE/dx(x~_b) - (x~_b - x_b) / sigma^2)^2 with
    x~ = x + sigma * xi, i.e. the model log-density gradient -dE/dx is matched
    to that of the Gaussian perturbation kernel. ``noise`` fixes xi; otherwise it is drawn from ``rng``.
    """
    if not sigma > 0:
        raise ParameterError("sigma must be positive")
    n = len(batch)
    xi = rng.standard_normal(n) if noise is None else np.broadcast_to(np.asarray(noise, np.float64), (n,))
    loss = _score_residual_loss(bound, batch, np.arange(n), np.full(n, float(sigma)), xi,
                                np.full(n, 0.5 / n))
    return _check_loss(loss, "denoising score matching loss")


def _level_rows(n, sigmas, mode, rng, noise=None, levels=None):
    L = len(sigmas)
    if mode == "all":
        sample = np.tile(np.arange(n), L)
        sig = np.repeat(sigmas, n)
        weight = sig ** 2 / (2.0 * L * n)
        xi = rng.standard_normal(L * n) if noise is None else np.asarray(noise, np.float64).reshape(L * n)
    else:
        sample = np.arange(n)
        lv = rng.integers(0, L, size=n) if levels is None else np.asarray(levels)
        sig = sigmas[lv]
        weight = sig ** 2 / (2.0 * n)
        xi = rng.standard_normal(n) if noise is None else np.asarray(noise, np.float64).reshape(n)
    return sample, sig, xi, weight


def dsm_loss_total(bound, batch, schedule, rng=None, mode="all", noise=None, levels=None):
    """(1/L) sum_l sigma_l^2 * loss at sigma_l.

    ``mode="all"`` evaluates every level on every entry. ``mode="one"`` draws a
    single level per entry uniformly, an unbiased estimate of the same sum.
    """
    if mode not in LEVEL_MODES:
        raise ConfigurationError(f"unknown level mode {mode!r}", ["level_mode"])
    sigmas = np.asarray(schedule.sigmas, dtype=np.float64)
    rows = _level_rows(len(batch), sigmas, mode, rng, noise, levels)
    return _check_loss(_score_residual_loss(bound, batch, *rows), "denoising score matching loss")


def _variant(bound):
    model = getattr(bound, "model", bound)
    return getattr(model, "variant", None)


def smooth_loss(bound, indices, values, sigma_s, rng=None, noise=None):
    """Mean energy of (x, z) with z taken at Gaussian-perturbed coordinates.

    Perturbations live in normalised coordinate space; implicit models only.
    """
    if _variant(bound) != "implicit":
        raise ConfigurationError("the smoothing loss needs an implicit-factor model", ["smooth_weight"])
    if not sigma_s > 0:
        raise ParameterError("sigma_S must be positive")
    indices = np.asarray(indices, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    n = len(values)
    eps = rng.normal(0.0, sigma_s, size=indices.shape) if noise is None else np.asarray(noise, np.float64)
    e = bound.energy(values, bound.factor_of(indices, coord_noise=eps))
    return _check_loss(ad.div(ad.sum(e), float(n)), "smoothing loss")


@dataclass
class TrainResult:
    model: object
    trace: list
    optimizer: AdamState

    def write_trace(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss"])
            for k, v in enumerate(self.trace, start=1):
                w.writerow([k, repr(float(v))])


def _chunk_grads(model, batch, rows, smooth):
    """Loss value and parameter gradients for one chunk on a private tape."""
    tape = ad.Tape()
    bound = model.bind(tape)
    loss = _score_residual_loss(bound, batch, *rows)
    if smooth is not None:
        weight, eps, values = smooth
        e = bound.energy(values, bound.factor_of(batch.indices, coord_noise=eps))
        loss = ad.add(loss, ad.mul(weight / len(batch), ad.sum(e)))
    nodes = bound.trainable_nodes()
    grads = ad.reverse_grad(loss, list(nodes.values()))
    return float(loss.value), dict(zip(nodes.keys(), grads))


def _split(n, workers):
    bounds = np.linspace(0, n, min(workers, n) + 1).round().astype(int)
    return [np.arange(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def train(model, data, cfg, posterior=None, optimizer=None, workers=1, log=None):
    """Minimise the multi-level score matching loss over the observed entries.

    ``data`` is a :class:`~scoretensor.tensor.SparseTensor` (values may be
    replaced by current posterior estimates by the caller). ``posterior``
    optionally supplies the values used by the smoothing term. Returns a
    :class:`TrainResult`; the model's arrays are updated in place.
    """
    n = len(data)
    if n == 0:
        raise ParameterError("no observations to train on")
    full = Batch(data.indices, data.values, data.timestamps)
    post_values = full.values if posterior is None else np.asarray(posterior, dtype=np.float64).reshape(-1)
    smooth_on = cfg.smooth_weight > 0 and model.variant == "implicit"
    sigma_s = cfg.smooth_sigma if cfg.smooth_sigma is not None else 1.0 / max(model.dims)
    params = model.parameters()
    opt = optimizer if optimizer is not None else AdamState(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    sigmas = np.asarray(cfg.schedule.sigmas, dtype=np.float64)
    factor_names = [name for name in params if name.startswith("factors.")]
    trace = []
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for epoch in range(cfg.epochs):
            snapshot = {k: v.copy() for k, v in params.items()}
            perm = rng.permutation(n)
            total = 0.0
            for start in range(0, n, cfg.batch_size):
                sel = perm[start:start + cfg.batch_size]
                batch = full.rows(sel)
                m = len(sel)
                sample, sig, xi, weight = _level_rows(m, sigmas, cfg.level_mode, rng)
                eps = rng.normal(0.0, sigma_s, size=batch.indices.shape) if smooth_on else None
                jobs = []
                for part in _split(m, workers):
                    row_mask = np.isin(sample, part)
                    local = np.searchsorted(part, sample[row_mask])
                    sub = batch.rows(part)
                    # row weights already carry the full-batch normaliser, so chunk losses add up
                    rows = (local, sig[row_mask], xi[row_mask], weight[row_mask])
                    smooth = None
                    if smooth_on:
                        smooth = (cfg.smooth_weight * len(part) / m, eps[part], post_values[sel][part])
                    jobs.append((sub, rows, smooth))
                if pool is None:
                    results = [_chunk_grads(model, *job) for job in jobs]
                else:
                    results = list(pool.map(lambda job: _chunk_grads(model, *job), jobs))
                loss = 0.0
                grads = {}
                for value, g in results:
                    loss += value
                    for k, v in g.items():
                        grads[k] = v if k not in grads else grads[k] + v
                if not np.isfinite(loss) or loss > DIVERGENCE_LIMIT:
                    for k, v in snapshot.items():
                        params[k][...] = v
                    raise TrainingError(
                        f"training diverged at epoch {epoch + 1} (loss {loss:g}); parameters restored",
                        trace, {"epoch": epoch + 1, "loss": loss})
                rows_touched = {name: np.unique(batch.indices[:, int(name.split(".")[1])])
                                for name in factor_names}
                try:
                    adam_step(opt, params, grads, rows_touched)
                except OptimizerError as exc:
                    for k, v in snapshot.items():
                        params[k][...] = v
                    raise TrainingError(str(exc), trace, {"epoch": epoch + 1}) from exc
                total += loss * m
            trace.append(total / n)
            if log is not None:
                log(epoch + 1, trace[-1])
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainResult(model, trace, opt)
