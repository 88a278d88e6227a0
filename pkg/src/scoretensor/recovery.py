"""Completion of missing entries and sparse-noise separation by block coordinate descent."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .dsm import TrainConfig, train
from .errors import ConfigurationError, ParameterError
from .metrics import psnr, rmse
from .samplers import GridConfig, LangevinConfig, anneal_model, grid_min_model
from .tensor import DenseTensor, fold_arrays

log = logging.getLogger(__name__)

SAMPLERS = ("langevin", "grid")


def soft_threshold(v, tau):
    """sgn(v) * max(|v| - tau, 0), elementwise."""
    if np.any(np.asarray(tau) < 0):
        raise ParameterError("threshold must be non-negative")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def _nudge(a, k):
    direction = np.inf if k > 0 else -np.inf
    for _ in range(abs(k)):
        a = np.nextafter(a, direction)
    return a


def exact_split(observed, s):
    """Return (x, s) with ``x + s == observed`` in floating point wherever possible.

    ``x = observed - s`` can round so that adding ``s`` back misses the
    observation by an ulp. Such positions are repaired by moving x, then s, by
    a few ulps. The third value flags positions where no repair exists (|x|
    and |s| both much larger than the observation).
    """
    observed = np.asarray(observed, dtype=np.float64)
    s = np.array(s, dtype=np.float64)
    x = observed - s
    bad = (x + s) != observed
    if bad.any():
        idx = np.nonzero(bad)[0]
        for k in (1, -1, 2, -2, 3, -3):
            cand = _nudge(x[idx], k)
            ok = (cand + s[idx]) == observed[idx]
            x[idx[ok]] = cand[ok]
            idx = idx[~ok]
            if idx.size == 0:
                break
        if idx.size:
            for k in (0, 1, -1, 2, -2):
                cand = _nudge(observed[idx] - x[idx], k)
                ok = (x[idx] + cand) == observed[idx]
                s[idx[ok]] = cand[ok]
                idx = idx[~ok]
                if idx.size == 0:
                    break
        bad = np.zeros(len(observed), dtype=bool)
        bad[idx] = True
    return x, s, bad


def initial_values(observed, indices, timestamps=None):
    """Starting point per query: the observation at the same position (nearest
    timestamp for dynamic tensors), else the median of all observations."""
    indices = np.asarray(indices, dtype=np.int64).reshape(-1, observed.order)
    fallback = float(np.median(observed.values)) if len(observed) else 0.0
    out = np.full(len(indices), fallback)
    if not len(observed) or not len(indices):
        return out
    obs_keys = observed.linear_indices()
    q_keys = np.ravel_multi_index(indices.T, observed.dims)
    order = np.argsort(obs_keys, kind="stable")
    sorted_keys = obs_keys[order]
    lo = np.searchsorted(sorted_keys, q_keys, side="left")
    hi = np.searchsorted(sorted_keys, q_keys, side="right")
    for q in np.nonzero(hi > lo)[0]:
        rows = order[lo[q]:hi[q]]
        if timestamps is None or observed.timestamps is None:
            out[q] = observed.values[rows].mean()
        else:
            d = np.abs(observed.timestamps[rows] - timestamps[q])
            out[q] = observed.values[rows[np.argmin(d)]]
    return out


@dataclass
class ValueScaler:
    """Affine map to model space, (v - shift) / scale, and back."""

    shift: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ParameterError("value scale must be positive")

    @classmethod
    def fit(cls, values):
        """Zero mean and unit standard deviation on ``values``."""
        values = np.asarray(values, dtype=np.float64)
        std = float(values.std())
        return cls(float(values.mean()), std if std > 0 else 1.0)

    def forward(self, values):
        return (np.asarray(values, dtype=np.float64) - self.shift) / self.scale

    def inverse(self, values):
        return np.asarray(values, dtype=np.float64) * self.scale + self.shift


@dataclass
class Completion:
    values: np.ndarray
    errors: list = field(default_factory=list)


def complete(model, indices, sampler="langevin", config=None, timestamps=None, init=None,
             observed=None, workers=1):
    """Estimate argmin_x E(x, z_i[, t]) for every query position.

    ``sampler`` is ``"langevin"`` (annealed Langevin, :class:`LangevinConfig`)
    or ``"grid"`` (:class:`GridConfig`). Langevin chains start from ``init``,
    or from :func:`initial_values` of ``observed``.
    """
    indices = np.asarray(indices, dtype=np.int64).reshape(-1, model.order)
    if len(indices) == 0:
        return Completion(np.zeros(0))
    if sampler == "grid":
        cfg = config if config is not None else GridConfig()
        return Completion(grid_min_model(model, indices, cfg, timestamps, workers))
    if sampler != "langevin":
        raise ConfigurationError(f"unknown sampler {sampler!r}", ["sampler"])
    cfg = config if config is not None else LangevinConfig()
    if init is None:
        init = initial_values(observed, indices, timestamps) if observed is not None else np.zeros(len(indices))
    res = anneal_model(model, indices, init, cfg, timestamps, workers)
    for pos, msg in res.errors:
        log.warning("chain %s: %s", tuple(indices[pos]), msg)
    return Completion(res.values, res.errors)


@dataclass
class BcdConfig:
    iterations: int = 5
    lambda_s: float = 0.1
    train: TrainConfig = field(default_factory=TrainConfig)
    pretrain: TrainConfig = None
    sampler: str = "grid"
    sampler_config: object = None

    def __post_init__(self):
        bad = []
        if int(self.iterations) != self.iterations or self.iterations < 1:
            bad.append("iterations")
        if not self.lambda_s >= 0:
            bad.append("lambda_s")
        if self.sampler not in SAMPLERS:
            bad.append("sampler")
        if bad:
            raise ConfigurationError(f"invalid denoising configuration: {', '.join(bad)}", bad)
        self.iterations = int(self.iterations)


@dataclass
class BcdResult:
    X: DenseTensor
    S: DenseTensor
    x: np.ndarray
    s: np.ndarray
    history: list


def denoise_bcd(observed, model, cfg, reference=None, workers=1, callback=None):
    """Separate ``observed`` into a clean part X and a sparse part S.

    Each iteration samples x from the current energy at every observed
    position, shrinks the residual into s with threshold lambda_S / 2, resets
    x = observed - s, and retrains the model on the updated values (with the
    smoothing term when configured). ``cfg.pretrain`` fits the model to the
    raw observations before the first iteration. ``reference`` is an optional
    clean dense tensor used only for per-iteration metrics.
    """
    x_hat = observed.values
    x = x_hat.copy()
    s = np.zeros_like(x_hat)
    history = []
    if cfg.pretrain is not None and cfg.pretrain.epochs > 0:
        train(model, observed, cfg.pretrain, workers=workers)
    ref_vals = None
    if reference is not None:
        ref_vals = reference.values[tuple(observed.indices.T)]
    opt = None
    for it in range(1, cfg.iterations + 1):
        comp = complete(model, observed.indices, cfg.sampler, cfg.sampler_config,
                        observed.timestamps, init=x, workers=workers)
        posterior = comp.values
        s = soft_threshold(x_hat - posterior, cfg.lambda_s / 2.0)
        x, s, unsplit = exact_split(x_hat, s)
        tcfg = cfg.train
        if tcfg.epochs > 0:
            res = train(model, observed.with_values(x), tcfg, posterior=x, optimizer=opt, workers=workers)
            opt = res.optimizer
        record = {"iteration": it, "sparse_fraction": float(np.mean(s != 0)),
                  "split_violations": int(unsplit.sum())}
        if ref_vals is not None:
            record["rmse"] = rmse(x, ref_vals)
            record["psnr"] = psnr(x, ref_vals)
        history.append(record)
        log.info("BCD iteration %d: %s", it, record)
        if callback is not None:
            callback(it, x, s)
    X = fold_arrays(observed.indices, x, observed.dims)
    S = fold_arrays(observed.indices, s, observed.dims)
    return BcdResult(X, S, x, s, history)
