"""Posterior samplers: annealed Langevin dynamics and grid search.

Chains are vectorised over entries. Each chain draws its noise from a
counter-based stream keyed by its tensor position, so the result for an
entry does not depend on which other entries are sampled with it or on how
the work is split.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, ParameterError, SamplerError
from .rng import chain_keys, counter_normal
from .tensor import NoiseSchedule, make_noise_schedule


@dataclass
class LangevinConfig:
    schedule: NoiseSchedule = field(default_factory=lambda: make_noise_schedule(0.2, 0.01, 10))
    eps: float = 2e-5
    steps: int = 100
    seed: int = 0
    final_denoise: bool = False

    def __post_init__(self):
        bad = []
        if not self.eps > 0:
            bad.append("eps")
        if int(self.steps) != self.steps or self.steps < 0:
            bad.append("steps")
        if bad:
            raise ConfigurationError(f"invalid Langevin configuration: {', '.join(bad)}", bad)
        self.steps = int(self.steps)

    def step_sizes(self):
        """alpha_l = eps * sigma_l^2 / sigma_min^2, in annealing order."""
        sig = np.asarray(self.schedule.sigmas, dtype=np.float64)
        return self.eps * sig ** 2 / self.schedule.sigma_min ** 2


@dataclass
class GridConfig:
    lo: float = 0.0
    hi: float = 1.0
    points: int = 256

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigurationError("grid needs lo < hi", ["lo", "hi"])
        if int(self.points) != self.points or self.points < 2:
            raise ConfigurationError("grid needs at least two points", ["points"])
        self.points = int(self.points)

    def values(self):
        g = np.arange(self.points)
        return self.lo + g * (self.hi - self.lo) / (self.points - 1)


@dataclass
class SampleResult:
    """Final chain values plus ``(position, message)`` for chains that failed."""

    values: np.ndarray
    errors: list = field(default_factory=list)


def langevin_step(grad_energy, x, alpha, noise):
    """x - alpha * dE/dx + sqrt(2 alpha) * noise, elementwise."""
    if np.any(np.asarray(alpha) < 0):
        raise ParameterError("step size must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    out = x - alpha * grad_energy + np.sqrt(2.0 * alpha) * noise
    if not np.all(np.isfinite(out)):
        raise SamplerError("non-finite Langevin update")
    return out


class ModelScore:
    """dE/dx of a trained model at fixed entry positions, as plain arrays."""

    def __init__(self, model, indices, timestamps=None):
        self.bound = model.bind()
        self.indices = np.asarray(indices, dtype=np.int64)
        self.timestamps = timestamps
        self.z = self.bound.factor_of(self.indices)

    def __call__(self, x, rows=None):
        if rows is None:
            z, t = self.z, self.timestamps
        else:
            z = ad.take(self.z, rows)
            t = None if self.timestamps is None else self.timestamps[rows]
        return self.bound.score(x, z, t).value

    def energy(self, x, rows=None):
        z = self.z if rows is None else ad.take(self.z, rows)
        t = self.timestamps
        if t is not None and rows is not None:
            t = t[rows]
        return self.bound.energy(np.asarray(x, dtype=np.float64), z, t).value


def anneal(grad_energy, init, cfg, keys):
    """Annealed Langevin dynamics from sigma_max down to sigma_min.

    ``grad_energy(x, rows)`` returns dE/dx for the chains ``rows`` (all chains
    when ``rows`` is None). ``keys`` are the per-chain stream keys from
    :func:`scoretensor.rng.chain_keys`. A chain that turns non-finite is frozen
    at its last finite value and reported in ``errors``.
    """
    x = np.array(init, dtype=np.float64).reshape(-1)
    keys = np.asarray(keys, dtype=np.uint64).reshape(-1)
    if len(keys) != len(x):
        raise ParameterError("one key per chain is required")
    alive = np.ones(len(x), dtype=bool)
    errors = []
    counter = 0
    for level, alpha in enumerate(cfg.step_sizes()):
        for _ in range(cfg.steps):
            counter += 1
            rows = np.nonzero(alive)[0]
            if rows.size == 0:
                break
            full = rows.size == len(x)
            xr = x[rows]
            with np.errstate(all="ignore"):
                g = grad_energy(xr, None if full else rows)
                new = xr - alpha * g + np.sqrt(2.0 * alpha) * counter_normal(keys[rows], counter)
            bad = ~np.isfinite(new)
            if bad.any():
                for r in rows[bad]:
                    errors.append((int(r), f"non-finite chain value at level {level + 1}"))
                alive[rows[bad]] = False
                new = np.where(bad, xr, new)
            x[rows] = new
    if cfg.final_denoise and cfg.steps > 0:
        rows = np.nonzero(alive)[0]
        if rows.size:
            alpha = cfg.step_sizes()[-1]
            x[rows] = x[rows] - alpha * grad_energy(x[rows], None if rows.size == len(x) else rows)
    return SampleResult(x, errors)


def anneal_model(model, indices, init, cfg, timestamps=None, workers=1):
    """:func:`anneal` for entries of a trained model, optionally split across workers."""
    indices = np.asarray(indices, dtype=np.int64).reshape(len(init), -1)
    lin = np.ravel_multi_index(indices.T, model.dims) if len(indices) else np.zeros(0, np.int64)
    keys = chain_keys(cfg.seed, lin, timestamps)
    init = np.asarray(init, dtype=np.float64)

    def run(part):
        ts = None if timestamps is None else np.asarray(timestamps)[part]
        score = ModelScore(model, indices[part], ts)
        return anneal(score, init[part], cfg, keys[part])

    parts = np.array_split(np.arange(len(init)), max(1, min(workers, len(init))))
    if workers > 1 and len(parts) > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, parts))
    else:
        results = [run(p) for p in parts]
    values = np.concatenate([r.values for r in results]) if results else np.zeros(0)
    errors = []
    for part, r in zip(parts, results):
        errors.extend((int(part[k]), msg) for k, msg in r.errors)
    return SampleResult(values, errors)


def grid_min(energy, n, cfg, chunk=65536):
    """Grid point of lowest energy for each of ``n`` entries.

    ``energy(x, rows)`` evaluates the energies of entries ``rows`` at values
    ``x``. Ties resolve to the smaller grid value.
    """
    grid = cfg.values()
    G = len(grid)
    best = np.empty(n)
    per = max(1, chunk // G)
    for start in range(0, n, per):
        rows = np.arange(start, min(n, start + per))
        x = np.tile(grid, len(rows))
        e = np.asarray(energy(x, np.repeat(rows, G))).reshape(len(rows), G)
        best[rows] = grid[np.argmin(e, axis=1)]
    return best


def grid_min_model(model, indices, cfg, timestamps=None, workers=1):
    indices = np.asarray(indices, dtype=np.int64)
    indices = indices.reshape(len(indices), -1)

    def run(part):
        ts = None if timestamps is None else np.asarray(timestamps)[part]
        score = ModelScore(model, indices[part], ts)
        return grid_min(score.energy, len(part), cfg)

    parts = np.array_split(np.arange(len(indices)), max(1, min(workers, len(indices))))
    if workers > 1 and len(parts) > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, parts))
    else:
        results = [run(p) for p in parts]
    return np.concatenate(results) if results else np.zeros(0)
