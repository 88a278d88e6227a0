"""Synthetic tensors, missing patterns and mixed-noise corruption."""

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ArgumentError, GenerationError, ParameterError
from .tensor import DenseTensor, FactorSet, SparseTensor

DISTRIBUTIONS = ("beta", "mog", "exponential")
BURST_FRACTION = 0.05


def gen_factors(dims, rank, law="uniform", seed=0, means=None, var=1.0):
    """I.i.d. factor rows: Uni(0, 1), or Gaussian with per-mode mean rows.

    ``means[d]`` is the length-R mean of mode d's rows (zeros by default) and
    ``var`` the isotropic variance.
    """
    rng = np.random.default_rng(seed)
    dims = [int(n) for n in dims]
    R = int(rank)
    if R < 1 or not dims or any(n < 1 for n in dims):
        raise ParameterError("dims and rank must be positive")
    if law == "uniform":
        return FactorSet([rng.uniform(0.0, 1.0, size=(n, R)) for n in dims])
    if law == "gaussian":
        if means is None:
            means = [np.zeros(R)] * len(dims)
        if len(means) != len(dims):
            raise ArgumentError("one mean row per mode is required")
        std = math.sqrt(var)
        return FactorSet([rng.normal(np.asarray(mu, float), std, size=(n, R)) for n, mu in zip(dims, means)])
    raise ArgumentError(f"unknown factor law {law!r}")


def cp_values(Z):
    """Dense CP reconstruction sum_r prod_d Z^d[i_d, r]."""
    letters = "abcdefghijklmnopqrstuvwxyz"
    D = Z.order
    spec = ",".join(f"{letters[d]}z" for d in range(D)) + "->" + letters[:D]
    return np.einsum(spec, *Z.matrices)


@dataclass
class SimSpec:
    dims: tuple = (8, 8)
    rank: int = 5
    distribution: str = "mog"
    samples_per_entry: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ArgumentError(f"unknown distribution {self.distribution!r}")
        if self.samples_per_entry < 1 or self.rank < 1:
            raise ParameterError("rank and samples per entry must be positive")


def true_density(distribution, m, x):
    """Density of the simulation law for an entry with parameter m at points x."""
    x = np.asarray(x, dtype=np.float64)
    if distribution == "beta":
        return stats.beta.pdf(x, m, 5.0)
    if distribution == "mog":
        return 0.6 * stats.norm.pdf(x, math.cos(m), 0.1) + 0.4 * stats.norm.pdf(x, math.sin(m), 0.25)
    if distribution == "exponential":
        return stats.expon.pdf(x, scale=1.0 / m)
    raise ArgumentError(f"unknown distribution {distribution!r}")


def gen_entry_samples(Z, spec):
    """``spec.samples_per_entry`` independent draws per entry, entry parameter m = CP(Z).

    Beta(m, 5); 0.6 N(cos m, 0.1^2) + 0.4 N(sin m, 0.25^2); Exp(rate m).
    """
    rng = np.random.default_rng(spec.seed)
    m = cp_values(Z)
    dims = m.shape
    N = int(spec.samples_per_entry)
    idx = np.indices(dims).reshape(len(dims), -1).T
    mm = np.repeat(m.reshape(-1), N)
    if spec.distribution in ("beta", "exponential") and np.any(mm <= 0):
        raise GenerationError("entry parameter must be positive for beta/exponential laws")
    if spec.distribution == "beta":
        values = rng.beta(mm, 5.0)
    elif spec.distribution == "mog":
        first = rng.random(mm.size) < 0.6
        values = np.where(first, rng.normal(np.cos(mm), 0.1), rng.normal(np.sin(mm), 0.25))
    else:
        values = rng.exponential(1.0 / mm)
    return SparseTensor(dims, np.repeat(idx, N, axis=0), values, replicates=True)


def continuous_factors(dims=(8, 8), seed=0):
    """Rank-2 factors with rows N([0, 2], 2I) for mode 1 and N([1, 1], 2I) for mode 2."""
    return gen_factors(dims, 2, "gaussian", seed, means=[[0.0, 2.0], [1.0, 1.0]], var=2.0)


def temporal_basis(t):
    """The 2x2 basis omega_{r1 r2}(t), shape (len(t), 2, 2)."""
    t = np.asarray(t, dtype=np.float64)
    w = np.empty(t.shape + (2, 2))
    w[..., 0, 0] = np.sin(2 * np.pi * t)
    w[..., 0, 1] = np.cos(2 * np.pi * t)
    w[..., 1, 0] = np.sin(2 * np.pi * t) ** 2
    w[..., 1, 1] = np.cos(5 * np.pi * t) * np.sin(5 * np.pi * t) ** 2
    return w


def continuous_value(z1, z2, t):
    """x(t) = sum_{r1, r2} z1[r1] z2[r2] omega_{r1 r2}(t)."""
    return np.einsum("a,b,...ab->...", np.asarray(z1, float), np.asarray(z2, float), temporal_basis(t))


def gen_continuous(Z, times=None, seed=None):
    """Every entry observed at ``times`` (default: 200 evenly spaced stamps on [0, 1]).

    ``seed`` only matters when ``times`` is ``"random"``: stamps are then drawn
    uniformly per entry.
    """
    if Z.order != 2 or Z.rank != 2:
        raise GenerationError("the continuous simulation needs a two-mode rank-2 factor set")
    I, J = Z.dims
    n_entries = I * J
    if times is None:
        times = np.linspace(0.0, 1.0, 200)
    if isinstance(times, str):
        if times != "random":
            raise ArgumentError(f"unknown times spec {times!r}")
        rng = np.random.default_rng(seed)
        ts = np.sort(rng.random((n_entries, 200)), axis=1)
    else:
        times = np.asarray(times, dtype=np.float64)
        ts = np.broadcast_to(times, (n_entries, len(times)))
    T = ts.shape[1]
    idx = np.indices((I, J)).reshape(2, -1).T
    A, B = Z.matrices
    values = np.empty((n_entries, T))
    for k, (i, j) in enumerate(idx):
        values[k] = continuous_value(A[i], B[j], ts[k])
    return SparseTensor((I, J), np.repeat(idx, T, axis=0), values.reshape(-1), ts.reshape(-1))


@dataclass
class Split:
    train: SparseTensor
    test: SparseTensor
    train_rows: np.ndarray
    test_rows: np.ndarray


def bursts_for_missing_rate(rate):
    """Number of 5%-long bursts per entry for a target missing rate (0.2 -> 4)."""
    return int(round(rate / BURST_FRACTION))


def apply_missing(data, mode="random", rate=None, bursts=None, seed=0):
    """Partition observations into train and test.

    ``random``: keep ``floor(rate * n)`` uniformly chosen observations for
    training. ``burst``: per entry, pick ``bursts`` start stamps and hold out
    the following ceil(5% of T) stamps from each (overlaps merge).
    """
    rng = np.random.default_rng(seed)
    n = len(data)
    if mode == "random":
        if rate is None or not 0 < rate < 1:
            raise ParameterError("random missingness needs a sampling rate in (0, 1)")
        k = int(math.floor(rate * n))
        if k == 0:
            raise ParameterError("sampling rate leaves no training observations")
        train_rows = np.sort(rng.choice(n, size=k, replace=False))
        test_mask = np.ones(n, dtype=bool)
        test_mask[train_rows] = False
    elif mode == "burst":
        if bursts is None:
            if rate is None or not 0 < rate < 1:
                raise ParameterError("burst missingness needs a burst count or a rate in (0, 1)")
            bursts = bursts_for_missing_rate(rate)
        if bursts < 1:
            raise ParameterError("need at least one burst")
        test_mask = np.zeros(n, dtype=bool)
        keys = data.linear_indices()
        ts = data.timestamps if data.timestamps is not None else np.arange(n, dtype=float)
        for key in np.unique(keys):
            rows = np.nonzero(keys == key)[0]
            rows = rows[np.argsort(ts[rows], kind="stable")]
            T = len(rows)
            length = int(math.ceil(BURST_FRACTION * T))
            starts = rng.choice(T, size=min(bursts, T), replace=False)
            for s in starts:
                test_mask[rows[s:min(T, s + length)]] = True
        train_rows = np.nonzero(~test_mask)[0]
        if train_rows.size == 0:
            raise ParameterError("burst pattern leaves no training observations")
    else:
        raise ArgumentError(f"unknown missing mode {mode!r}")
    test_rows = np.nonzero(test_mask)[0]
    return Split(data.subset(train_rows), data.subset(test_rows), train_rows, test_rows)


@dataclass
class NoiseCaseSpec:
    """Mixed-noise recipe. Rates and fractions are in [0, 1]."""

    case: int = 0
    gaussian_std: float = 0.0
    sparse_rate: float = 0.0
    stripe_band_fraction: float = 0.0
    stripe_row_fraction: float = 0.0
    stripe_amplitude: float = 0.25
    dead_lines: bool = False
    dead_line_count: int = 3
    dead_line_max_width: int = 3

    def __post_init__(self):
        for name in ("sparse_rate", "stripe_band_fraction", "stripe_row_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1]")
        if self.gaussian_std < 0:
            raise ParameterError("gaussian_std must be non-negative")

    @classmethod
    def from_case(cls, case):
        """The six benchmark scenarios."""
        recipes = {
            1: dict(gaussian_std=0.2),
            2: dict(gaussian_std=0.1, sparse_rate=0.1),
            3: dict(gaussian_std=0.1, sparse_rate=0.1, dead_lines=True),
            4: dict(gaussian_std=0.1, sparse_rate=0.1, stripe_band_fraction=0.4, stripe_row_fraction=0.1),
            5: dict(gaussian_std=0.1, sparse_rate=0.1, stripe_band_fraction=0.4, stripe_row_fraction=0.1,
                    dead_lines=True),
            6: dict(sparse_rate=0.1),
        }
        if case not in recipes:
            raise ParameterError(f"noise case must be 1-6, got {case}")
        return cls(case=case, **recipes[case])


def corrupt(image, spec, seed=0):
    """Apply ``spec`` to an (H, W[, bands]) image; no clipping is applied.

    Order: additive Gaussian noise, additive row stripes in a fraction of the
    bands, salt-and-pepper replacement of ``floor(rate * numel)`` positions,
    then dead lines (zeroed column bands across all spectral bands).
    """
    rng = np.random.default_rng(seed)
    x = np.array(image.values, dtype=np.float64)
    flat_bands = x.ndim == 2
    if flat_bands:
        x = x[..., None]
    if x.ndim != 3:
        raise ArgumentError("corrupt expects an (H, W) or (H, W, bands) image")
    H, W, B = x.shape
    if spec.gaussian_std > 0:
        x = x + rng.normal(0.0, spec.gaussian_std, size=x.shape)
    if spec.stripe_band_fraction > 0 and spec.stripe_row_fraction > 0:
        n_bands = int(round(spec.stripe_band_fraction * B)) or 1
        for b in rng.choice(B, size=n_bands, replace=False):
            n_rows = int(round(spec.stripe_row_fraction * H)) or 1
            rows = rng.choice(H, size=n_rows, replace=False)
            x[rows, :, b] += rng.uniform(-spec.stripe_amplitude, spec.stripe_amplitude, size=(n_rows, 1))
    if spec.sparse_rate > 0:
        k = int(math.floor(spec.sparse_rate * x.size))
        pos = rng.choice(x.size, size=k, replace=False)
        flat = x.reshape(-1)
        flat[pos] = rng.integers(0, 2, size=k).astype(np.float64)
        x = flat.reshape(x.shape)
    if spec.dead_lines:
        for _ in range(spec.dead_line_count):
            width = int(rng.integers(1, spec.dead_line_max_width + 1))
            col = int(rng.integers(0, max(1, W - width + 1)))
            x[:, col:col + width, :] = 0.0
    if flat_bands:
        x = x[..., 0]
    return DenseTensor(image.dims, x)


def smooth_lowrank(dims, rank, seed=0, max_frequency=2.0):
    """CP tensor with smooth sinusoidal factors, rescaled to [0.2, 0.8]."""
    rng = np.random.default_rng(seed)
    mats = []
    for n in dims:
        u = np.linspace(0.0, 1.0, n)[:, None]
        freq = rng.uniform(0.5, max_frequency, size=(1, rank))
        phase = rng.uniform(0.0, 2 * np.pi, size=(1, rank))
        mats.append(np.sin(2 * np.pi * freq * u + phase))
    X = cp_values(FactorSet(mats))
    X = (X - X.min()) / (X.max() - X.min())
    return DenseTensor(tuple(dims), 0.2 + 0.6 * X)


def add_impulses(tensor, rate, magnitude=1.0, seed=0):
    """Add +/- ``magnitude`` at ``floor(rate * numel)`` random positions.

    Returns the corrupted tensor and the boolean impulse mask.
    """
    rng = np.random.default_rng(seed)
    x = np.array(tensor.values, dtype=np.float64).reshape(-1)
    k = int(math.floor(rate * x.size))
    pos = rng.choice(x.size, size=k, replace=False)
    x[pos] += magnitude * rng.choice([-1.0, 1.0], size=k)
    mask = np.zeros(x.size, dtype=bool)
    mask[pos] = True
    return DenseTensor(tensor.dims, x), mask.reshape(tensor.dims)
