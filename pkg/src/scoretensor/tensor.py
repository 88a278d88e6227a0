"""Tensor containers, factor storage and the noise schedule."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DuplicateIndexError, ParameterError


def check_index(index, dims):
    """Validate a multi-index against ``dims`` and return it as a tuple of ints."""
    coords = tuple(int(c) for c in index)
    if len(coords) != len(dims):
        raise IndexError(f"index {coords} has order {len(coords)}, tensor has order {len(dims)}")
    for d, (c, n) in enumerate(zip(coords, dims)):
        if not 0 <= c < n:
            raise IndexError(f"coordinate {c} out of range for mode {d} of size {n}")
    return coords


def _check_index_array(indices, dims):
    if indices.ndim != 2 or indices.shape[1] != len(dims):
        raise IndexError(f"indices must have shape (n, {len(dims)}), got {indices.shape}")
    if indices.size and (indices.min() < 0 or np.any(indices >= np.asarray(dims))):
        bad = np.nonzero(np.any((indices < 0) | (indices >= np.asarray(dims)), axis=1))[0][0]
        raise IndexError(f"index {tuple(indices[bad])} out of range for dims {tuple(dims)}")


@dataclass(frozen=True)
class SparseTensor:
    """Observed entries of a ``dims``-shaped tensor in coordinate form.

    ``indices`` is an (n, D) integer array, ``values`` has length n and
    ``timestamps`` is either None or a length-n array in [0, 1]. Replicated
    observations of the same position (repeated draws in the simulation
    studies) are only accepted with ``replicates=True``.
    """

    dims: tuple
    indices: np.ndarray
    values: np.ndarray
    timestamps: np.ndarray = None
    replicates: bool = False

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if not dims or any(n <= 0 for n in dims):
            raise ParameterError(f"dims must be positive, got {dims}")
        indices = np.asarray(self.indices, dtype=np.int64).reshape(-1, len(dims))
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if len(values) != len(indices):
            raise ArgumentError(f"{len(indices)} indices but {len(values)} values")
        _check_index_array(indices, dims)
        ts = self.timestamps
        if ts is not None:
            ts = np.asarray(ts, dtype=np.float64).reshape(-1)
            if len(ts) != len(values):
                raise ArgumentError("timestamps must be present on every entry")
            if ts.size and (np.any(ts < 0) or np.any(ts > 1) or not np.all(np.isfinite(ts))):
                raise ArgumentError("timestamps must lie in [0, 1]")
        if not self.replicates and len(values) > 1:
            keys = np.ravel_multi_index(indices.T, dims) if indices.size else np.zeros(0, np.int64)
            if ts is None:
                dup = len(np.unique(keys)) != len(keys)
            else:
                pairs = np.rec.fromarrays([keys, ts])
                dup = len(np.unique(pairs)) != len(pairs)
            if dup:
                raise DuplicateIndexError("duplicate (index, timestamp) observations")
        for arr in (indices, values, ts):
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "timestamps", ts)

    @property
    def order(self):
        return len(self.dims)

    @property
    def has_time(self):
        return self.timestamps is not None

    def __len__(self):
        return len(self.values)

    @property
    def entries(self):
        ts = self.timestamps
        return [
            (tuple(int(c) for c in idx), float(v), None if ts is None else float(ts[k]))
            for k, (idx, v) in enumerate(zip(self.indices, self.values))
        ]

    def linear_indices(self):
        return np.ravel_multi_index(self.indices.T, self.dims)

    def subset(self, rows):
        rows = np.asarray(rows)
        ts = None if self.timestamps is None else self.timestamps[rows]
        return SparseTensor(self.dims, self.indices[rows], self.values[rows], ts, self.replicates)

    def with_values(self, values):
        return SparseTensor(self.dims, self.indices, values, self.timestamps, self.replicates)


@dataclass(frozen=True)
class DenseTensor:
    dims: tuple
    values: np.ndarray

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if not dims or any(n <= 0 for n in dims):
            raise ParameterError(f"dims must be positive, got {dims}")
        values = np.asarray(self.values, dtype=np.float64)
        if values.size != int(np.prod(dims)):
            raise ArgumentError(f"{values.size} values do not fill dims {dims}")
        values = values.reshape(dims)
        values.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "values", values)

    @property
    def order(self):
        return len(self.dims)

    def to_sparse(self):
        """All positions as observations (full index set)."""
        idx = np.indices(self.dims).reshape(len(self.dims), -1).T
        return SparseTensor(self.dims, idx, self.values.reshape(-1))


def enumerate_entries(tensor):
    """List every (index, value) of a dense tensor in row-major order."""
    return [(idx, float(tensor.values[idx])) for idx in np.ndindex(*tensor.dims)]


def fold(entries, dims):
    """Scatter (index, value) pairs into a dense tensor; unlisted positions are 0."""
    dims = tuple(int(n) for n in dims)
    out = np.zeros(dims)
    seen = set()
    for index, value in entries:
        coords = check_index(index, dims)
        if coords in seen:
            raise DuplicateIndexError(f"index {coords} listed twice")
        seen.add(coords)
        out[coords] = value
    return DenseTensor(dims, out)


def fold_arrays(indices, values, dims):
    """Vectorised :func:`fold` for (n, D) index arrays."""
    dims = tuple(int(n) for n in dims)
    indices = np.asarray(indices, dtype=np.int64).reshape(-1, len(dims))
    _check_index_array(indices, dims)
    keys = np.ravel_multi_index(indices.T, dims)
    if len(np.unique(keys)) != len(keys):
        raise DuplicateIndexError("duplicate indices in fold")
    out = np.zeros(int(np.prod(dims)))
    out[keys] = values
    return DenseTensor(dims, out)


@dataclass
class FactorSet:
    """One I_d x R matrix per mode. Mutated in place by the optimizer."""

    matrices: list = field(default_factory=list)

    def __post_init__(self):
        if not self.matrices:
            raise ParameterError("a factor set needs at least one mode")
        mats = [np.array(m, dtype=np.float64) for m in self.matrices]
        ranks = {m.shape[1] if m.ndim == 2 else -1 for m in mats}
        if len(ranks) != 1 or -1 in ranks:
            raise ParameterError("factor matrices must be 2-D and share the rank")
        if not all(np.all(np.isfinite(m)) for m in mats):
            raise ParameterError("factor values must be finite")
        self.matrices = mats

    @property
    def rank(self):
        return self.matrices[0].shape[1]

    @property
    def dims(self):
        return tuple(m.shape[0] for m in self.matrices)

    @property
    def order(self):
        return len(self.matrices)


def gather_factors(Z, index):
    """Concatenated factor rows z^1_{i_1}, ..., z^D_{i_D} (length D*R)."""
    coords = check_index(index, Z.dims)
    return np.concatenate([m[c] for m, c in zip(Z.matrices, coords)])


def scatter_factors(Z, index, vector):
    """Write a gathered vector back to the rows it was read from."""
    coords = check_index(index, Z.dims)
    vector = np.asarray(vector, dtype=np.float64)
    R = Z.rank
    if vector.shape != (len(coords) * R,):
        raise ArgumentError(f"expected a vector of length {len(coords) * R}")
    for d, c in enumerate(coords):
        Z.matrices[d][c] = vector[d * R:(d + 1) * R]


@dataclass(frozen=True)
class NoiseSchedule:
    """Noise scales in annealing order: ``sigmas[0]`` is the largest."""

    sigmas: tuple

    def __post_init__(self):
        s = tuple(float(v) for v in self.sigmas)
        if len(s) < 1 or any(not v > 0 for v in s):
            raise ParameterError("noise scales must be positive")
        if any(b >= a for a, b in zip(s, s[1:])):
            raise ParameterError("noise scales must be strictly decreasing")
        object.__setattr__(self, "sigmas", s)

    @property
    def L(self):
        return len(self.sigmas)

    @property
    def sigma_max(self):
        return self.sigmas[0]

    @property
    def sigma_min(self):
        return self.sigmas[-1]

    def __iter__(self):
        return iter(self.sigmas)

    def __len__(self):
        return len(self.sigmas)


def make_noise_schedule(sigma_max, sigma_min, L):
    """Geometric schedule from ``sigma_max`` down to ``sigma_min`` with L levels."""
    if not (sigma_max > sigma_min > 0):
        raise ParameterError(f"need sigma_max > sigma_min > 0, got {sigma_max}, {sigma_min}")
    if int(L) != L or L < 2:
        raise ParameterError(f"need at least two noise levels, got L={L}")
    L = int(L)
    ratio = sigma_min / sigma_max
    sigmas = [sigma_max * ratio ** (l / (L - 1)) for l in range(L)]
    sigmas[0], sigmas[-1] = float(sigma_max), float(sigma_min)
    return NoiseSchedule(tuple(sigmas))
