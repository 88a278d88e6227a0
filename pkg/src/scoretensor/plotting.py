"""Density curves and loss traces, written as CSV plus SVG figures."""

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .energy import energy_values  # noqa: E402
from .errors import ArgumentError  # noqa: E402

# keep SVG output byte-stable across runs
plt.rcParams["svg.hashsalt"] = "scoretensor"
plt.rcParams["svg.fonttype"] = "none"
SVG_METADATA = {"Date": None, "Creator": None}


def grid_spacing(grid):
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or len(grid) < 2:
        raise ArgumentError("density grid needs at least two points")
    steps = np.diff(grid)
    if not np.all(steps > 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
        raise ArgumentError("density grid must be evenly spaced and increasing")
    return float(steps[0])


def density_from_energy(energies, dx):
    """exp(-E_g) / (sum_h exp(-E_h) * dx): a density that integrates to one on the grid."""
    e = np.asarray(energies, dtype=np.float64)
    w = np.exp(-(e - e.min()))
    return w / (w.sum() * dx)


def grid_density(model, index, grid, t=None, value_map=None):
    """Normalised density of one entry on ``grid``.

    ``value_map`` sends grid values to the model's value space (an affine
    standardisation, whose Jacobian the normaliser absorbs).
    """
    dx = grid_spacing(grid)
    grid = np.asarray(grid, dtype=np.float64)
    idx = np.tile(np.asarray(index, dtype=np.int64), (len(grid), 1))
    ts = None if t is None else np.full(len(grid), float(t))
    x = grid if value_map is None else value_map(grid)
    return density_from_energy(energy_values(model, x, idx, ts), dx)


def count_modes(density, rel_height=0.05):
    """Strict local maxima higher than ``rel_height`` times the global maximum."""
    p = np.asarray(density, dtype=np.float64)
    inner = (p[1:-1] > p[:-2]) & (p[1:-1] > p[2:]) & (p[1:-1] >= rel_height * p.max())
    return int(np.sum(inner))


def total_variation(p, q, dx):
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q)))) * dx


def write_density_csv(path, grid, density):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "density"])
        for x, p in zip(grid, density):
            w.writerow([repr(float(x)), repr(float(p))])


def plot_density(model, index, grid, prefix, samples=None, t=None, truth=None, value_map=None):
    """Write ``prefix.csv`` (``x,density``) and ``prefix.svg``; return the density.

    ``samples`` adds an empirical histogram and ``truth`` a reference curve.
    """
    grid = np.asarray(grid, dtype=np.float64)
    density = grid_density(model, index, grid, t, value_map)
    write_density_csv(f"{prefix}.csv", grid, density)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if samples is not None and len(samples):
        ax.hist(samples, bins=40, range=(grid[0], grid[-1]), density=True, alpha=0.35,
                color="tab:gray", label="samples")
    if truth is not None:
        ax.plot(grid, truth, color="tab:green", linestyle="--", label="true density")
    ax.plot(grid, density, color="tab:blue", label="model")
    ax.set_xlabel("x")
    ax.set_ylabel("density")
    ax.set_title(f"entry {tuple(int(c) for c in np.atleast_1d(index))}")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(f"{prefix}.svg", format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    return density


def plot_loss(trace, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(np.arange(1, len(trace) + 1), trace, color="tab:blue")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
