"""Score-based tensor recovery.

An energy E(x, z[, t]) over tensor entries and shared latent factors is fitted
by multi-noise denoising score matching. Missing entries are completed by
annealed Langevin dynamics or grid search, and sparse noise is separated by
block coordinate descent with soft thresholding.
"""

__version__ = "0.1.0"
