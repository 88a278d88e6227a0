"""Seed derivation and counter-based random streams.

Every random draw in a run traces back to one root seed. Module seeds are
derived by hashing a label, and per-chain sampler noise comes from a
stateless counter-based generator keyed by (seed, chain), so a chain's noise
does not depend on batch layout or worker count.
"""

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO53 = 2.0 ** -53


def derive_seed(root, *labels):
    """Stable 63-bit seed for the labelled sub-stream of ``root``."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(root)).encode())
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "little") >> 1


def generator(root, *labels):
    return np.random.default_rng(derive_seed(root, *labels))


def _splitmix(z):
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def chain_keys(seed, linear_index, timestamps=None):
    """One uint64 key per chain from its tensor position (and timestamp)."""
    idx = np.asarray(linear_index, dtype=np.int64).astype(np.uint64)
    keys = _splitmix(_splitmix(np.full(idx.shape, np.uint64(seed & 0xFFFFFFFFFFFFFFFF))) ^ idx)
    if timestamps is not None:
        bits = np.ascontiguousarray(timestamps, dtype=np.float64).view(np.uint64)
        keys = _splitmix(keys ^ bits)
    return keys


def _uniform(keys, counter):
    with np.errstate(over="ignore"):
        h = _splitmix(keys + _splitmix(np.uint64(counter)))
    # top 53 bits, shifted into (0, 1]
    return ((h >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO53


def counter_normal(keys, counter):
    """Standard normal draw for every key at step ``counter`` (Box-Muller)."""
    u1 = _uniform(keys, 2 * counter)
    u2 = _uniform(keys, 2 * counter + 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
