"""Seed derivation and the counter-based site generator.

Every random quantity in the toolkit is addressed by a tuple of integers
(master seed, replicate index, stream tag, ...).  Environments use a
stateless hash of ``(seed, x)`` so that the value at site ``x`` never
depends on which window was materialized first.
"""

import numpy as np

# stream tags used with derive_seed / generator
ENV = 0
WALK = 1
VALLEY = 2
MIXTURE = 3
EXCURSION = 4

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def site_uniforms(seed, sites):
    """Uniform variates in [0, 1) that depend only on ``(seed, site)``."""
    sites = np.asarray(sites, dtype=np.int64)
    with np.errstate(over="ignore"):
        key = _mix64(np.full(sites.shape, seed & _MASK64, dtype=np.uint64) + _GOLDEN)
        z = key + (sites.view(np.uint64) + np.uint64(1)) * _GOLDEN
        z = _mix64(_mix64(z))
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def derive_seed(master, *keys):
    """Deterministic 64-bit seed for the stream addressed by ``keys``."""
    ss = np.random.SeedSequence(int(master) & _MASK64, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


def generator(master, *keys):
    """A numpy ``Generator`` for the stream addressed by ``keys``."""
    ss = np.random.SeedSequence(int(master) & _MASK64, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))
