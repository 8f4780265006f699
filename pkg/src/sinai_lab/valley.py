"""Valley decomposition ``(0, b_n, c_n)``, the measure ``mu_n`` and ``Xi_n``."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .environment import potential
from .errors import DomainError, OutOfWindowError

log = logging.getLogger(__name__)


def depth_threshold(n):
    """``L_n = log n + sqrt(log n)``."""
    ln = math.log(n)
    return ln + math.sqrt(ln)


@dataclass(frozen=True)
class Valley:
    n: int
    depth: float
    b: int
    c: int


def find_valley(pot, n, depth=None):
    """Right border ``c_n`` and bottom ``b_n`` by one left-to-right scan.

    ``c_n`` is the first ``x >= 0`` where ``V(x)`` rises by ``depth``
    (default ``L_n``) above its running minimum over ``[0, x]``; ``b_n``
    is the first minimizer of ``V`` on ``[0, c_n]``.
    """
    depth = depth_threshold(n) if depth is None else float(depth)
    v = pot.segment(0, pot.x_max)
    rise = v - np.minimum.accumulate(v)
    hit = np.flatnonzero(rise >= depth)
    if hit.size == 0:
        raise OutOfWindowError(
            f"no valley of depth {depth:.4f} within [0, {pot.x_max}]; "
            f"scan reached {pot.x_max} with rise {rise[-1]:.4f}", site=pot.x_max + 1)
    c = int(hit[0])
    b = int(np.argmin(v[: c + 1]))
    return Valley(int(n), depth, b, c)


def valley_for(env, n, depth=None):
    """Widen ``env`` until its potential contains the valley.

    Returns ``(env, pot, valley)`` with the possibly widened environment.
    """
    while True:
        pot = potential(env)
        try:
            return env, pot, find_valley(pot, n, depth)
        except OutOfWindowError:
            hi = 2 * env.x_max + 1
            log.info("valley beyond window [%d, %d]; widening to %d", env.x_min, env.x_max, hi)
            env = env.widen(env.x_min, hi)


@dataclass(frozen=True)
class ValleyMeasure:
    """``mu_n`` on ``0..c_n``; ``weights[x]`` for ``x`` in that range.

    ``log_z`` is ``log Z_n`` with ``Z_n = 2 sum_{x<c_n} exp(-V(x))``.
    """

    n: int
    c: int
    weights: np.ndarray
    log_z: float

    @property
    def z(self):
        return math.exp(self.log_z)

    def __getitem__(self, x):
        if 0 <= x <= self.c:
            return float(self.weights[x])
        return 0.0


def mu_n(pot, valley):
    """The environment-only measure approximating the local times."""
    b, c = valley.b, valley.c
    v = pot.segment(0, c)
    e = np.exp(-(v - v[b]))  # in (0, 1] since V(b) is the minimum on [0, c]
    half_z = e[:c].sum()
    w = np.empty(c + 1)
    w[0] = e[0]
    w[1:c] = e[1:c] + e[: c - 1]
    w[c] = e[c - 1]
    w /= 2.0 * half_z
    log_z = math.log(2.0 * half_z) - v[b]
    return ValleyMeasure(valley.n, c, w, log_z)


def stationarity_residual(mu, env):
    """Largest balance residual of ``mu`` for the chain reflected in 0 and ``c_n``."""
    c = mu.c
    w = mu.weights
    if c < 2:
        return 0.0
    om = np.empty(c + 1)
    om[1:c] = env.values(1, c - 1)
    om[0] = 1.0
    om[c] = 0.0
    x = np.arange(1, c)
    inflow = w[x - 1] * om[x - 1] + w[x + 1] * (1.0 - om[x + 1])
    return float(np.max(np.abs(inflow - w[x])))


@dataclass(frozen=True)
class XiVector:
    """``Xi_n(x) = exp(-(V(b_n + x) - V(b_n)))`` on ``[-b_n, c_n - b_n - 1]``."""

    b: int
    c: int
    entries: np.ndarray
    l1: float

    @property
    def lo(self):
        return -self.b

    @property
    def hi(self):
        return self.c - self.b - 1

    def __getitem__(self, x):
        if self.lo <= x <= self.hi:
            return float(self.entries[x - self.lo])
        return 0.0


def xi_vector(pot, valley):
    b, c = valley.b, valley.c
    v = pot.segment(0, c - 1)
    e = np.exp(-(v - v[b]))
    e[b] = 1.0
    return XiVector(b, c, e, float(e.sum()))


def mu_from_xi(xi):
    """``mu_n(b_n + x)`` for relative ``x`` in ``[-b_n, c_n - b_n]``."""
    padded = np.concatenate(([0.0], xi.entries, [0.0]))
    return (padded[1:] + padded[:-1]) / (2.0 * xi.l1)


def omega_from_xi(xi, x):
    """``omega(b_n + x)`` recovered from ``Xi_n``."""
    cur, prev = xi[x], xi[x - 1]
    if cur == 0.0 and prev == 0.0:
        raise DomainError(f"Xi vanishes at {x} and {x - 1}: omega is undefined there")
    return cur / (cur + prev)
