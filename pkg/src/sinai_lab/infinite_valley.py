"""The infinite valley: the potential seen from the bottom of a deep valley.

Right of the origin it is the lattice walk of ``log rho`` conditioned to
stay non-negative; left of it, the walk of ``-log rho`` conditioned to
stay strictly positive.  Both sides start from 0 and are sampled
independently as Doob h-transforms.  A finite-depth rejection sampler of
the same conditioning serves as an independent check.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from . import _kernels
from .environment import Environment
from .errors import (
    DomainError,
    OracleInfeasibleError,
    TruncationError,
    UnsupportedSamplerError,
)
from .rng import derive_seed, generator

HTRANSFORM = "htransform"
REJECTION = "rejection"

DEFAULT_TAIL_TOL = 1e-10
DEFAULT_NU_TOL = 1e-9
INITIAL_HALF_WIDTH = 64
EDGE_BLOCK = 32
MAX_HALF_WIDTH = 10_000
H_TABLE_SIZE = 4096


@dataclass(frozen=True)
class LatticeKernel:
    """Increments (in lattice units) and the harmonic function of the
    walk killed when it goes below 0."""

    jumps: np.ndarray
    probs: np.ndarray
    h: np.ndarray
    slope: float

    def harmonic(self, u):
        if u < 0:
            return 0.0
        if u < self.h.size:
            return float(self.h[u])
        return float(self.h[-1] + self.slope * (u - self.h.size + 1))

    def transition(self, u):
        """``{v: probability}`` of the conditioned chain from level ``u``."""
        w = {int(u + j): p * self.harmonic(u + j) for j, p in zip(self.jumps, self.probs)}
        total = sum(w.values())
        return {v: x / total for v, x in w.items() if x > 0}


def harmonic_function(jumps, probs, size=H_TABLE_SIZE, depth_factor=4):
    """Harmonic function of the lattice walk killed below 0.

    Computed as the (rescaled) probability of climbing to a far level
    ``N = depth_factor * size`` before dropping below 0; the ratio
    converges to the renewal function of the strict descending ladder
    heights for levels far below ``N``.
    """
    jumps = np.asarray(jumps, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    if set(jumps.tolist()) == {-1, 1} and np.allclose(probs, 0.5):
        return np.arange(1, size + 1, dtype=np.float64), 1.0
    n = depth_factor * size
    lower = max(0, -int(jumps.min()))
    upper = max(0, int(jumps.max()))
    ab = np.zeros((lower + upper + 1, n))
    rhs = np.zeros(n)
    ab[upper, :] = 1.0
    for j, p in zip(jumps, probs):
        j = int(j)
        # coefficient of g(u + j) in row u sits at ab[upper - j, u + j]
        cols = np.arange(n) + j
        ok = (cols >= 0) & (cols < n)
        ab[upper - j, cols[ok]] -= p
        rhs[np.arange(n)[cols >= n]] += p
    g = solve_banded((lower, upper), ab, rhs)
    h = g[:size] / g[0]
    k = size // 4
    slope = float((h[-1] - h[-1 - k]) / k)
    return h, slope


@functools.lru_cache(maxsize=32)
def lattice_kernels(dist):
    """Right and left conditioned kernels for an arithmetic distribution."""
    if dist.span is None:
        raise UnsupportedSamplerError(
            "the h-transform sampler needs an arithmetic law of log rho (Assumption 3)")
    jumps, probs = dist.lattice_increments()
    h_r, s_r = harmonic_function(jumps, probs)
    left_jumps = -jumps[::-1]
    left_probs = probs[::-1]
    h_l, s_l = harmonic_function(left_jumps, left_probs)
    return (LatticeKernel(jumps, probs, h_r, s_r),
            LatticeKernel(left_jumps, left_probs, h_l, s_l))


@dataclass(frozen=True)
class InfiniteValleySample:
    """Truncated draw of the infinite valley on ``[-x_left, x_right]``.

    ``levels`` are lattice levels (``V = levels * span``).  Outside the
    window the potential is treated as ``+inf``.  ``tail_mass_bound`` is
    the declared estimate of ``sum exp(-V)`` beyond the window (the edge
    blocks' own contribution, an overestimate while the conditioned walk
    keeps climbing).
    """

    x_left: int
    x_right: int
    levels: np.ndarray
    span: float
    tail_mass_bound: float
    sampler: str

    @property
    def window(self):
        return -self.x_left, self.x_right

    @property
    def values(self):
        return self.levels * self.span

    def __getitem__(self, x):
        if not -self.x_left <= x <= self.x_right:
            raise DomainError(f"site {x} outside sample window {self.window}")
        return float(self.levels[x + self.x_left] * self.span)

    @classmethod
    def from_values(cls, values, x_left, span=1.0, tail_mass_bound=0.0, sampler=HTRANSFORM):
        """Hand-built sample (``values`` are potential values, not levels)."""
        v = np.asarray(values, dtype=np.float64)
        return cls(int(x_left), v.size - 1 - int(x_left), v / span, float(span),
                   float(tail_mass_bound), sampler)


class _Side:
    """Lazily extended conditioned path for one side."""

    def __init__(self, kernel, start, gen):
        self.kernel = kernel
        self.gen = gen
        self.levels = np.zeros(0, dtype=np.int64)
        self._start = start

    def extend_to(self, size):
        need = size - self.levels.size
        if need <= 0:
            return
        start = self.levels[-1] if self.levels.size else self._start
        k = self.kernel
        more = _kernels.conditioned_levels(k.jumps, k.probs, k.h, k.slope, int(start), need,
                                           self.gen)
        self.levels = np.concatenate((self.levels, more))


def _assemble(right, left, x_left, x_right, span, sampler, tail):
    # left levels are shifted by one: the left walk lives on {>= 1}
    lv = left.levels[:x_left][::-1] + 1
    rv = np.concatenate(([0], right.levels[:x_right]))
    levels = np.concatenate((lv, rv)).astype(np.int64)
    return InfiniteValleySample(int(x_left), int(x_right), levels, float(span), float(tail),
                                sampler)


def _sides(dist, seed):
    kr, kl = lattice_kernels(dist)
    return _Side(kr, 0, generator(seed, 0)), _Side(kl, -1, generator(seed, 1))


def sample_tilde_v_htransform(dist, window=None, seed=0, tol=DEFAULT_TAIL_TOL,
                              initial=INITIAL_HALF_WIDTH, cap=MAX_HALF_WIDTH):
    """Draw the infinite valley with the h-transform sampler.

    With an explicit ``window = (lo, hi)`` the draw is returned on that
    window.  With ``window=None`` each side starts at ``initial`` sites and
    is doubled while its last ``EDGE_BLOCK`` sites carry more than ``tol``
    of the total mass; a side needing more than ``cap`` sites raises
    :class:`TruncationError`.
    """
    right, left = _sides(dist, seed)
    if window is not None:
        lo, hi = int(window[0]), int(window[1])
        if not lo <= 0 <= hi:
            raise DomainError(f"window {window} must contain 0")
        right.extend_to(hi)
        left.extend_to(-lo)
        sample = _assemble(right, left, -lo, hi, dist.span, HTRANSFORM, 0.0)
        return _with_tail(sample)
    x_left = x_right = initial
    while True:
        right.extend_to(x_right)
        left.extend_to(x_left)
        e_right = np.exp(-right.levels[:x_right] * dist.span)
        e_left = np.exp(-(left.levels[:x_left] + 1) * dist.span)
        total = 1.0 + e_right.sum() + e_left.sum()
        tail_r = e_right[-EDGE_BLOCK:].sum()
        tail_l = e_left[-EDGE_BLOCK:].sum()
        grow_r = tail_r > tol * total
        grow_l = tail_l > tol * total
        if not (grow_r or grow_l):
            return _assemble(right, left, x_left, x_right, dist.span, HTRANSFORM,
                             tail_r + tail_l)
        if grow_r:
            if x_right >= cap:
                raise TruncationError(f"right side still heavy at {cap} sites (seed {seed})")
            x_right = min(2 * x_right, cap)
        if grow_l:
            if x_left >= cap:
                raise TruncationError(f"left side still heavy at {cap} sites (seed {seed})")
            x_left = min(2 * x_left, cap)


def _with_tail(sample):
    e = np.exp(-sample.values)
    tail = 0.0
    if sample.x_left > 0:
        tail += e[:min(EDGE_BLOCK, sample.x_left)].sum()
    if sample.x_right > 0:
        tail += e[-min(EDGE_BLOCK, sample.x_right):].sum()
    return InfiniteValleySample(sample.x_left, sample.x_right, sample.levels, sample.span,
                                float(tail), sample.sampler)


def rejection_levels(dist, window, depth, count, seed, batch=1 << 15,
                     max_dry_proposals=10_000_000):
    """``count`` accepted level paths on ``window`` from the finite-depth oracle.

    Proposals are unconditioned two-sided lattice walks on ``[-depth,
    depth]``; a path is kept iff ``V >= 0`` on ``1..depth`` and ``V > 0``
    on ``-depth..-1``.  Returns an integer array of shape
    ``(count, hi - lo + 1)``.
    """
    if dist.span is None:
        raise UnsupportedSamplerError("the rejection oracle needs an arithmetic law")
    lo, hi = int(window[0]), int(window[1])
    if depth < max(-lo, hi):
        raise DomainError(f"depth {depth} smaller than window extent {window}")
    jumps, probs = dist.lattice_increments()
    cum = np.cumsum(probs)
    cum[-1] = 1.0
    rng = generator(seed, 2)
    out = []
    have = 0
    dry = 0
    while have < count:
        u = rng.random((batch, 2 * depth))
        inc = jumps[np.searchsorted(cum, u, side="right")]
        right = np.cumsum(inc[:, :depth], axis=1)
        left = np.cumsum(-inc[:, depth:], axis=1)
        ok = (right.min(axis=1) >= 0) & (left.min(axis=1) >= 1)
        if not ok.any():
            dry += batch
            if dry >= max_dry_proposals:
                raise OracleInfeasibleError(
                    f"no accepted path in {dry} proposals at depth {depth}")
            continue
        dry = 0
        r, l_ = right[ok], left[ok]
        paths = np.concatenate((l_[:, :-lo][:, ::-1] if lo < 0 else np.zeros((r.shape[0], 0), int),
                                np.zeros((r.shape[0], 1), dtype=np.int64),
                                r[:, :hi]), axis=1)
        out.append(paths)
        have += paths.shape[0]
    return np.concatenate(out)[:count]


def sample_tilde_v_rejection(dist, window, depth=None, seed=0):
    """One draw of the finite-depth rejection oracle on ``window``.

    ``depth`` defaults to the window extent plus 8 lattice steps.
    """
    lo, hi = int(window[0]), int(window[1])
    if depth is None:
        depth = max(-lo, hi) + 8
    levels = rejection_levels(dist, window, depth, 1, seed, batch=4096)[0]
    sample = InfiniteValleySample(-lo, hi, levels.astype(np.int64), dist.span, 0.0, REJECTION)
    return _with_tail(sample)


def htransform_levels(dist, window, count, seed):
    """``count`` h-transform draws on ``window`` as a level array (for checks)."""
    lo, hi = int(window[0]), int(window[1])
    rows = []
    for i in range(count):
        right, left = _sides(dist, derive_seed(seed, i))
        right.extend_to(hi)
        left.extend_to(-lo)
        rows.append(_assemble(right, left, -lo, hi, 1.0, HTRANSFORM, 0.0).levels)
    return np.array(rows)


def _padded_exp(sample):
    return np.concatenate(([0.0], np.exp(-sample.values), [0.0]))


def tilde_omega(sample, x):
    """``exp(-V(x)) / (exp(-V(x)) + exp(-V(x-1)))``; needs ``x-1, x`` in the window."""
    lo, hi = sample.window
    if not lo < x <= hi:
        raise DomainError(f"tilde omega at {x} needs sites {x - 1} and {x} in {sample.window}")
    d = sample[x] - sample[x - 1]
    return 1.0 / (1.0 + math.exp(d))


def tilde_omega_array(sample):
    """``omega~`` on ``[lo, hi + 1]`` with ``V = +inf`` outside the window.

    The two boundary values are 1 and 0: the truncated walk reflects.
    """
    v = sample.values
    out = np.empty(v.size + 1)
    out[0] = 1.0
    out[-1] = 0.0
    out[1:-1] = 1.0 / (1.0 + np.exp(np.diff(v)))
    return out


@dataclass(frozen=True)
class TildeNu:
    """``nu~`` on ``[lo, hi + 1]``; ``weights[i]`` is the mass of ``lo + i``."""

    lo: int
    weights: np.ndarray
    normalizer: float

    def __getitem__(self, x):
        i = x - self.lo
        if 0 <= i < self.weights.size:
            return float(self.weights[i])
        return 0.0


def tilde_nu(sample, tol=DEFAULT_NU_TOL):
    """Reversible probability of the walk in ``omega~`` on the truncated window."""
    e = _padded_exp(sample)
    norm = 2.0 * e.sum()
    if sample.tail_mass_bound > tol * norm:
        raise TruncationError(
            f"tail mass estimate {sample.tail_mass_bound:.3e} exceeds {tol:g} of the "
            f"normalizer {norm:.3e}; extend the window")
    return TildeNu(sample.window[0], (e[:-1] + e[1:]) / norm, norm)


def reversibility_residual(sample, tol=math.inf):
    """Largest ``|nu~(x-1) omega~(x-1) - nu~(x) (1 - omega~(x))|`` over the window."""
    nu = tilde_nu(sample, tol=tol).weights
    om = tilde_omega_array(sample)
    return float(np.max(np.abs(nu[:-1] * om[:-1] - nu[1:] * (1.0 - om[1:]))))


def s_infty_eval(sample, func, tol=DEFAULT_NU_TOL):
    """One draw of ``S_inf(F) = sum_x nu~(x) F(omega~(x-m), ..., omega~(x+m))``.

    Coordinates beyond the truncated window are padded with 1/2; the mass
    they touch is at most ``tail_mass_bound * sup|F|`` relative.
    """
    m = func.radius
    if 2 * m + 1 > sample.levels.size:
        raise DomainError(f"radius {m} does not fit window {sample.window}")
    nu = tilde_nu(sample, tol=tol).weights
    om = tilde_omega_array(sample)
    padded = np.concatenate((np.full(m, 0.5), om, np.full(m, 0.5)))
    vals = func.evaluate_windows(padded)
    return float(np.dot(nu, vals))


def tilde_environment(sample):
    """``omega~`` on the interior window as an :class:`Environment`."""
    om = tilde_omega_array(sample)[1:-1]
    return Environment(sample.window[0] + 1, om.copy())


def omega_plus_levels(sample):
    """Exact membership of a draw in the positive-potential event (right side)."""
    return bool(np.all(sample.levels[sample.x_left:] >= 0))


def write_sample_csv(sample, path, tol=math.inf):
    """``x, V~(x), omega~(x), nu~(x)`` on the window.

    ``omega~`` at the left edge needs the site outside the window and is
    written as 1 (the truncated walk reflects there).
    """
    nu = tilde_nu(sample, tol=tol).weights
    om = tilde_omega_array(sample)
    lo, hi = sample.window
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "V", "omega", "nu"])
        for i, x in enumerate(range(lo, hi + 1)):
            w.writerow([x, repr(float(sample.values[i])), repr(float(om[i])), repr(float(nu[i]))])
