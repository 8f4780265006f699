"""The quenched walk reflected at 0, its local times and hitting quantities."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .environment import Environment
from .errors import DomainError, OutOfWindowError
from .rng import WALK, generator

log = logging.getLogger(__name__)

DEFAULT_WINDOW_C = 10.0


def default_window(n, c=DEFAULT_WINDOW_C, radius=1):
    """Initial window ``[-radius, C (log n)^2]`` for a horizon ``n``."""
    right = max(16, int(math.ceil(c * math.log(max(n, 2)) ** 2)))
    return -max(1, radius), right


def step(env, x, u):
    """One transition from ``x`` driven by the uniform ``u``."""
    if x < 0:
        raise DomainError(f"the walk lives on x >= 0, got {x}")
    if x == 0:
        return 1
    return x + 1 if u < env[x] else x - 1


@dataclass(frozen=True)
class Trajectory:
    steps: np.ndarray
    env_seed: int | None
    seed: int | None

    @property
    def n(self):
        return self.steps.size - 1


@dataclass(frozen=True)
class LocalTimeProfile:
    """``counts[x]`` is the number of ``k`` in 1..n with ``X_k = x``."""

    counts: np.ndarray
    n: int

    def __getitem__(self, x):
        if 0 <= x < self.counts.size:
            return int(self.counts[x])
        return 0

    def as_dict(self):
        nz = np.flatnonzero(self.counts)
        return {int(x): int(self.counts[x]) for x in nz}

    @property
    def support_max(self):
        nz = np.flatnonzero(self.counts)
        return int(nz[-1]) if nz.size else 0


@dataclass
class WalkState:
    """Resumable streaming walk.

    ``advance(n)`` runs the walk until local times cover ``k = 1..n`` and
    the increments ``X_{k+1} - X_k`` are known for ``k = 1..n``.  The
    environment is widened on demand; the counter-based site generator
    makes the widening exact.
    """

    env: Environment
    gen: np.random.Generator
    x: int = 0
    t: int = 0
    counts: np.ndarray = None
    acc: np.ndarray = None
    traj: np.ndarray = None
    widenings: int = 0

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros(self.env.x_max + 1, dtype=np.int64)
        if self.acc is None:
            self.acc = np.zeros(3)
        if self.traj is None:
            self.traj = np.zeros(0, dtype=np.int64)

    def _run_to(self, t_end):
        while True:
            x, t, status = _kernels.walk_chunk(
                self.env.omega, self.env.x_min, self.gen, self.x, self.t, t_end,
                self.counts, self.traj, self.acc,
            )
            self.x, self.t = int(x), int(t)
            if status == _kernels.OK:
                return
            new_hi = 2 * self.env.x_max + 1
            log.info("walk left window [%d, %d] at t=%d; widening to %d",
                     self.env.x_min, self.env.x_max, self.t, new_hi)
            self.env = self.env.widen(self.env.x_min, new_hi)
            grown = np.zeros(self.env.x_max + 1, dtype=np.int64)
            grown[: self.counts.size] = self.counts
            self.counts = grown
            self.widenings += 1

    def advance(self, n):
        if n + 1 < self.t:
            raise DomainError(f"walk already past horizon {n}")
        self._run_to(n + 1)
        return self

    @property
    def n(self):
        return self.t - 1

    def local_times(self):
        return LocalTimeProfile(self.counts.copy(), self.n)

    @property
    def up_steps(self):
        return int(self.acc[0])

    @property
    def conditional_up_sum(self):
        return float(self.acc[1])

    @property
    def max_position(self):
        return int(self.acc[2])


def start_walk(env, seed, store_trajectory_to=None):
    """A fresh walk at ``X_0 = 0`` driven by the stream of ``seed``."""
    gen = generator(seed, WALK)
    traj = None
    if store_trajectory_to is not None:
        traj = np.zeros(store_trajectory_to + 2, dtype=np.int64)
    return WalkState(env=env, gen=gen, traj=traj)


def simulate(env, n, seed, widen=False):
    """Trajectory ``X_0..X_n``; deterministic in ``(env, n, seed)``.

    With ``widen=False`` leaving the environment window raises
    :class:`OutOfWindowError`; otherwise the window is extended exactly
    (generator-backed environments only).
    """
    if n < 1:
        raise DomainError(f"horizon must be >= 1, got {n}")
    state = start_walk(env, seed, store_trajectory_to=n)
    while True:
        x, t, status = _kernels.walk_chunk(
            state.env.omega, state.env.x_min, state.gen, state.x, state.t, n,
            state.counts, state.traj, state.acc,
        )
        state.x, state.t = int(x), int(t)
        if status == _kernels.OK:
            break
        if not widen:
            raise OutOfWindowError(
                f"walk reached site {state.x} outside window [{env.x_min}, {env.x_max}] "
                f"at time {state.t}", site=state.x)
        state.env = state.env.widen(state.env.x_min, 2 * state.env.x_max + 1)
        grown = np.zeros(state.env.x_max + 1, dtype=np.int64)
        grown[: state.counts.size] = state.counts
        state.counts = grown
    return Trajectory(state.traj[: n + 1].copy(), env.seed, seed)


def local_times(traj):
    """Local times over ``k = 1..n`` (time 0 excluded)."""
    return LocalTimeProfile(np.bincount(traj.steps[1:]), traj.n)


@dataclass(frozen=True)
class Censored:
    """A hitting time that did not occur before ``horizon``."""

    horizon: int

    def __bool__(self):
        return False


def hitting_time(traj, target, after=0):
    """First ``k > after`` with ``X_k = target``, or :class:`Censored`.

    Calling again with ``after`` set to the previous result gives the
    successive visit times.
    """
    if target < 0:
        raise DomainError("target must be >= 0")
    hits = np.flatnonzero(traj.steps[after + 1:] == target)
    if hits.size == 0:
        return Censored(traj.n)
    return int(hits[0]) + after + 1


def hitting_time_lazy(env, target, seed, horizon):
    """Hitting time of ``target`` from 0, simulated only as far as needed."""
    gen = generator(seed, WALK)
    x, t = 0, 0
    while t < horizon:
        x = step(env, x, gen.random())
        t += 1
        if x == target:
            return t
    return Censored(horizon)


def hitting_probability(pot, a, left, right, target="right"):
    """Probability from ``a`` of reaching ``right`` before ``left``.

    Birth-death chain with conductances ``exp(-V(x))`` on the bond
    ``(x, x+1)``; resistances are summed in log space.  ``target="left"``
    gives the complementary probability.
    """
    if not left < right or not left <= a <= right:
        raise DomainError(f"need left < right and left <= a <= right, got {left}, {a}, {right}")
    v = pot.segment(left, right - 1)
    k = a - left
    total = logsumexp(v)
    if target == "right":
        return 0.0 if k == 0 else float(math.exp(logsumexp(v[:k]) - total))
    if target == "left":
        return 0.0 if k == v.size else float(math.exp(logsumexp(v[k:]) - total))
    raise DomainError(f"target must be 'right' or 'left', got {target!r}")


def write_trajectory_csv(traj, path):
    """One ``k,X_k`` record per step."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "X_k"])
        w.writerows(zip(range(traj.steps.size), traj.steps.tolist()))


def write_local_times_csv(lt, path):
    """``x,count`` for every visited site."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "count"])
        w.writerows(sorted(lt.as_dict().items()))
