"""Cylinder test functions and the measures ``S_n``, ``Sigma_n``.

A cylinder function of radius ``m`` reads ``omega(x-m), ..., omega(x+m)``
around a site ``x``.  Evaluators are vectorized: they receive an array of
shape ``(N, 2m + 1)`` and return ``N`` values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .environment import Environment
from .errors import ConfigurationError, DomainError, OutOfWindowError
from .infinite_valley import InfiniteValleySample, omega_plus_levels

S_N = "S_n"
SIGMA_N = "Sigma_n"
S_INFTY = "S_infty"


@dataclass(frozen=True)
class CylinderFunction:
    name: str
    radius: int
    evaluator: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    sup_bound: float
    params: dict = field(default_factory=dict)

    def __call__(self, *coords):
        arr = np.asarray(coords, dtype=np.float64).reshape(1, -1)
        if arr.shape[1] != 2 * self.radius + 1:
            raise DomainError(f"{self.name} takes {2 * self.radius + 1} coordinates")
        return float(self.evaluator(arr)[0])

    def evaluate_windows(self, omega):
        """``F`` at every full window of the 1-d array ``omega``."""
        win = sliding_window_view(np.asarray(omega, dtype=np.float64), 2 * self.radius + 1)
        return self.evaluator(win)

    def to_config(self):
        return {"name": self.name, **self.params}


def _constant(c):
    return lambda w: np.full(w.shape[0], float(c))


def make_function(name, **params):
    """Build a function from the catalog.

    ``constant`` (``c``), ``center`` (omega_0), ``drift`` (2 omega_0 - 1),
    ``variance`` (omega_0 (1 - omega_0)), ``adjacent_product``
    (omega_0 omega_1) and ``table`` (piecewise-linear in omega_0 through
    ``knots`` and ``values``).
    """
    if name == "constant":
        c = float(params.get("c", 1.0))
        return CylinderFunction(name, 0, _constant(c), abs(c), {"c": c})
    if name == "center":
        return CylinderFunction(name, 0, lambda w: w[:, 0].copy(), 1.0)
    if name == "drift":
        return CylinderFunction(name, 0, lambda w: 2.0 * w[:, 0] - 1.0, 1.0)
    if name == "variance":
        return CylinderFunction(name, 0, lambda w: w[:, 0] * (1.0 - w[:, 0]), 0.25)
    if name == "adjacent_product":
        return CylinderFunction(name, 1, lambda w: w[:, 1] * w[:, 2], 1.0)
    if name == "table":
        knots = [float(k) for k in params.get("knots", ())]
        values = [float(v) for v in params.get("values", ())]
        if len(knots) < 2 or len(knots) != len(values):
            raise ConfigurationError("table function needs matching 'knots' and 'values' (>= 2)")
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise ConfigurationError("table knots must be strictly increasing")
        kn, va = np.array(knots), np.array(values)
        return CylinderFunction(name, 0, lambda w: np.interp(w[:, 0], kn, va),
                                float(np.max(np.abs(va))), {"knots": knots, "values": values})
    raise ConfigurationError(f"unknown test function {name!r}")


CATALOG = ("constant", "center", "drift", "variance", "adjacent_product", "table")


def function_from_config(spec):
    if isinstance(spec, str):
        return make_function(spec)
    if not isinstance(spec, dict) or "name" not in spec:
        raise ConfigurationError("function must be a name or an object with 'name'")
    params = {k: v for k, v in spec.items() if k != "name"}
    return make_function(spec["name"], **params)


@dataclass(frozen=True)
class MeasureEvaluation:
    value: float
    kind: str
    function: str
    n: int | None = None
    env_seed: int | None = None
    walk_seed: int | None = None


def site_values(env, func, lo, hi):
    """``F(T_x omega)`` for ``x`` in ``lo..hi``."""
    m = func.radius
    return func.evaluate_windows(env.values(lo - m, hi + m))


def s_n_eval(lt, env, func, walk_seed=None):
    """``sum_x xi(n, x) / n * F(T_x omega)``."""
    hi = lt.support_max
    vals = site_values(env, func, 0, hi)
    value = float(np.dot(lt.counts[: hi + 1], vals) / lt.n)
    return MeasureEvaluation(value, S_N, func.name, lt.n, env.seed, walk_seed)


def s_n_temporal(traj, env, func):
    """``(1/n) sum_{k=1..n} F(T_{X_k} omega)`` read off the trajectory."""
    path = traj.steps[1:]
    vals = site_values(env, func, 0, int(path.max()))
    return float(vals[path].sum() / traj.n)


def sigma_n_eval(mu, env, func):
    """``sum_x mu_n(x) F(T_x omega)`` over ``0..c_n``."""
    vals = site_values(env, func, 0, mu.c)
    return MeasureEvaluation(float(np.dot(mu.weights, vals)), SIGMA_N, func.name, mu.n,
                             env.seed)


@dataclass(frozen=True)
class HilbertDistance:
    """Windowed value and a bound on the unseen remainder."""

    value: float
    tail_bound: float

    @property
    def interval(self):
        return self.value, self.value + self.tail_bound


def hilbert_distance(env1, env2):
    """``sum_x 2^{-|x|} |omega(x) - omega'(x)|`` on the common window."""
    if env1.window != env2.window:
        raise DomainError(f"windows differ: {env1.window} vs {env2.window}")
    lo, hi = env1.window
    x = np.arange(lo, hi + 1)
    value = float(np.sum(np.ldexp(np.abs(env1.omega - env2.omega), -np.abs(x))))
    tail = float(np.ldexp(1.0, lo) + np.ldexp(1.0, -hi))
    return HilbertDistance(value, tail)


def r_kernel_expectation(env, func, x=0):
    """``RF(T_x omega) = omega(x) F(T_{x+1} omega) + (1 - omega(x)) F(T_{x-1} omega)``."""
    vals = site_values(env, func, x - 1, x + 1)
    p = env[x]
    return float(p * vals[2] + (1.0 - p) * vals[0])


def r_kernel_function(func):
    """``RF`` as a cylinder function of radius ``m + 1``."""
    m = func.radius

    def ev(w):
        p = w[:, m + 1]
        return p * func.evaluator(w[:, 2:]) + (1.0 - p) * func.evaluator(w[:, :-2])

    return CylinderFunction(f"R[{func.name}]", m + 1, ev, func.sup_bound, func.params)


def omega_plus_indicator(obj, atol=1e-9):
    """Finite-window proxy of the event that ``V >= 0`` on ``1..edge``.

    ``False`` is definitive; ``True`` only covers the window.  For an
    infinite-valley draw the lattice levels are checked exactly.
    """
    if isinstance(obj, InfiniteValleySample):
        return omega_plus_levels(obj)
    if not isinstance(obj, Environment):
        raise DomainError("expected an Environment or an InfiniteValleySample")
    if obj.x_max < 1:
        raise OutOfWindowError("window must contain x = 1", site=1)
    running = np.cumsum(obj.log_rho_values(1, obj.x_max))
    return bool(np.all(running >= -atol))
