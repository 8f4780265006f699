"""Random environments, the ratios rho and the potential V.

An environment is an i.i.d. field of site probabilities ``omega(x)``; the
walk at ``x > 0`` steps right with probability ``omega(x)``.  Windows are
materialized explicitly, and generator-backed environments can be widened
exactly because the value at ``x`` is a function of ``(seed, x)`` only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, OutOfWindowError
from .rng import site_uniforms

_WEIGHT_TOL = 1e-12
_MEAN_TOL = 1e-12
_SPAN_TOL = 1e-12
_MAX_SPAN_DIVISOR = 64


def _log_rho(p):
    return math.log((1.0 - p) / p)


def _infer_span(log_atoms):
    nonzero = [abs(v) for v in log_atoms if abs(v) > _SPAN_TOL]
    if not nonzero:
        return None
    base = min(nonzero)
    for k in range(1, _MAX_SPAN_DIVISOR + 1):
        h = base / k
        if all(abs(v / h - round(v / h)) * h <= _SPAN_TOL for v in log_atoms):
            return h
    return None


@dataclass(frozen=True)
class EnvironmentDistribution:
    """Law of a single site probability ``omega(0)``.

    Use :meth:`two_point` or :meth:`finite_support`; both validate the
    recurrence, non-degeneracy and ellipticity conditions and raise
    :class:`ConfigurationError` on failure.  ``span`` is the lattice step
    of ``log rho`` when the law is arithmetic, else ``None``.
    """

    kind: str
    atoms: tuple
    delta0: float
    a: float | None = None
    span: float | None = None
    _cum: np.ndarray = field(default=None, repr=False, compare=False)

    @classmethod
    def two_point(cls, a):
        a = float(a)
        if not 0.0 < a < 1.0:
            raise ConfigurationError(f"two_point parameter a={a} must lie in (0, 1)")
        if a == 0.5:
            raise ConfigurationError(
                "two_point(a=0.5) is degenerate: Var(log rho) = 0 violates Assumption 2(ii)"
            )
        lo = min(a, 1.0 - a)
        return cls._build("two_point", ((a, 0.5), (1.0 - a, 0.5)), lo, a=a,
                          span=abs(_log_rho(a)))

    @classmethod
    def finite_support(cls, atoms, delta0, span=None, require_arithmetic=True):
        """Distribution with finitely many atoms ``(value, weight)``.

        ``span`` may be declared; otherwise it is inferred.  With
        ``require_arithmetic=False`` a non-arithmetic law is accepted and
        ``span`` is ``None``.
        """
        atoms = tuple((float(v), float(w)) for v, w in atoms)
        if not atoms:
            raise ConfigurationError("finite_support needs at least one atom")
        if delta0 is None:
            raise ConfigurationError("finite_support must declare delta0 explicitly")
        delta0 = float(delta0)
        problems = validate_atoms(atoms, delta0)
        if problems:
            raise ConfigurationError("; ".join(problems))
        logs = [_log_rho(v) for v, _ in atoms]
        if span is not None:
            span = float(span)
            if span <= 0:
                raise ConfigurationError(f"declared span {span} must be positive")
            bad = [v for v in logs if abs(v / span - round(v / span)) * span > _SPAN_TOL]
            if bad:
                raise ConfigurationError(
                    f"log rho atoms {bad} are not multiples of the declared span {span} "
                    "(Assumption 3, arithmetic law)"
                )
        else:
            span = _infer_span(logs)
        if span is None and require_arithmetic:
            raise ConfigurationError(
                "distribution of log rho is not arithmetic (Assumption 3); "
                "only prop-main-i-only experiments accept it"
            )
        return cls._build("finite_support", atoms, delta0, span=span)

    @classmethod
    def _build(cls, kind, atoms, delta0, a=None, span=None):
        problems = validate_atoms(atoms, delta0)
        if problems:
            raise ConfigurationError("; ".join(problems))
        cum = np.cumsum([w for _, w in atoms])
        cum[-1] = 1.0
        return cls(kind, tuple(atoms), delta0, a=a, span=span, _cum=cum)

    @classmethod
    def from_config(cls, spec, require_arithmetic=True):
        if not isinstance(spec, dict) or "kind" not in spec:
            raise ConfigurationError("distribution must be an object with a 'kind' key")
        kind = spec["kind"]
        if kind == "two_point":
            if "a" not in spec:
                raise ConfigurationError("two_point distribution needs 'a'")
            return cls.two_point(spec["a"])
        if kind == "finite_support":
            if "atoms" not in spec:
                raise ConfigurationError("finite_support distribution needs 'atoms'")
            if "delta0" not in spec:
                raise ConfigurationError("finite_support must declare delta0 explicitly")
            return cls.finite_support(spec["atoms"], spec["delta0"], span=spec.get("span"),
                                      require_arithmetic=require_arithmetic)
        raise ConfigurationError(f"unknown distribution kind {kind!r}")

    def to_config(self):
        if self.kind == "two_point":
            return {"kind": "two_point", "a": self.a}
        out = {"kind": "finite_support", "atoms": [list(t) for t in self.atoms],
               "delta0": self.delta0}
        if self.span is not None:
            out["span"] = self.span
        return out

    @property
    def arithmetic(self):
        return self.span is not None

    @property
    def log_rho_atoms(self):
        if self.kind == "two_point":
            # exact antisymmetry; 1 - (1 - a) need not round back to a
            lr = _log_rho(self.a)
            return np.array([lr, -lr])
        return np.array([_log_rho(v) for v, _ in self.atoms])

    def log_rho_of(self, omega):
        """``log rho`` of sampled site values, read off the atom table."""
        omega = np.asarray(omega, dtype=np.float64)
        values = np.array([v for v, _ in self.atoms])
        order = np.argsort(values)
        pos = np.clip(np.searchsorted(values[order], omega), 0, values.size - 1)
        idx = order[pos]
        out = self.log_rho_atoms[idx]
        miss = values[idx] != omega
        if miss.any():
            out = np.where(miss, np.log((1.0 - omega) / omega), out)
        return out

    @property
    def weights(self):
        return np.array([w for _, w in self.atoms])

    def lattice_increments(self):
        """Right-side increments of V in span units, with probabilities."""
        if self.span is None:
            raise ConfigurationError("lattice increments need an arithmetic law")
        steps = {}
        for (v, w), lr in zip(self.atoms, self.log_rho_atoms):
            k = int(round(lr / self.span))
            steps[k] = steps.get(k, 0.0) + w
        ks = sorted(steps)
        return np.array(ks, dtype=np.int64), np.array([steps[k] for k in ks])

    def sample_omega(self, u):
        """Map uniforms in [0, 1) to site probabilities."""
        values = np.array([v for v, _ in self.atoms])
        idx = np.searchsorted(self._cum, u, side="right")
        return values[np.minimum(idx, len(values) - 1)]


def validate_atoms(atoms, delta0):
    """Return human-readable violations of the distribution invariants."""
    problems = []
    total = sum(w for _, w in atoms)
    if abs(total - 1.0) > _WEIGHT_TOL:
        problems.append(f"weights sum to {total!r}, not 1")
    if any(w < 0 for _, w in atoms):
        problems.append("negative weight")
    if not 0.0 < delta0 <= 0.5:
        problems.append(f"delta0={delta0} must lie in (0, 1/2]")
    for v, _ in atoms:
        if not delta0 - 1e-15 <= v <= 1.0 - delta0 + 1e-15:
            problems.append(
                f"atom {v} outside [delta0, 1-delta0] = [{delta0}, {1 - delta0}] (Assumption 2(i))"
            )
    if problems:
        return problems
    logs = [_log_rho(v) for v, _ in atoms]
    mean = sum(w * lr for (_, w), lr in zip(atoms, logs))
    if abs(mean) > _MEAN_TOL:
        problems.append(f"E[log rho] = {mean:.3e} != 0 (Assumption 1, recurrence)")
    var = sum(w * (lr - mean) ** 2 for (_, w), lr in zip(atoms, logs))
    if var <= 0.0:
        problems.append("Var(log rho) = 0: degenerate environment (Assumption 2(ii))")
    return problems


@dataclass(frozen=True)
class Environment:
    """Site probabilities on the integer window ``[x_min, x_max]``."""

    x_min: int
    omega: np.ndarray
    dist: EnvironmentDistribution | None = None
    seed: int | None = None

    def __post_init__(self):
        self.omega.setflags(write=False)

    @classmethod
    def from_values(cls, values, x_min=0, dist=None):
        """Hand-built environment; it cannot be widened."""
        arr = np.array(values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ConfigurationError("environment values must be a non-empty 1-d sequence")
        if np.any((arr <= 0.0) | (arr >= 1.0)):
            raise ConfigurationError("site probabilities must lie strictly inside (0, 1)")
        return cls(int(x_min), arr, dist=dist)

    @property
    def x_max(self):
        return self.x_min + self.omega.size - 1

    @property
    def window(self):
        return self.x_min, self.x_max

    def covers(self, lo, hi):
        return self.x_min <= lo and hi <= self.x_max

    def _check(self, lo, hi):
        if not self.covers(lo, hi):
            bad = lo if lo < self.x_min else hi
            raise OutOfWindowError(
                f"site {bad} outside environment window [{self.x_min}, {self.x_max}]", site=bad
            )

    def __getitem__(self, x):
        x = int(x)
        self._check(x, x)
        return float(self.omega[x - self.x_min])

    def values(self, lo, hi):
        """``omega(lo..hi)`` inclusive as a read-only array."""
        self._check(lo, hi)
        return self.omega[lo - self.x_min: hi - self.x_min + 1]

    def widen(self, lo, hi):
        """The same environment on ``[min(lo, x_min), max(hi, x_max)]``."""
        lo, hi = min(lo, self.x_min), max(hi, self.x_max)
        if (lo, hi) == self.window:
            return self
        if self.seed is None or self.dist is None:
            raise OutOfWindowError(
                f"hand-built environment on [{self.x_min}, {self.x_max}] cannot be widened "
                f"to [{lo}, {hi}]", site=lo if lo < self.x_min else hi
            )
        return sample_environment(self.dist, (lo, hi), self.seed)

    def log_rho_values(self, lo, hi):
        w = self.values(lo, hi)
        if self.dist is not None:
            return self.dist.log_rho_of(w)
        return np.log((1.0 - w) / w)


def sample_environment(dist, window, seed):
    """Materialize ``omega`` on ``window`` from the counter-based generator."""
    lo, hi = int(window[0]), int(window[1])
    if hi < lo:
        raise ConfigurationError(f"empty window [{lo}, {hi}]")
    if not lo <= 0 <= hi:
        raise ConfigurationError(f"window [{lo}, {hi}] must contain 0")
    if not isinstance(dist, EnvironmentDistribution):
        raise ConfigurationError("dist must be an EnvironmentDistribution")
    u = site_uniforms(seed, np.arange(lo, hi + 1, dtype=np.int64))
    return Environment(lo, dist.sample_omega(u), dist=dist, seed=int(seed))


def log_rho(env, x):
    """``log((1 - omega(x)) / omega(x))``."""
    return float(env.log_rho_values(x, x)[0])


@dataclass(frozen=True)
class Potential:
    """``V`` on ``[x_min, x_max]`` with ``V(0) = 0``."""

    x_min: int
    values: np.ndarray

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def x_max(self):
        return self.x_min + self.values.size - 1

    def __getitem__(self, x):
        x = int(x)
        if not self.x_min <= x <= self.x_max:
            raise OutOfWindowError(
                f"site {x} outside potential window [{self.x_min}, {self.x_max}]", site=x
            )
        return float(self.values[x - self.x_min])

    def segment(self, lo, hi):
        if lo < self.x_min or hi > self.x_max:
            bad = lo if lo < self.x_min else hi
            raise OutOfWindowError(
                f"site {bad} outside potential window [{self.x_min}, {self.x_max}]", site=bad
            )
        return self.values[lo - self.x_min: hi - self.x_min + 1]

    @classmethod
    def from_values(cls, values, x_min=0):
        arr = np.array(values, dtype=np.float64)
        if not x_min <= 0 < x_min + arr.size or arr[-x_min] != 0.0:
            raise ConfigurationError("potential must contain x=0 with V(0)=0")
        return cls(int(x_min), arr)


def potential(env):
    """Cumulative sums of ``log rho`` anchored at ``V(0) = 0``.

    For arithmetic laws the sums are accumulated in integer lattice units,
    so ties between sites are exact.
    """
    lo, hi = env.window
    lr = env.log_rho_values(lo, hi)
    dist = env.dist
    if dist is not None and dist.span is not None:
        steps = np.rint(lr / dist.span).astype(np.int64)
        levels = _anchored_cumsum(steps, lo)
        values = levels.astype(np.float64) * dist.span
    else:
        values = _anchored_cumsum(lr, lo)
    return Potential(lo, values)


def _anchored_cumsum(steps, lo):
    # steps[i] is the increment V(x) - V(x-1) at x = lo + i
    zero = -lo
    out = np.zeros(steps.size, dtype=steps.dtype)
    out[zero + 1:] = np.cumsum(steps[zero + 1:])
    if zero > 0:
        # V(x) = -(log rho_{x+1} + ... + log rho_0) for x < 0
        out[:zero] = -np.cumsum(steps[1:zero + 1][::-1])[::-1]
    return out
