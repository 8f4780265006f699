"""Named Monte Carlo experiments, the replication harness and two-sample statistics.

Every experiment is a pure function of its resolved configuration.
Replicate ``i`` draws all of its randomness from ``derive_seed(seed, i)``
(split further by stream tag), so results do not depend on how many
worker processes share the replicates.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from . import _kernels
from .environment import EnvironmentDistribution, sample_environment
from .errors import (ConfigurationError, DomainError, OracleInfeasibleError, OutOfWindowError,
                     TruncationError)
from .infinite_valley import s_infty_eval, sample_tilde_v_htransform, tilde_environment
from .measures import function_from_config, make_function, omega_plus_indicator, s_n_eval, \
    sigma_n_eval
from .rng import ENV, EXCURSION, MIXTURE, WALK, derive_seed, generator
from .valley import mu_n, valley_for
from .walk import DEFAULT_WINDOW_C, default_window, hitting_probability, start_walk

log = logging.getLogger(__name__)

# replicate-level errors that count against the failure budget
RECOVERABLE = (OutOfWindowError, TruncationError, OracleInfeasibleError)

# measure values are weighted sums; atoms of their laws come out with ulp noise
KS_RESOLUTION = 1e-12


# --------------------------------------------------------------------------
# two-sample statistics

@dataclass(frozen=True)
class DistributionSample:
    """Sorted values with the replicate index each value came from."""

    values: np.ndarray
    replicates: np.ndarray

    @classmethod
    def from_values(cls, values, replicates=None):
        v = np.asarray(values, dtype=np.float64).ravel()
        r = np.arange(v.size) if replicates is None else np.asarray(replicates).ravel()
        if r.size != v.size:
            raise DomainError("values and replicate indices differ in length")
        order = np.argsort(v, kind="stable")
        return cls(v[order], r[order])

    def __len__(self):
        return self.values.size


def _sorted(sample):
    if isinstance(sample, DistributionSample):
        v = sample.values
    else:
        v = np.sort(np.asarray(sample, dtype=np.float64).ravel())
    if v.size == 0:
        raise DomainError("empty sample")
    if np.isnan(v).any():
        raise DomainError("sample contains NaN")
    return v


def ks_two_sample(a, b, resolution=0.0):
    """Sup distance between the two empirical CDFs.

    Both CDFs are evaluated at every pooled observation, which is where
    the supremum is attained; ties are handled by right-continuity.  With
    ``resolution > 0`` values are first rounded to that grid, so that
    rounding noise does not split atoms.
    """
    x, y = _sorted(a), _sorted(b)
    if resolution > 0:
        x = np.round(x / resolution) * resolution
        y = np.round(y / resolution) * resolution
    grid = np.concatenate((x, y))
    fx = np.searchsorted(x, grid, side="right") / x.size
    fy = np.searchsorted(y, grid, side="right") / y.size
    return float(np.max(np.abs(fx - fy)))


def wasserstein1(a, b):
    """``(1/R) sum_i |a_(i) - b_(i)|`` for equal-length samples."""
    x, y = _sorted(a), _sorted(b)
    if x.size != y.size:
        raise DomainError(f"wasserstein1 needs equal lengths, got {x.size} and {y.size}")
    return float(np.mean(np.abs(x - y)))


def monotone(seq, increasing=False, tol=0.0, inversions=0, max_inversion=0.0):
    """Trend check over a grid.

    Steps against the trend of size at most ``tol`` are ignored.  Up to
    ``inversions`` larger steps are allowed if none exceeds
    ``tol + max_inversion``.
    """
    s = np.asarray(seq, dtype=np.float64)
    if s.size < 2:
        return True
    d = np.diff(s)
    against = -d if increasing else d
    bad = against[against > tol]
    return bool(bad.size <= inversions and np.all(bad <= tol + max_inversion))


# --------------------------------------------------------------------------
# configuration

EXPERIMENTS = ("theorem1", "deviation", "lln", "clt", "growth", "excursion_variance")

GRID = [1000, 10_000, 100_000, 1_000_000]
TEMKIN = {"kind": "two_point", "a": 0.3}
# non-degenerate law for the variance test function (under two_point every
# omega(1 - omega) is the same constant)
THREE_POINT = {"kind": "finite_support", "atoms": [[0.2, 0.4], [0.5, 0.2], [0.8, 0.4]],
               "delta0": 0.2}

COMMON = {
    "distribution": TEMKIN,
    "horizons": GRID,
    "replicates": 200,
    "seed": 20240601,
    "function": "center",
    "failure_budget": 0.01,
    "window_c": DEFAULT_WINDOW_C,
    "quenched": False,
    "output": "out",
    "tolerances": {},
    "params": {},
}

DEFAULTS = {
    "theorem1": {
        "distribution": THREE_POINT, "replicates": 1000, "function": "variance",
        "tolerances": {"inversion": 0.02, "min_drop": 0.05},
        "params": {"include_s_n": True},
    },
    "deviation": {
        "function": "center",
        "tolerances": {"eps": 0.1, "factor": 2.0, "floor": 0.02},
    },
    "lln": {
        "tolerances": {"eps": 0.05, "max_prob": 0.05},
        "params": {"f_up": 1.0, "f_down": 0.0},
    },
    "clt": {
        "horizons": [100_000], "replicates": 2000,
        "tolerances": {"ks_max": 0.08},
        "params": {"f_up": 1.0, "f_down": 0.0},
    },
    "growth": {
        "horizons": [10_000, 100_000], "replicates": 500,
        "tolerances": {"target": 0.95},
        "params": {"eta_exp": 0.3, "delta": 0.5, "K": [1, 2, 4, 8, 16, 32],
                   "left_eta": 0.3, "left_delta": 1.0, "prop_main_i_only": False},
    },
    "excursion_variance": {
        "horizons": [10_000, 100_000, 1_000_000], "replicates": 500,
        "tolerances": {"max_quantile": 0.95, "noise": 0.03, "se": 3.0},
        "params": {"q": 0.9, "spot_check": True, "excursions": 10_000, "spot_x": None,
                   "max_steps": 10_000_000},
    },
}

_NOT_HASHED = ("output",)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    distribution: dict
    horizons: tuple
    replicates: int
    seed: int
    function: object
    tolerances: dict
    params: dict
    failure_budget: float = 0.01
    window_c: float = DEFAULT_WINDOW_C
    quenched: bool = False
    output: str = "out"

    def to_dict(self):
        return {
            "experiment": self.experiment,
            "distribution": copy.deepcopy(self.distribution),
            "horizons": list(self.horizons),
            "replicates": self.replicates,
            "seed": self.seed,
            "function": copy.deepcopy(self.function),
            "tolerances": dict(self.tolerances),
            "params": copy.deepcopy(self.params),
            "failure_budget": self.failure_budget,
            "window_c": self.window_c,
            "quenched": self.quenched,
            "output": self.output,
        }

    @property
    def config_hash(self):
        return config_hash(self.to_dict())

    def dist(self):
        return EnvironmentDistribution.from_config(self.distribution,
                                                   require_arithmetic=self.needs_arithmetic)

    def func(self):
        return function_from_config(self.function)

    @property
    def needs_arithmetic(self):
        return not (self.experiment == "growth" and self.params.get("prop_main_i_only"))


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(resolved):
    """Stable digest of a resolved config (the output location is excluded)."""
    body = {k: v for k, v in resolved.items() if k not in _NOT_HASHED}
    return hashlib.sha256(canonical_json(body).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Diagnostic:
    key: str
    message: str

    def __str__(self):
        return f"{self.key}: {self.message}"


def _merge(raw):
    name = raw.get("experiment")
    spec = DEFAULTS.get(name, {})
    merged = copy.deepcopy(COMMON)
    for k, v in copy.deepcopy(spec).items():
        merged[k] = v
    for k, v in raw.items():
        if k in ("tolerances", "params") and isinstance(v, dict):
            merged[k] = {**merged[k], **copy.deepcopy(v)}
        else:
            merged[k] = copy.deepcopy(v)
    return merged


def defaults_for(name):
    """Default config of experiment ``name`` (common keys included)."""
    return _merge({"experiment": name}) if name in EXPERIMENTS else copy.deepcopy(COMMON)


def _as_int(v):
    if isinstance(v, bool):
        raise ValueError
    if isinstance(v, float):
        if not v.is_integer():
            raise ValueError
        return int(v)
    return int(v)


def check_config(raw):
    """Resolve defaults and validate without running anything.

    Returns ``(resolved dict or None, list of Diagnostic)``.
    """
    diags = []
    if not isinstance(raw, dict):
        return None, [Diagnostic("<root>", "config must be an object")]
    name = raw.get("experiment")
    if name not in EXPERIMENTS:
        diags.append(Diagnostic("experiment",
                                f"unknown experiment {name!r}; expected one of {list(EXPERIMENTS)}"))
        return None, diags
    known = set(COMMON) | {"experiment"}
    for k in raw:
        if k not in known:
            diags.append(Diagnostic(k, "unknown key"))
    m = _merge(raw)

    try:
        hz = m["horizons"]
        hz = [hz] if not isinstance(hz, list) else hz
        hz = [_as_int(h) for h in hz]
        if not hz or any(h < 1 for h in hz):
            raise ValueError
        if any(b <= a for a, b in zip(hz, hz[1:])):
            diags.append(Diagnostic("horizons", "horizons must be strictly increasing"))
        m["horizons"] = hz
    except (TypeError, ValueError):
        diags.append(Diagnostic("horizons", "horizons must be a non-empty list of integers >= 1"))

    for key, lo in (("replicates", 2), ("seed", 0)):
        try:
            m[key] = _as_int(m[key])
            if m[key] < lo or m[key] >= 1 << 64:
                raise ValueError
        except (TypeError, ValueError):
            diags.append(Diagnostic(key, f"must be an integer >= {lo}"))

    fb = m["failure_budget"]
    if isinstance(fb, bool) or not isinstance(fb, (int, float)) or not 0 <= fb < 1:
        diags.append(Diagnostic("failure_budget", "must be a number in [0, 1)"))
    wc = m["window_c"]
    if isinstance(wc, bool) or not isinstance(wc, (int, float)) or not wc > 0:
        diags.append(Diagnostic("window_c", "must be a positive number"))
    if not isinstance(m["quenched"], bool):
        diags.append(Diagnostic("quenched", "must be true or false"))
    if not isinstance(m["output"], str):
        diags.append(Diagnostic("output", "must be a path string"))

    if not isinstance(m["tolerances"], dict):
        diags.append(Diagnostic("tolerances", "must be an object"))
    else:
        for k, v in m["tolerances"].items():
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
                diags.append(Diagnostic(f"tolerances.{k}", "tolerances must be positive numbers"))
        unknown = set(m["tolerances"]) - set(DEFAULTS[name].get("tolerances", {}))
        for k in sorted(unknown):
            diags.append(Diagnostic(f"tolerances.{k}", f"not used by {name}"))
    if not isinstance(m["params"], dict):
        diags.append(Diagnostic("params", "must be an object"))
    else:
        unknown = set(m["params"]) - set(DEFAULTS[name].get("params", {}))
        for k in sorted(unknown):
            diags.append(Diagnostic(f"params.{k}", f"not used by {name}"))
        diags.extend(_check_params(name, m["params"]))

    arithmetic = not (name == "growth" and isinstance(m["params"], dict)
                      and m["params"].get("prop_main_i_only"))
    try:
        d = EnvironmentDistribution.from_config(m["distribution"], require_arithmetic=arithmetic)
        m["distribution"] = d.to_config()
    except ConfigurationError as exc:
        msg = str(exc)
        if "Assumption 3" in msg:
            msg += f"; the {name} experiment requires it"
        diags.append(Diagnostic("distribution", msg))
    try:
        f = function_from_config(m["function"])
        m["function"] = f.name if not f.params else f.to_config()
    except ConfigurationError as exc:
        diags.append(Diagnostic("function", str(exc)))
    except TypeError as exc:
        diags.append(Diagnostic("function", f"bad parameters: {exc}"))

    return (None if diags else m), diags


def _check_params(name, p):
    out = []

    def num(key, lo=None, hi=None, open_hi=False):
        v = p.get(key)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            out.append(Diagnostic(f"params.{key}", "must be a number"))
            return
        if lo is not None and not v > lo:
            out.append(Diagnostic(f"params.{key}", f"must be > {lo}"))
        if hi is not None and not (v < hi if open_hi else v <= hi):
            out.append(Diagnostic(f"params.{key}", f"must be {'<' if open_hi else '<='} {hi}"))

    if name in ("lln", "clt"):
        num("f_up")
        num("f_down")
    elif name == "growth":
        num("eta_exp", 0.0, 0.5, open_hi=True)
        num("delta", 0.0)
        num("left_eta", 0.0, 1.0 / 3.0, open_hi=True)
        num("left_delta", 0.0)
        ks = p.get("K")
        if (not isinstance(ks, list) or not ks
                or any(isinstance(k, bool) or not isinstance(k, int) or k < 1 for k in ks)
                or any(b <= a for a, b in zip(ks, ks[1:]))):
            out.append(Diagnostic("params.K", "must be a strictly increasing list of integers >= 1"))
        if not isinstance(p.get("prop_main_i_only"), bool):
            out.append(Diagnostic("params.prop_main_i_only", "must be true or false"))
    elif name == "excursion_variance":
        num("q", 0.0, 1.0, open_hi=True)
        for key in ("excursions", "max_steps"):
            v = p.get(key)
            if isinstance(v, bool) or not isinstance(v, int) or v < 2:
                out.append(Diagnostic(f"params.{key}", "must be an integer >= 2"))
        sx = p.get("spot_x")
        if sx is not None and (isinstance(sx, bool) or not isinstance(sx, int) or sx == 0):
            out.append(Diagnostic("params.spot_x", "must be null or a non-zero integer offset"))
        if not isinstance(p.get("spot_check"), bool):
            out.append(Diagnostic("params.spot_check", "must be true or false"))
    elif name == "theorem1":
        if not isinstance(p.get("include_s_n"), bool):
            out.append(Diagnostic("params.include_s_n", "must be true or false"))
    return out


def resolve_config(raw):
    """Validated :class:`ExperimentConfig`; raises :class:`ConfigurationError`."""
    m, diags = check_config(raw)
    if diags:
        raise ConfigurationError("; ".join(str(d) for d in diags))
    return ExperimentConfig(
        experiment=m["experiment"], distribution=m["distribution"],
        horizons=tuple(m["horizons"]), replicates=m["replicates"], seed=m["seed"],
        function=m["function"], tolerances=dict(m["tolerances"]), params=dict(m["params"]),
        failure_budget=float(m["failure_budget"]), window_c=float(m["window_c"]),
        quenched=m["quenched"], output=m["output"],
    )


# --------------------------------------------------------------------------
# replication harness

@dataclass(frozen=True)
class ReplicationResult:
    """Per-replicate outputs in index order; failed replicates hold ``None``."""

    values: list
    failures: list
    budget: float

    @property
    def replicates(self):
        return len(self.values)

    @property
    def ok(self):
        return [i for i, v in enumerate(self.values) if v is not None]

    @property
    def failure_rate(self):
        return len(self.failures) / max(1, self.replicates)

    @property
    def within_budget(self):
        return self.failure_rate <= self.budget if self.failures else True

    def summary(self):
        return {"count": len(self.failures), "rate": self.failure_rate, "budget": self.budget,
                "within_budget": self.within_budget, "items": self.failures}


def _guarded(task, master, i):
    try:
        return i, task(i, derive_seed(master, i)), None
    except RECOVERABLE as exc:
        return i, None, {"replicate": i, "error": type(exc).__name__, "message": str(exc)}


def default_jobs():
    return os.cpu_count() or 1


def run_replications(task, R, master_seed, jobs=1, failure_budget=0.01):
    """Run ``task(i, derive_seed(master_seed, i))`` for ``i < R``.

    ``task`` must be picklable when ``jobs > 1``.  Window exhaustion,
    truncation and oracle starvation are caught per replicate and reported;
    any other exception propagates.
    """
    if R < 1:
        raise DomainError("need at least one replicate")
    values = [None] * R
    failures = []
    run = partial(_guarded, task, master_seed)
    if jobs is None or jobs <= 1 or R == 1:
        results = map(run, range(R))
        for i, v, err in results:
            values[i] = v
            if err:
                failures.append(err)
    else:
        chunk = max(1, R // (jobs * 8))
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for i, v, err in pool.map(run, range(R), chunksize=chunk):
                values[i] = v
                if err:
                    failures.append(err)
    failures.sort(key=lambda f: f["replicate"])
    for f in failures:
        log.warning("replicate %d failed: %s: %s", f["replicate"], f["error"], f["message"])
    return ReplicationResult(values, failures, failure_budget)


# --------------------------------------------------------------------------
# per-replicate tasks

def _seeds(cfg, s):
    env_seed = derive_seed(cfg.seed, ENV) if cfg.quenched else derive_seed(s, ENV)
    return env_seed, derive_seed(s, WALK)


def _cover(env, hi):
    if env.x_max >= hi:
        return env
    return env.widen(env.x_min, max(hi, 2 * env.x_max + 1))


def _widest(a, b):
    return a if a.x_max >= b.x_max else b


def _trace(cfg, s, func, walk=True, valley=True):
    """Walk and/or valley quantities of one replicate at every horizon.

    The environment and the walk are shared across horizons: the walk is
    advanced from one horizon to the next.
    """
    dist = cfg.dist()
    env_seed, walk_seed = _seeds(cfg, s)
    m = func.radius if func is not None else 1
    env = sample_environment(dist, default_window(cfg.horizons[-1], cfg.window_c, m), env_seed)
    state = start_walk(env, walk_seed) if walk else None
    out = {}

    def put(key, value):
        out.setdefault(key, []).append(value)

    for n in cfg.horizons:
        if state is not None:
            state.advance(n)
            env = _widest(env, state.env)
            put("ups", state.up_steps)
            put("cond_up", state.conditional_up_sum)
            if func is not None:
                lt = state.local_times()
                env = _cover(env, lt.support_max + m)
                put("S_n", s_n_eval(lt, env, func).value)
        if valley:
            env, pot, val = valley_for(env, n)
            put("b_n", val.b)
            put("c_n", val.c)
            put("V_b_n", pot[val.b])
            if func is not None:
                env = _cover(env, val.c + m)
                mu = mu_n(pot, val)
                put("Z_n", mu.z)
                put("Sigma_n", sigma_n_eval(mu, env, func).value)
            out.setdefault("_valleys", []).append((pot, val))
    return out


def _theorem1_task(cfg, i, s):
    func = cfg.func()
    out = _trace(cfg, s, func, walk=cfg.params["include_s_n"])
    out.pop("_valleys")
    iv = sample_tilde_v_htransform(cfg.dist(), seed=derive_seed(s, MIXTURE))
    out["S_infty"] = s_infty_eval(iv, func)
    return out


def _deviation_task(cfg, i, s):
    out = _trace(cfg, s, cfg.func())
    out.pop("_valleys")
    out["deviation"] = [abs(a - b) for a, b in zip(out["S_n"], out["Sigma_n"])]
    return out


def _step_average(cfg, ups, n):
    fu, fd = cfg.params["f_up"], cfg.params["f_down"]
    return (fu * ups + fd * (n - ups)) / n


def _lln_task(cfg, i, s):
    out = _trace(cfg, s, None, valley=False)
    out["average"] = [_step_average(cfg, u, n) for u, n in zip(out["ups"], cfg.horizons)]
    return out


def _clt_task(cfg, i, s):
    out = _trace(cfg, s, None, valley=False)
    diff = cfg.params["f_up"] - cfg.params["f_down"]
    out["Z_n"] = [diff * (u - c) / math.sqrt(n)
                  for u, c, n in zip(out["ups"], out["cond_up"], cfg.horizons)]
    if diff == 0.0:
        eta = 0.0
    else:
        iv = sample_tilde_v_htransform(cfg.dist(), seed=derive_seed(s, MIXTURE))
        eta = abs(diff) * math.sqrt(s_infty_eval(iv, make_function("variance")))
    out["eta"] = eta
    out["mixture"] = eta * float(generator(s, MIXTURE, 1).standard_normal()) + 0.0
    return out


def growth_events(pot, val, ks, eta, delta, left_eta=None, left_delta=None):
    """Indicators of the right (and optionally left) growth events per ``K``.

    Right: ``V(b+x) - V(b) >= delta x^eta`` for all ``x`` in ``[K, c - b]``.
    Left: ``V(b-x) - V(b) >= left_delta x^left_eta`` for ``x`` in ``[K, b]``.
    Empty ranges give ``True``.
    """
    b, c = val.b, val.c
    v = pot.segment(0, c)
    x = np.arange(c - b + 1)
    ok = (v[b:] - v[b]) >= delta * x.astype(float) ** eta
    # bad[k]: some x >= k violates the bound
    bad_from = np.logical_or.accumulate((~ok)[::-1])[::-1]
    right = [not (K <= c - b and bad_from[K]) for K in ks]
    if left_eta is None:
        return right, None
    xl = np.arange(b + 1)
    okl = (v[b::-1] - v[b]) >= left_delta * xl.astype(float) ** left_eta
    badl = np.logical_or.accumulate((~okl)[::-1])[::-1]
    left = [not (K <= b and badl[K]) for K in ks]
    return right, left


def _growth_task(cfg, i, s):
    p = cfg.params
    out = _trace(cfg, s, None, walk=False)
    with_left = cfg.dist().arithmetic and not p["prop_main_i_only"]
    for pot, val in out.pop("_valleys"):
        r, l_ = growth_events(pot, val, p["K"], p["eta_exp"], p["delta"],
                              p["left_eta"] if with_left else None, p["left_delta"])
        out.setdefault("right", []).append(r)
        if l_ is not None:
            out.setdefault("left", []).append(l_)
    return out


def log_a_max(pot, val):
    """``log max_x A(x)`` over ``x`` in ``[-b, c - b]``, ``x != 0``.

    For ``x > 0``: ``A(x) = sum_{j=b}^{b+x-1} exp(V(j) - V(b+x-1))``;
    for ``x < 0``: ``A(x) = sum_{j=b+x}^{b-1} exp(V(j) - V(b+x))``.
    """
    b, c = val.b, val.c
    v = pot.segment(0, c)
    right = v[b:c]
    best = float(np.max(np.logaddexp.accumulate(right) - right))
    if b > 0:
        left = v[:b][::-1]
        best = max(best, float(np.max(np.logaddexp.accumulate(left) - left)))
    return best


def a_profile(pot, val):
    """``A(x)`` for every ``x`` in ``[-b, c - b]`` (``nan`` at ``x = 0``)."""
    b, c = val.b, val.c
    v = pot.segment(0, c)
    out = np.full(c + 1, np.nan)
    right = v[b:c]
    out[b + 1:] = np.exp(np.logaddexp.accumulate(right) - right)
    if b > 0:
        left = v[:b][::-1]
        out[:b] = np.exp(np.logaddexp.accumulate(left) - left)[::-1]
    return out


def max_drop(pot, val):
    """Largest fall of ``V`` inside the valley, relative to the depth ``L_n``.

    Right of ``b``: ``max V(u) - V(v)`` over ``b <= u <= v <= c``; left:
    the same over ``0 <= v <= u <= b``.  This is the quantity whose limit
    law is below 1 a.s.; ``log A`` adds ``O(log c_n)`` to it.
    """
    b, c = val.b, val.c
    v = pot.segment(0, c)
    right = v[b:]
    drop = float(np.max(np.maximum.accumulate(right) - right))
    left = v[: b + 1]
    drop = max(drop, float(np.max(left - np.minimum.accumulate(left))))
    return drop / val.depth


def _excursion_task(cfg, i, s):
    out = _trace(cfg, s, None, walk=False)
    valleys = out.pop("_valleys")
    out["ratio"] = [log_a_max(pot, val) / math.log(n)
                    for (pot, val), n in zip(valleys, cfg.horizons)]
    out["drop"] = [max_drop(pot, val) for pot, val in valleys]
    return out


TASKS = {
    "theorem1": _theorem1_task,
    "deviation": _deviation_task,
    "lln": _lln_task,
    "clt": _clt_task,
    "growth": _growth_task,
    "excursion_variance": _excursion_task,
}


def _bound_task(cfg, i, s):
    return TASKS[cfg.experiment](cfg, i, s)


# --------------------------------------------------------------------------
# reports

@dataclass
class ExperimentResult:
    report: dict
    data: list = field(default_factory=list)  # (experiment, series, n, replicate, value)

    @property
    def passed(self):
        return self.report["passed"]


def _verdict(ok, detail):
    return {"pass": bool(ok), "detail": detail}


def _series(reps, key, k=None):
    """Values of ``key`` (at horizon index ``k``) with their replicate indices."""
    idx = [i for i, v in enumerate(reps.values) if v is not None]
    vals = [reps.values[i][key] if k is None else reps.values[i][key][k] for i in idx]
    return np.array(vals, dtype=np.float64), np.array(idx)


def _rows_for(data, cfg, reps, key, per_n=True):
    for i in reps.ok:
        v = reps.values[i][key]
        if per_n:
            for n, x in zip(cfg.horizons, v):
                data.append((cfg.experiment, key, n, i, x))
        else:
            data.append((cfg.experiment, key, "", i, v))


def _valley_rows(data, cfg, reps):
    for key in ("b_n", "c_n", "V_b_n", "Z_n"):
        if reps.ok and key in reps.values[reps.ok[0]]:
            _rows_for(data, cfg, reps, key)


def _report_theorem1(cfg, reps):
    t = cfg.tolerances
    inf, _ = _series(reps, "S_infty")
    rows = []
    with_sn = cfg.params["include_s_n"]
    for k, n in enumerate(cfg.horizons):
        sig, _ = _series(reps, "Sigma_n", k)
        row = {"n": n, "ks_Sigma_n": ks_two_sample(sig, inf, KS_RESOLUTION),
               "w1_Sigma_n": wasserstein1(sig, inf),
               "mean_Sigma_n": float(sig.mean()), "mean_S_infty": float(inf.mean())}
        if with_sn:
            sn, _ = _series(reps, "S_n", k)
            row.update(ks_S_n=ks_two_sample(sn, inf, KS_RESOLUTION), w1_S_n=wasserstein1(sn, inf),
                       mean_S_n=float(sn.mean()))
        rows.append(row)

    def trend(col):
        ks = [r[col] for r in rows]
        shape = monotone(ks, inversions=1, max_inversion=t["inversion"])
        drop = ks[-1] <= ks[0] - t["min_drop"]
        return shape and drop, (f"{col}: {['%.4f' % x for x in ks]}; one inversion <= "
                                f"{t['inversion']} allowed; last <= first - {t['min_drop']}: {drop}")

    verdicts = {"Sigma_n_trend": _verdict(*trend("ks_Sigma_n"))}
    info = {}
    if with_sn:
        ok, detail = trend("ks_S_n")
        info["S_n_trend"] = _verdict(ok, detail)
    data = []
    _rows_for(data, cfg, reps, "Sigma_n")
    if with_sn:
        _rows_for(data, cfg, reps, "S_n")
    _rows_for(data, cfg, reps, "S_infty", per_n=False)
    _valley_rows(data, cfg, reps)
    return rows, verdicts, info, data


def _report_deviation(cfg, reps):
    t = cfg.tolerances
    rows = []
    for k, n in enumerate(cfg.horizons):
        dev, _ = _series(reps, "deviation", k)
        rows.append({"n": n, "prob_exceed": float(np.mean(dev > t["eps"])),
                     "mean_deviation": float(dev.mean()), "max_deviation": float(dev.max())})
    probs = [r["prob_exceed"] for r in rows]
    shape = monotone(probs)
    first, last = probs[0], probs[-1]
    end = last <= t["floor"] or (last < first and last <= first / t["factor"])
    verdicts = {"decreasing": _verdict(shape and end,
                                       f"P(|S_n - Sigma_n| > {t['eps']}) = {probs}; "
                                       f"last <= first/{t['factor']} or <= {t['floor']}: {end}")}
    data = []
    for key in ("S_n", "Sigma_n", "deviation"):
        _rows_for(data, cfg, reps, key)
    _valley_rows(data, cfg, reps)
    return rows, verdicts, {}, data


def _report_lln(cfg, reps):
    t, p = cfg.tolerances, cfg.params
    limit = (p["f_up"] + p["f_down"]) / 2.0
    rows = []
    for k, n in enumerate(cfg.horizons):
        avg, _ = _series(reps, "average", k)
        rows.append({"n": n, "limit": limit, "mean": float(avg.mean()),
                     "prob_exceed": float(np.mean(np.abs(avg - limit) > t["eps"]))})
    probs = [r["prob_exceed"] for r in rows]
    ok = monotone(probs) and probs[-1] <= t["max_prob"]
    verdicts = {"lln": _verdict(ok, f"P(|mean - {limit}| > {t['eps']}) = {probs}; "
                                    f"last <= {t['max_prob']}")}
    data = []
    _rows_for(data, cfg, reps, "average")
    return rows, verdicts, {}, data


def _report_clt(cfg, reps):
    t = cfg.tolerances
    mix, _ = _series(reps, "mixture")
    eta, _ = _series(reps, "eta")
    rows = []
    for k, n in enumerate(cfg.horizons):
        z, _ = _series(reps, "Z_n", k)
        rows.append({"n": n, "ks": ks_two_sample(z, mix), "w1": wasserstein1(z, mix),
                     "var_Z_n": float(z.var()), "mean_eta_sq": float(np.mean(eta ** 2))})
    ok = all(r["ks"] <= t["ks_max"] for r in rows)
    verdicts = {"ks": _verdict(ok, f"KS = {[round(r['ks'], 4) for r in rows]} <= {t['ks_max']}")}
    data = []
    _rows_for(data, cfg, reps, "Z_n")
    _rows_for(data, cfg, reps, "mixture", per_n=False)
    _rows_for(data, cfg, reps, "eta", per_n=False)
    return rows, verdicts, {}, data


def _report_growth(cfg, reps):
    t, p = cfg.tolerances, cfg.params
    ks = p["K"]
    has_left = bool(reps.ok) and "left" in reps.values[reps.ok[0]]
    rows = []
    ok = True
    details = []
    for k, n in enumerate(cfg.horizons):
        r = np.array([reps.values[i]["right"][k] for i in reps.ok], dtype=float)
        pr = r.mean(axis=0)
        pl = None
        if has_left:
            pl = np.array([reps.values[i]["left"][k] for i in reps.ok], dtype=float).mean(axis=0)
        for j, K in enumerate(ks):
            row = {"n": n, "K": K, "prob_right": float(pr[j])}
            if pl is not None:
                row["prob_left"] = float(pl[j])
            rows.append(row)
        good = monotone(pr, increasing=True) and pr[-1] >= t["target"]
        ok &= good
        details.append(f"n={n}: {[round(float(x), 3) for x in pr]}")
    verdicts = {"right_event": _verdict(ok, "; ".join(details) +
                                        f"; non-decreasing in K and >= {t['target']} at K={ks[-1]}")}
    info = {}
    if has_left:
        last = [r["prob_left"] for r in rows if r["K"] == ks[-1]]
        info["left_event"] = _verdict(all(x >= t["target"] for x in last),
                                      f"left-side probabilities at K={ks[-1]}: {last}")
    data = []
    for i in reps.ok:
        for k, n in enumerate(cfg.horizons):
            for j, K in enumerate(ks):
                data.append((cfg.experiment, f"right_K{K}", n, i, int(reps.values[i]["right"][k][j])))
                if has_left:
                    data.append((cfg.experiment, f"left_K{K}", n, i,
                                 int(reps.values[i]["left"][k][j])))
    _valley_rows(data, cfg, reps)
    return rows, verdicts, info, data


def variance_spot_check(env, pot, val, x, excursions, seed, max_steps=10_000_000, se=3.0):
    """Compare the sample variance of the local time at ``x`` per excursion
    from ``b`` with ``4 / beta(x)``.

    The chain is reflected at 0 and ``c``.  Returns a dict with the
    sample variance, its standard error, the bound and the verdict.
    """
    b, c = val.b, val.c
    if not 0 <= x <= c or x == b:
        raise DomainError(f"spot site {x} must lie in [0, {c}] and differ from b = {b}")
    om = np.array(env.values(0, c), dtype=np.float64)
    om[0], om[c] = 1.0, 0.0
    if x > b:
        beta = (1.0 - om[x]) * hitting_probability(pot, x - 1, b, x, target="left")
    else:
        beta = om[x] * hitting_probability(pot, x + 1, x, b, target="right")
    gen = generator(seed, EXCURSION)
    visits, lengths = _kernels.excursion_visits(om, c, b, x, gen, excursions, max_steps)
    done = lengths >= 0
    y = visits[done].astype(np.float64)
    var = float(y.var(ddof=1))
    m4 = float(np.mean((y - y.mean()) ** 4))
    stderr = math.sqrt(max(m4 - var ** 2, 0.0) / y.size)
    bound = 4.0 / beta
    return {"site": int(x), "offset": int(x - b), "b_n": b, "c_n": c, "beta": beta,
            "bound": bound, "sample_variance": var, "stderr": stderr,
            "censored": int((~done).sum()), "excursions": int(excursions),
            "pass": bool(var <= bound + se * stderr)}


def _report_excursion(cfg, reps):
    t, p = cfg.tolerances, cfg.params
    rows = []
    for k, n in enumerate(cfg.horizons):
        r, _ = _series(reps, "ratio", k)
        d, _ = _series(reps, "drop", k)
        rows.append({"n": n, "quantile": float(np.quantile(r, p["q"])),
                     "median": float(np.median(r)), "max": float(r.max()),
                     "drop_quantile": float(np.quantile(d, p["q"])), "drop_max": float(d.max())})
    qs = [r["quantile"] for r in rows]
    below = all(x <= t["max_quantile"] for x in qs)
    shape = monotone(qs, tol=t["noise"])
    delta_emp = 1.0 - max(qs)
    verdicts = {"quantile": _verdict(below and shape,
                                     f"{p['q']}-quantile of log M_n / log n = "
                                     f"{[round(x, 4) for x in qs]}; each <= {t['max_quantile']}: "
                                     f"{below}; non-increasing within {t['noise']}: {shape}; "
                                     f"fitted delta = {delta_emp:.4f}")}
    extra = {"delta_emp": delta_emp}
    if p["spot_check"]:
        spot = _spot_check(cfg, t, p)
        extra["spot_check"] = spot
        verdicts["variance_bound"] = _verdict(
            spot.get("pass", False),
            spot.get("reason") or
            f"Var(Y_x) = {spot['sample_variance']:.4g} (se {spot['stderr']:.3g}) vs "
            f"4/beta = {spot['bound']:.4g} at x = b_n{spot['offset']:+d}")
    data = []
    _rows_for(data, cfg, reps, "ratio")
    _rows_for(data, cfg, reps, "drop")
    _valley_rows(data, cfg, reps)
    return rows, verdicts, extra, data


def _spot_default(pot, val):
    """Lowest site of the valley other than ``b`` (nearest to ``b`` on ties)."""
    v = pot.segment(0, val.c).copy()
    v[val.b] = np.inf
    x = np.arange(v.size)
    return int(np.lexsort((np.abs(x - val.b), v))[0])


def _spot_check(cfg, t, p):
    """Spot check on replicate 0's environment at the largest horizon."""
    s = derive_seed(cfg.seed, 0)
    env_seed, _ = _seeds(cfg, s)
    n = cfg.horizons[-1]
    env = sample_environment(cfg.dist(), default_window(n, cfg.window_c), env_seed)
    env, pot, val = valley_for(env, n)
    if p["spot_x"] is None:
        x = _spot_default(pot, val)
        off = x - val.b
    else:
        off = p["spot_x"]
        x = val.b + off
    if not 0 <= x <= val.c:
        return {"pass": False, "reason": f"spot offset {off} outside [-{val.b}, {val.c - val.b}]"}
    return variance_spot_check(env, pot, val, x, p["excursions"], s, p["max_steps"], t["se"])


REPORTERS = {
    "theorem1": _report_theorem1,
    "deviation": _report_deviation,
    "lln": _report_lln,
    "clt": _report_clt,
    "growth": _report_growth,
    "excursion_variance": _report_excursion,
}


def run_experiment(cfg, jobs=1):
    """Run a resolved :class:`ExperimentConfig`; returns an :class:`ExperimentResult`."""
    if isinstance(cfg, dict):
        cfg = resolve_config(cfg)
    reps = run_replications(partial(_bound_task, cfg), cfg.replicates, cfg.seed, jobs,
                            cfg.failure_budget)
    if not reps.ok:
        raise DomainError("every replicate failed; see the log")
    rows, verdicts, extra, data = REPORTERS[cfg.experiment](cfg, reps)
    verdicts["failure_budget"] = _verdict(
        reps.within_budget,
        f"{len(reps.failures)} of {reps.replicates} replicates failed "
        f"(budget {cfg.failure_budget:.2%})")
    report = {
        "experiment": cfg.experiment,
        # the output location is recorded in meta.json, not here
        "config": {k: v for k, v in cfg.to_dict().items() if k not in _NOT_HASHED},
        "config_hash": cfg.config_hash,
        "master_seed": cfg.seed,
        "rows": rows,
        "verdicts": verdicts,
        "failures": reps.summary(),
        "passed": all(v["pass"] for v in verdicts.values()),
    }
    if extra:
        report["diagnostics"] = {k: v for k, v in extra.items()}
    return ExperimentResult(_jsonable(report), data)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# --------------------------------------------------------------------------
# singularity direction

def omega_plus_rates(dist, windows, R, seed):
    """Fraction of i.i.d. environments passing the window-``W`` positivity proxy.

    Replicate ``i`` uses one environment for every ``W`` (sites depend
    only on the seed), so the rates are non-increasing in ``W`` by
    construction.
    """
    w_max = max(windows)
    hits = np.zeros(len(windows), dtype=np.int64)
    for i in range(R):
        env = sample_environment(dist, (-1, w_max), derive_seed(seed, i, ENV))
        lr = env.log_rho_values(1, w_max)
        running = np.cumsum(lr)
        for j, w in enumerate(windows):
            hits[j] += bool(np.all(running[:w] >= -1e-9))
    return (hits / R).tolist()


def tilde_omega_plus_rate(dist, R, seed):
    """Fraction of infinite-valley environments passing the positivity proxy."""
    ok = 0
    for i in range(R):
        sample = sample_tilde_v_htransform(dist, seed=derive_seed(seed, i, MIXTURE))
        ok += omega_plus_indicator(tilde_environment(sample))
    return ok / R
