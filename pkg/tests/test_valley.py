import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sinai_lab.environment import Environment, EnvironmentDistribution, Potential, potential, \
    sample_environment
from sinai_lab.errors import DomainError, OutOfWindowError
from sinai_lab.valley import (Valley, XiVector, depth_threshold, find_valley, mu_from_xi, mu_n,
                              omega_from_xi, stationarity_residual, valley_for, xi_vector)

TEMKIN = EnvironmentDistribution.two_point(0.3)


def _pot(values):
    return Potential.from_values(values)


def _brute_valley(v, depth):
    """Direct reading of the definitions: O(c^2)."""
    for x in range(len(v)):
        if any(v[x] - v[y] >= depth for y in range(x + 1)):
            c = x
            break
    else:
        return None
    low = min(v[: c + 1])
    b = next(y for y in range(c + 1) if v[y] == low)
    return b, c


def _n_for_depth(depth):
    # invert L_n = log n + sqrt(log n)
    s = (-1 + math.sqrt(1 + 4 * depth)) / 2
    return math.exp(s * s)


def test_depth_threshold():
    assert depth_threshold(math.e) == pytest.approx(2.0)
    assert depth_threshold(_n_for_depth(3.5)) == pytest.approx(3.5)


def test_linear_potential():
    val = find_valley(_pot(np.arange(10.0)), 10, depth=3.5)
    assert (val.b, val.c) == (0, 4)


def test_dip_then_rise():
    v = [0, -1, -2, -1, 0, 1, 2, 3, 4]
    val = find_valley(_pot(v), 10, depth=3.5)
    assert (val.b, val.c) == (2, 6)


def test_tied_minimum_takes_first():
    v = [0, -1, 0, -1, 0, 1, 2, 3]
    val = find_valley(_pot(v), 10, depth=3.0)
    assert (val.b, val.c) == (1, 6)


def test_window_too_small():
    with pytest.raises(OutOfWindowError) as exc:
        find_valley(_pot([0, 1, 2]), 10, depth=5)
    assert exc.value.site == 3


def test_valley_for_widens():
    env = sample_environment(TEMKIN, (-1, 5), 13)
    env2, pot, val = valley_for(env, 10**5)
    assert env2.x_max >= val.c
    assert (val.b, val.c) == _brute_valley(pot.segment(0, pot.x_max).tolist(), val.depth)


def test_matches_brute_force_on_random_envs():
    n = 10_000
    depth = depth_threshold(n)
    for seed in range(1000):
        env = sample_environment(TEMKIN, (-1, 10_000), seed)
        pot = potential(env)
        v = pot.segment(0, pot.x_max)
        expected = _brute_valley_fast(v, depth)
        val = find_valley(pot, n)
        assert (val.b, val.c) == expected, seed


def _brute_valley_fast(v, depth):
    # same double loop, inner loop vectorized
    for x in range(v.size):
        if np.max(v[x] - v[: x + 1]) >= depth:
            low = v[: x + 1].min()
            return int(np.flatnonzero(v[: x + 1] == low)[0]), x
    return None


def test_valley_invariants_random():
    n = 10**5
    for seed in range(50):
        env, pot, val = valley_for(sample_environment(TEMKIN, (-1, 2000), seed), n)
        v = pot.segment(0, val.c)
        assert 0 <= val.b < val.c
        assert v[val.c] - v.min() >= val.depth
        assert v[val.b] == v.min()


def test_mu_flat():
    mu = mu_n(_pot([0.0, 0.0, 0.0]), Valley(10, 1.0, 0, 2))
    assert mu.z == pytest.approx(4.0)
    assert mu.weights.tolist() == pytest.approx([0.25, 0.5, 0.25], abs=1e-15)


def test_mu_matches_formula_and_bound():
    n = 10**5
    for seed in range(30):
        env, pot, val = valley_for(sample_environment(TEMKIN, (-1, 2000), 100 + seed), n)
        mu = mu_n(pot, val)
        c = val.c
        v = pot.segment(0, c)
        z = 2 * np.sum(np.exp(-v[:c]))
        ref = np.empty(c + 1)
        ref[0] = 1 / z
        ref[1:c] = (np.exp(-v[1:c]) + np.exp(-v[: c - 1])) / z
        ref[c] = np.exp(-v[c - 1]) / z
        assert np.allclose(mu.weights, ref, rtol=1e-10, atol=0)
        assert mu.log_z == pytest.approx(math.log(z), abs=1e-10)
        assert mu.weights.sum() == pytest.approx(1.0, abs=1e-10)
        assert mu[val.b] >= 1 / (2 * c)
        assert mu[-1] == 0.0 and mu[c + 1] == 0.0


def test_mu_stationary():
    n = 10**6
    for seed in range(20):
        env, pot, val = valley_for(sample_environment(TEMKIN, (-1, 5000), 200 + seed), n)
        assert stationarity_residual(mu_n(pot, val), env) < 1e-10


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.05, 0.95), min_size=4, max_size=60))
def test_mu_stationary_any_env(values):
    env = Environment.from_values(values)
    pot = potential(env)
    v = pot.segment(0, pot.x_max)
    rise = v - np.minimum.accumulate(v)
    depth = float(rise.max())
    if depth <= 0:
        return
    val = find_valley(pot, 10, depth=depth)
    mu = mu_n(pot, val)
    assert mu.weights.sum() == pytest.approx(1.0, abs=1e-10)
    assert stationarity_residual(mu, env) < 1e-10


def test_xi_examples():
    xi = xi_vector(_pot([0.0, 0.0, 0.0, 0.0]), Valley(10, 1.0, 0, 3))
    assert xi.entries.tolist() == [1.0, 1.0, 1.0]
    assert (xi.lo, xi.hi) == (0, 2)
    assert xi[5] == 0.0 and xi[-1] == 0.0


def test_xi_random_instances():
    n = 10**5
    for seed in range(40):
        env, pot, val = valley_for(sample_environment(TEMKIN, (-1, 2000), 300 + seed), n)
        xi = xi_vector(pot, val)
        mu = mu_n(pot, val)
        assert xi[0] == 1.0
        assert np.all(xi.entries <= 1.0) and np.all(xi.entries > 0)
        assert xi.l1 == pytest.approx(mu.z * math.exp(pot[val.b]) / 2, rel=1e-10)
        rebuilt = mu_from_xi(xi)
        # the boundary cases agree too: Xi vanishes just outside its support
        assert np.allclose(rebuilt, mu.weights, rtol=1e-12, atol=0)
        for x in range(xi.lo + 1, xi.hi + 1):
            assert omega_from_xi(xi, x) == pytest.approx(env[val.b + x], abs=1e-12)


def test_omega_from_xi_examples():
    xi = XiVector(0, 2, np.array([1.0, 1.0]), 2.0)
    assert omega_from_xi(xi, 1) == 0.5
    e = math.exp(-1)
    xi = XiVector(0, 2, np.array([1.0, e]), 1 + e)
    assert omega_from_xi(xi, 1) == pytest.approx(e / (1 + e), abs=1e-15)
    with pytest.raises(DomainError):
        omega_from_xi(xi, 5)
