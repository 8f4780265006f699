import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sinai_lab.environment import (Environment, EnvironmentDistribution, Potential, log_rho,
                                   potential, sample_environment, validate_atoms)
from sinai_lab.errors import ConfigurationError, OutOfWindowError

TEMKIN = EnvironmentDistribution.two_point(0.3)
LOG73 = math.log(7 / 3)


def test_two_point_window_values():
    env = sample_environment(TEMKIN, (-3, 3), seed=11)
    assert env.window == (-3, 3)
    assert env.omega.size == 7
    assert set(env.omega.tolist()) <= {0.3, 0.7}


def test_degenerate_law_rejected():
    with pytest.raises(ConfigurationError, match="Assumption 2"):
        EnvironmentDistribution.finite_support([(0.5, 1.0)], delta0=0.5)
    with pytest.raises(ConfigurationError, match="Assumption 2"):
        EnvironmentDistribution.two_point(0.5)


def test_sampling_is_deterministic():
    a = sample_environment(TEMKIN, (-3, 3), seed=5)
    b = sample_environment(TEMKIN, (-3, 3), seed=5)
    assert np.array_equal(a.omega, b.omega)
    assert (a.window, a.seed) == (b.window, b.seed)


def test_widening_keeps_sites():
    small = sample_environment(TEMKIN, (-2, 10), seed=9)
    big = small.widen(-50, 400)
    assert np.array_equal(big.values(-2, 10), small.omega)
    assert np.array_equal(big.omega, sample_environment(TEMKIN, (-50, 400), 9).omega)


def test_hand_built_env_cannot_widen():
    env = Environment.from_values([0.3, 0.7])
    with pytest.raises(OutOfWindowError):
        env.widen(0, 5)


def test_sites_look_iid():
    env = sample_environment(TEMKIN, (0, 199_999), seed=3)
    up = env.omega == 0.3
    assert abs(up.mean() - 0.5) < 4 * 0.5 / math.sqrt(up.size)
    # lag-1 agreement rate of a fair coin sequence is 1/2
    same = np.mean(up[1:] == up[:-1])
    assert abs(same - 0.5) < 4 * 0.5 / math.sqrt(up.size)


def test_seeds_give_different_envs():
    a = sample_environment(TEMKIN, (0, 100), seed=1)
    b = sample_environment(TEMKIN, (0, 100), seed=2)
    assert not np.array_equal(a.omega, b.omega)


@pytest.mark.parametrize("p, expected", [(0.5, 0.0), (0.3, 0.847298), (0.7, -0.847298)])
def test_log_rho_values(p, expected):
    env = Environment.from_values([p])
    assert log_rho(env, 0) == pytest.approx(expected, abs=1e-6)


def test_log_rho_antisymmetry():
    env = Environment.from_values([0.3, 0.7])
    assert log_rho(env, 0) == pytest.approx(-log_rho(env, 1), rel=1e-15)


def test_log_rho_outside_window():
    env = Environment.from_values([0.3, 0.7], x_min=-1)
    with pytest.raises(OutOfWindowError):
        log_rho(env, 1)


def test_flat_potential():
    pot = potential(Environment.from_values([0.5] * 9, x_min=-4))
    assert np.all(pot.values == 0.0)


def test_potential_right_side():
    pot = potential(Environment.from_values([0.5, 0.3, 0.7]))
    assert pot[0] == 0.0
    assert pot[1] == pytest.approx(LOG73, abs=1e-15)
    assert pot[2] == pytest.approx(0.0, abs=1e-15)


def test_potential_left_sign():
    # V(-1) = -log rho_0
    pot = potential(Environment.from_values([0.5, 0.3], x_min=-1))
    assert pot[-1] == pytest.approx(-LOG73, abs=1e-15)


def test_arithmetic_log_rho_exact():
    env = sample_environment(TEMKIN, (-100, 10_000), seed=4)
    lr = env.log_rho_values(-100, 10_000)
    assert set(np.abs(lr).tolist()) == {LOG73}


def test_mean_log_rho_near_zero():
    env = sample_environment(TEMKIN, (0, 999_999), seed=17)
    lr = env.log_rho_values(0, 999_999)
    sigma = LOG73
    assert abs(lr.mean()) <= 4 * sigma / 1000


def test_arithmetic_potential_lattice():
    env = sample_environment(TEMKIN, (-50, 500), seed=8)
    pot = potential(env)
    lev = np.rint(pot.values / TEMKIN.span)
    assert np.array_equal(pot.values, lev * TEMKIN.span)
    # equal levels give bit-identical potential values
    lo_sites = np.flatnonzero(lev == lev.min())
    assert len(set(pot.values[lo_sites].tolist())) == 1


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**63), lo=st.integers(-300, 0), hi=st.integers(0, 300),
       data=st.data())
def test_telescoping(seed, lo, hi, data):
    env = sample_environment(TEMKIN, (lo, hi), seed)
    pot = potential(env)
    x = data.draw(st.integers(lo, hi))
    y = data.draw(st.integers(x, hi))
    direct = float(np.sum(env.log_rho_values(x + 1, y))) if y > x else 0.0
    assert pot[y] - pot[x] == pytest.approx(direct, abs=1e-10)
    assert pot[0] == 0.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.05, 0.95), min_size=2, max_size=40), st.integers(-20, 0))
def test_potential_increments_non_arithmetic(values, shift):
    x_min = max(shift, -(len(values) - 1))
    env = Environment.from_values(values, x_min=x_min)
    pot = potential(env)
    lr = env.log_rho_values(x_min, env.x_max)
    assert np.allclose(np.diff(pot.values), lr[1:], atol=1e-12)


def test_finite_support_span_inferred():
    d = EnvironmentDistribution.finite_support([(0.2, 0.4), (0.5, 0.2), (0.8, 0.4)], 0.2)
    assert d.span == pytest.approx(math.log(4))
    jumps, probs = d.lattice_increments()
    assert jumps.tolist() == [-1, 0, 1]
    assert probs.tolist() == pytest.approx([0.4, 0.2, 0.4])


def test_non_arithmetic_rejected_unless_allowed():
    # log rho atoms log 4 and -log 2 weighted to mean zero: ratio -2, arithmetic
    ok = EnvironmentDistribution.finite_support([(0.2, 1 / 3), (2 / 3, 2 / 3)], 0.2)
    assert ok.arithmetic
    # incommensurable atoms: log 4 and log(3/7)
    w = math.log(7 / 3) / (math.log(4) + math.log(7 / 3))
    atoms = [(0.2, w), (0.7, 1 - w)]
    with pytest.raises(ConfigurationError, match="Assumption 3"):
        EnvironmentDistribution.finite_support(atoms, 0.2)
    d = EnvironmentDistribution.finite_support(atoms, 0.2, require_arithmetic=False)
    assert d.span is None


def test_validate_atoms_reports():
    problems = validate_atoms([(0.2, 0.5), (0.7, 0.6)], 0.2)
    assert any("weights" in p for p in problems)
    problems = validate_atoms([(0.1, 0.5), (0.9, 0.5)], 0.2)
    assert any("Assumption 2(i)" in p for p in problems)
    problems = validate_atoms([(0.3, 0.7), (0.7, 0.3)], 0.3)
    assert any("Assumption 1" in p for p in problems)


def test_declared_span_checked():
    with pytest.raises(ConfigurationError, match="span"):
        EnvironmentDistribution.finite_support([(0.3, 0.5), (0.7, 0.5)], 0.3, span=0.5)


def test_finite_support_needs_delta0():
    with pytest.raises(ConfigurationError, match="delta0"):
        EnvironmentDistribution.from_config({"kind": "finite_support", "atoms": [[0.3, 0.5]]})


def test_config_round_trip():
    d = EnvironmentDistribution.finite_support([(0.2, 0.4), (0.5, 0.2), (0.8, 0.4)], 0.2)
    assert EnvironmentDistribution.from_config(d.to_config()) == d
    assert EnvironmentDistribution.from_config(TEMKIN.to_config()) == TEMKIN


def test_window_must_contain_zero():
    with pytest.raises(ConfigurationError):
        sample_environment(TEMKIN, (1, 5), 0)


def test_potential_from_values_anchor():
    with pytest.raises(ConfigurationError):
        Potential.from_values([1.0, 2.0])
