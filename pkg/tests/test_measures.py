import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sinai_lab.environment import Environment, EnvironmentDistribution, sample_environment
from sinai_lab.errors import ConfigurationError, DomainError, OutOfWindowError
from sinai_lab.experiments import omega_plus_rates, tilde_omega_plus_rate
from sinai_lab.infinite_valley import s_infty_eval, sample_tilde_v_htransform, \
    tilde_environment
from sinai_lab.measures import (CATALOG, function_from_config, hilbert_distance, make_function,
                                omega_plus_indicator, r_kernel_expectation, r_kernel_function,
                                s_n_eval, s_n_temporal, sigma_n_eval)
from sinai_lab.rng import derive_seed
from sinai_lab.valley import ValleyMeasure, mu_n, valley_for
from sinai_lab.walk import default_window, local_times, simulate

TEMKIN = EnvironmentDistribution.two_point(0.3)
TABLE = {"name": "table", "knots": [0.0, 0.5, 1.0], "values": [-2.0, 1.0, 0.5]}


def _catalog():
    return [make_function(n) for n in CATALOG if n != "table"] + [function_from_config(TABLE)]


@settings(max_examples=50, deadline=None)
@given(st.data())
def test_sup_bound_holds(data):
    for f in _catalog():
        coords = data.draw(st.lists(st.floats(0, 1), min_size=2 * f.radius + 1,
                                    max_size=2 * f.radius + 1))
        assert abs(f(*coords)) <= f.sup_bound + 1e-15


def test_catalog_values():
    assert make_function("center")(0.3) == 0.3
    assert make_function("drift")(0.3) == pytest.approx(-0.4)
    assert make_function("variance")(0.3) == pytest.approx(0.21)
    assert make_function("adjacent_product")(0.1, 0.3, 0.7) == pytest.approx(0.21)
    assert function_from_config(TABLE)(0.25) == pytest.approx(-0.5)
    with pytest.raises(DomainError):
        make_function("center")(0.3, 0.4)


def test_catalog_errors():
    with pytest.raises(ConfigurationError):
        make_function("nope")
    with pytest.raises(ConfigurationError):
        make_function("table", knots=[0.0, 0.0], values=[1.0, 2.0])
    with pytest.raises(ConfigurationError):
        function_from_config({"knots": []})


def test_s_n_constant_and_flat():
    env = sample_environment(TEMKIN, (-1, 500), 3)
    lt = local_times(simulate(env, 5000, 1))
    assert s_n_eval(lt, env, make_function("constant")).value == 1.0
    flat = Environment.from_values([0.5] * 400, x_min=-1)
    lt = local_times(simulate(flat, 2000, 1))
    assert s_n_eval(lt, flat, make_function("drift")).value == 0.0


def test_s_n_spatial_equals_temporal():
    funcs = _catalog()
    for seed in range(20):
        env = sample_environment(TEMKIN, (-2, 3000), seed)
        traj = simulate(env, 20_000, seed)
        lt = local_times(traj)
        for f in funcs:
            ev = s_n_eval(lt, env, f, walk_seed=seed)
            assert ev.value == pytest.approx(s_n_temporal(traj, env, f), abs=1e-12)
            assert abs(ev.value) <= f.sup_bound
            assert (ev.kind, ev.n, ev.env_seed, ev.walk_seed) == ("S_n", 20_000, seed, seed)


def test_s_n_window_shortfall():
    env = Environment.from_values([0.5, 0.5, 0.5], x_min=0)
    lt = local_times(simulate(Environment.from_values([0.5] * 3, x_min=-1), 1, 0))
    with pytest.raises(OutOfWindowError):
        s_n_eval(lt, env, make_function("adjacent_product"))


def test_sigma_n_hand_example():
    mu = ValleyMeasure(10, 2, np.array([0.25, 0.5, 0.25]), math.log(4))
    env = Environment.from_values([0.3, 0.7, 0.3])
    assert sigma_n_eval(mu, env, make_function("center")).value == pytest.approx(0.5, abs=1e-15)
    assert sigma_n_eval(mu, env, make_function("constant")).value == 1.0


def test_sigma_n_bounded():
    for seed in range(10):
        env, pot, val = valley_for(sample_environment(TEMKIN, default_window(10**5), seed), 10**5)
        mu = mu_n(pot, val)
        env = env.widen(-2, env.x_max + 2)
        for f in _catalog():
            v = sigma_n_eval(mu, env, f).value
            assert abs(v) <= f.sup_bound + 1e-12
        assert sigma_n_eval(mu, env, make_function("constant")).value == pytest.approx(1, abs=1e-12)


def test_hilbert_distance_examples():
    a = Environment.from_values([0.3, 0.7, 0.3, 0.7, 0.3], x_min=-2)
    assert hilbert_distance(a, a).value == 0.0
    b = Environment.from_values([0.3, 0.7, 0.7, 0.7, 0.3], x_min=-2)
    assert hilbert_distance(a, b).value == pytest.approx(0.4)
    c = Environment.from_values([0.3, 0.3, 0.3, 0.3, 0.3], x_min=-2)
    assert hilbert_distance(a, c).value == pytest.approx(0.4)
    d = hilbert_distance(a, b)
    assert d.tail_bound == pytest.approx(0.5)
    assert d.interval == (d.value, d.value + 0.5)
    with pytest.raises(DomainError):
        hilbert_distance(a, Environment.from_values([0.3] * 5))


def test_r_kernel_examples():
    env = Environment.from_values([0.2, 0.6, 0.9], x_min=-1)
    assert r_kernel_expectation(env, make_function("constant", c=3.0)) == 3.0
    assert r_kernel_expectation(env, make_function("center")) == pytest.approx(
        0.6 * 0.9 + 0.4 * 0.2)
    with pytest.raises(OutOfWindowError):
        r_kernel_expectation(env, make_function("center"), x=1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 0.99), min_size=5, max_size=20), st.data())
def test_r_kernel_markov(values, data):
    env = Environment.from_values(values, x_min=-2)
    x = data.draw(st.integers(-1, env.x_max - 2))
    assert r_kernel_expectation(env, make_function("constant"), x) == 1.0
    for f in (make_function("center"), make_function("adjacent_product")):
        if x - 1 - f.radius < env.x_min or x + 1 + f.radius > env.x_max:
            continue
        rf = r_kernel_function(f)
        w = env.values(x - rf.radius, x + rf.radius)
        assert rf(*w) == pytest.approx(r_kernel_expectation(env, f, x), abs=1e-15)


def test_s_infty_invariant_under_r():
    draws = 10_000
    diffs = {name: [] for name in ("center", "adjacent_product", "variance")}
    for i in range(draws):
        s = sample_tilde_v_htransform(TEMKIN, seed=derive_seed(77, i))
        for name in diffs:
            f = make_function(name)
            diffs[name].append(s_infty_eval(s, r_kernel_function(f)) - s_infty_eval(s, f))
    for name, d in diffs.items():
        d = np.array(d)
        se = d.std(ddof=1) / math.sqrt(draws)
        assert abs(d.mean()) <= max(3 * se, 1e-12), name


def test_omega_plus_examples():
    env = Environment.from_values([0.5, 0.7, 0.3, 0.3], x_min=0)
    assert not omega_plus_indicator(env)
    env = Environment.from_values([0.5, 0.3, 0.7, 0.3], x_min=0)
    assert omega_plus_indicator(env)
    with pytest.raises(OutOfWindowError):
        omega_plus_indicator(Environment.from_values([0.5], x_min=0))
    with pytest.raises(DomainError):
        omega_plus_indicator([0.5, 0.3])


def test_tilde_environments_in_omega_plus():
    for seed in range(200):
        s = sample_tilde_v_htransform(TEMKIN, seed=seed)
        assert omega_plus_indicator(s)
        assert omega_plus_indicator(tilde_environment(s))
    assert tilde_omega_plus_rate(TEMKIN, 100, 5) == 1.0


def test_iid_rate_shrinks_with_window():
    rates = omega_plus_rates(TEMKIN, [10, 100, 1000], 1000, 9)
    assert rates[0] > rates[1] > rates[2]
    # P(simple walk stays >= 0 for 10 steps) = C(10, 5) / 2^10
    assert abs(rates[0] - math.comb(10, 5) / 2**10) < 4 * math.sqrt(0.25 / 1000)
