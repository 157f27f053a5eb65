import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochks.core import ConfigError, ModelParams, RngContext
from stochks.moments import (BrownianEventSpec, MomentOracle, blowup_mass_condition, blowup_probability_lower_bound,
                             blowup_time_bound, brownian_event_probability, event_probability_closed_form,
                             exact_mass, exact_second_moment, second_moment_series, smallness_boundary,
                             smallness_condition, supersolution_u_plus, sweep_alpha_beta, t2_condition, t2_min,
                             threshold_mass, u_plus_euler_maruyama, u_plus_series)
from stochks.noise import BrownianPath


def _path(seed=0, dt=1e-2, steps=100, key=()):
    return BrownianPath.sample(RngContext(seed), dt, steps, 1, keys=key)


def test_exact_mass_deterministic_and_fixed_path():
    o = MomentOracle(2.0, 1.0, ModelParams(sigma=0.0), _path())
    assert exact_mass(o, 0.7) == 2.0
    flat = BrownianPath(0.5, np.zeros((2, 1)))
    o = MomentOracle(1.0, 1.0, ModelParams(a=1.0, sigma=1.0), flat)
    assert exact_mass(o, 1.0) == pytest.approx(math.exp(-0.5))


def test_exact_mass_is_martingale():
    params = ModelParams(a=1.0, sigma=0.8)
    vals = np.array([exact_mass(MomentOracle(1.0, 1.0, params, _path(3, 0.1, 10, (i,))), 1.0) for i in range(10_000)])
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - 1.0) <= 3 * se


def test_second_moment_deterministic_cases():
    p = ModelParams(a=1.0, chi=2 * math.pi)
    o = MomentOracle(1.0, 1.0, p, _path())
    assert exact_second_moment(o, 0.5) == pytest.approx(1.5)
    o = MomentOracle(1.0, 1.0, ModelParams(a=0.6, chi=0.0), _path())
    assert exact_second_moment(o, 0.5) == pytest.approx(1.0 + 2 * 0.36 * 0.5)
    assert supersolution_u_plus(o, 0.5) == exact_second_moment(o, 0.5)
    o = MomentOracle(3.0, 1.0, p, _path())
    assert exact_second_moment(o, 1 / 3) == pytest.approx(0.0, abs=1e-12)
    assert blowup_time_bound(3.0, 1.0, p) == pytest.approx(1 / 3)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), sigma=st.floats(0.05, 2.0), chi=st.floats(0.0, 10.0))
def test_u_plus_dominates(seed, sigma, chi):
    o = MomentOracle(1.5, 0.7, ModelParams(a=2.0, sigma=sigma, chi=chi), _path(seed))
    _, M = second_moment_series(o)
    _, U = u_plus_series(o)
    assert np.all(U >= M - 1e-12 * np.abs(U))


def _u_plus_em_error(dt_levels, paths=200):
    params = ModelParams(a=1.0, sigma=0.8, chi=2.0)
    errs = np.zeros((paths, len(dt_levels)))
    for i in range(paths):
        base = _path(7, dt_levels[0], int(round(1 / dt_levels[0])), (i,))
        for j in range(len(dt_levels)):
            o = MomentOracle(1.0, 1.0, params, base.refined(j) if j else base)
            t, u = u_plus_euler_maruyama(o)
            _, ref = u_plus_series(o)
            errs[i, j] = abs(u[-1] - ref[-1]) / ref[-1]
    return errs.mean(axis=0)


@pytest.mark.xfail(strict=True, reason="Euler-Maruyama on multiplicative noise has strong order 1/2; "
                                       "the error falls by about 1.4 per halving, not 2")
def test_u_plus_em_error_halves():
    e = _u_plus_em_error([2e-3, 1e-3, 5e-4])
    for r in e[:-1] / e[1:]:
        assert 1.6 <= r <= 2.4


def test_u_plus_em_converges_at_order_half():
    e = _u_plus_em_error([2e-3, 1e-3, 5e-4])
    r = e[:-1] / e[1:]
    assert np.all(r > 1.2) and np.all(r < 1.7)


def test_smallness_examples():
    p = ModelParams.from_nu(1.0, 0.0, 0.5, p=2.0)
    assert smallness_condition(0.9, p, 1.0)
    assert not smallness_condition(1.1, p, 1.0)
    assert smallness_condition(100.0, p.replace(chi=0.0), 1.0)
    hot = p.replace(chi=1.0)  # χ = ν² p(p-1)/2
    assert not any(smallness_condition(m, hot, 1.0) for m in (1e-6, 0.1, 1.0, 10.0))
    assert smallness_boundary(p.replace(chi=0.0), 1.0) == math.inf
    assert smallness_boundary(hot, 1.0) == 0.0
    with pytest.raises(ValueError):
        smallness_condition(0.0, p, 1.0)


@settings(max_examples=40, deadline=None)
@given(nu=st.floats(0.3, 2.0), frac=st.floats(0.05, 0.95), C=st.floats(0.1, 5.0), p=st.floats(2.0, 6.0))
def test_smallness_boundary_closed_form(nu, frac, C, p):
    k = nu * nu * p * (p - 1) / 2
    params = ModelParams.from_nu(nu, 0.0, frac * k, p=p)
    exact = math.sqrt(C * (k - params.chi) / params.chi)
    assert smallness_boundary(params, C) == pytest.approx(exact, rel=1e-9)


def test_blowup_mass_condition_and_bound():
    p = ModelParams(a=1.0, chi=2 * math.pi)
    assert threshold_mass(p) == pytest.approx(2.0)
    assert not blowup_mass_condition(0.0, p)
    assert blowup_mass_condition(3.0, p)
    assert not blowup_mass_condition(2.0, p) and blowup_mass_condition(2.0 + 1e-9, p)
    assert blowup_time_bound(3.0, 0.0, p) == 0.0
    assert blowup_time_bound(3.0, 2.0, p) == pytest.approx(2 * blowup_time_bound(3.0, 1.0, p))
    with pytest.raises(ValueError):
        blowup_time_bound(1.0, 1.0, p)


def test_t2_minimal_and_monotone_in_alpha():
    params = ModelParams(a=1.0, sigma=0.5, chi=1.0)
    prev = math.inf
    for alpha in (0.25, 0.5, 1.0, 2.0, 4.0):
        t2 = t2_min(0.5, 1.0, params, alpha, 1.0)
        assert t2_condition(t2, 0.5, 1.0, params, alpha, 1.0)
        assert not t2_condition(t2 - 1e-6, 0.5, 1.0, params, alpha, 1.0)
        assert t2 < prev
        prev = t2
    assert t2_min(0.5, 0.0, params.replace(a=1e-9), 1.0, 1.0) == 0.0
    with pytest.raises(ValueError):
        t2_min(0.5, 1.0, params.replace(sigma=0.0), 1.0, 1.0)
    with pytest.raises(ValueError):
        t2_min(1e-3, 1e3, params, 1e-3, 5.0, t_max=10.0)


def test_event_probability_limits_and_mc():
    assert event_probability_closed_form(BrownianEventSpec(0.5, 50.0, 1.0), 1.0) == pytest.approx(1.0)
    assert event_probability_closed_form(BrownianEventSpec(0.5, 1.0, 1e-8), 1.0) == pytest.approx(1.0)
    r = brownian_event_probability(BrownianEventSpec(0.5, 1.0, 1.0), 1.0, n_paths=40_000)
    assert abs(r.mc_estimate - r.closed_form) <= 3 * r.mc_stderr
    assert r.grid_fraction >= r.mc_estimate
    with pytest.raises(ConfigError):
        BrownianEventSpec(0.0, 1.0, 1.0)


def test_lower_bound_halves():
    assert blowup_probability_lower_bound(0.0) == 0.0
    assert blowup_probability_lower_bound(1.0) == 0.5
    assert blowup_probability_lower_bound(0.4) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        blowup_probability_lower_bound(1.2)


def test_sweep_rows_consistent():
    params = ModelParams(a=1.0, sigma=0.5, chi=1.0)
    rows = sweep_alpha_beta(0.5, 1.0, params, [0.5, 1.0], [0.5, 1.0])
    assert len(rows) == 4
    for a, b, t2, p_ab, bound in rows:
        assert bound == pytest.approx(p_ab / 2)
        assert t2 == pytest.approx(t2_min(0.5, 1.0, params, a, b))
