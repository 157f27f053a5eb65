import math

import numpy as np
import pytest

from stochks.core import ConfigError, DomainSpec, Field, ModelParams, RngContext, make_gaussian_field, mass
from stochks.diagnostics import first_moment, second_moment
from stochks.moments import blowup_time_bound
from stochks.noise import BrownianPath, DivergenceNoise
from stochks.solver import (SolverConfig, SolverError, SolverState, _classify, picard_iterate, simulate,
                            simulate_batch, solve_deterministic, solve_linearized, step)


def _heat_width2(f):
    return second_moment(f) / (2 * mass(f))


def test_heat_flow_width():
    d = DomainSpec(10.0, 128)
    rho0 = make_gaussian_field(d, 1.0, 1.0)
    tr = solve_deterministic(rho0, ModelParams(a=1.0, chi=0.0), SolverConfig(dt=1e-2, t_end=0.5), record_every=50)
    assert _heat_width2(tr.field(-1)) == pytest.approx(1.5, rel=1e-2)


def test_heat_flow_second_moment_linear():
    # M(t) = 2 m0 (s² + a² t); semi-implicit diffusion is exact on each mode
    d = DomainSpec(8.0, 64)
    rho0 = make_gaussian_field(d, 2.0, 0.8)
    tr = solve_deterministic(rho0, ModelParams(a=0.7, chi=0.0), SolverConfig(dt=5e-3, t_end=0.3), record_every=20)
    for t, i in zip(tr.times, range(len(tr))):
        assert second_moment(tr.field(i)) == pytest.approx(4.0 * (0.64 + 0.49 * t), rel=1e-6)


def test_transport_noise_translates_centroid():
    d = DomainSpec(8.0, 128)
    params = ModelParams(a=1.0, sigma=0.6, chi=0.0)
    rho0 = make_gaussian_field(d, 1.0, 0.8)
    cfg = SolverConfig(dt=2e-3, t_end=0.2)
    path = BrownianPath.sample(RngContext(11), cfg.dt, cfg.steps, 2)
    tr = simulate(rho0, params, DivergenceNoise(0.6), cfg, path, record_every=cfg.steps)
    W = path.values()[-1]
    cx, cy = first_moment(tr.field(-1))
    assert cx == pytest.approx(-0.6 * W[0], abs=2e-3)
    assert cy == pytest.approx(-0.6 * W[1], abs=2e-3)
    # spread is the ν²-heat flow only
    f = tr.field(-1)
    central = second_moment(f) - (cx * cx + cy * cy) / mass(f)
    assert central == pytest.approx(2 * (0.64 + params.nu2 * 0.2), rel=2e-2)


def test_transport_mass_conserved_per_step():
    d = DomainSpec(8.0, 128)
    params = ModelParams(a=1.0, sigma=0.5, chi=1.0)
    cfg = SolverConfig(dt=2e-3, t_end=0.1)
    path = BrownianPath.sample(RngContext(2), cfg.dt, cfg.steps, 2)
    tr = simulate(make_gaussian_field(d, 1.0, 1.0), params, DivergenceNoise(0.5), cfg, path)
    m = np.array([mass(tr.field(i)) for i in range(len(tr))])
    assert np.max(np.abs(np.diff(m))) <= 1e-10


def test_step_matches_batch():
    d = DomainSpec(6.0, 64)
    params = ModelParams(a=1.0, sigma=0.4, chi=1.0)
    cfg = SolverConfig(dt=5e-3, t_end=0.05)
    path = BrownianPath.sample(RngContext(5), cfg.dt, cfg.steps, 2)
    rho0 = make_gaussian_field(d, 1.0, 0.9)
    st = SolverState(0.0, rho0, path=path)
    for _ in range(cfg.steps):
        st = step(st, params, DivergenceNoise(0.4), cfg)
    tr = simulate(rho0, params, DivergenceNoise(0.4), cfg, path, record_every=cfg.steps)
    assert np.allclose(st.rho.values, tr.fields[-1], rtol=0, atol=1e-14)
    assert st.t == pytest.approx(0.05)


def test_blown_state_halts():
    d = DomainSpec(6.0, 32)
    st = SolverState(0.0, make_gaussian_field(d, 1.0, 0.9), blown_up=True, blowup_time=0.0)
    with pytest.raises(ValueError):
        step(st, ModelParams(), None, SolverConfig(dt=1e-3, t_end=1.0))


def test_batch_deterministic():
    d = DomainSpec(6.0, 64)
    params = ModelParams(a=1.0, sigma=0.4, chi=1.0)
    cfg = SolverConfig(dt=5e-3, t_end=0.05)
    paths = [BrownianPath.sample(RngContext(9), cfg.dt, cfg.steps, 2, keys=(i,)) for i in range(3)]
    a = simulate_batch(make_gaussian_field(d, 1.0, 0.9), params, DivergenceNoise(0.4), cfg, paths)
    b = simulate_batch(make_gaussian_field(d, 1.0, 0.9), params, DivergenceNoise(0.4), cfg, paths)
    assert np.array_equal(a.final, b.final)
    assert not np.array_equal(a.final[0], a.final[1])


def test_explicit_guard():
    d = DomainSpec(4.0, 64)
    ok = SolverConfig(dt=1e-4, t_end=1.0, stepping="explicit")
    ok.validate(d, ModelParams())
    with pytest.raises(ConfigError):
        SolverConfig(dt=1e-2, t_end=1.0, stepping="explicit").validate(d, ModelParams())
    with pytest.raises(ConfigError):
        SolverConfig(dt=0.0, t_end=1.0)
    with pytest.raises(ConfigError):
        SolverConfig(dt=1e-3, t_end=1.0, positivity_action="ignore")


def test_nonfinite_without_growth_is_internal_error():
    bad = np.ones((1, 8, 8))
    bad[0, 0, 0] = np.inf
    with pytest.raises(SolverError):
        _classify(bad, np.array([1.0]), np.array([1.0]), np.array([1e4]), 1e-10, 1.0)
    reasons, *_ = _classify(bad, np.array([50.0]), np.array([1.0]), np.array([1e4]), 1e-10, 1.0)
    assert reasons == ["nonfinite"]


def test_clip_adds_only_small_undershoots():
    v = np.ones((1, 4, 4))
    v[0, 0, 0] = -1e-12
    v[0, 1, 1] = -1e-3
    reasons, cleaned, clipped, _, breach = _classify(v, np.ones(1), np.ones(1), np.full(1, 1e4), 1e-10, 1.0)
    assert cleaned[0, 0, 0] == 0.0 and cleaned[0, 1, 1] == -1e-3
    assert clipped[0] == pytest.approx(1e-12)
    assert breach[0] and reasons == ["positivity"]


def test_deterministic_supercritical_blows_up_before_bound():
    d = DomainSpec(8.0, 128)
    params = ModelParams(a=1.0, chi=2 * math.pi)
    rho0 = make_gaussian_field(d, 3.0, 0.7)
    Tstar = blowup_time_bound(3.0, second_moment(rho0), params)
    cfg = SolverConfig(dt=5e-4, t_end=1.2 * Tstar, positivity_action="continue")
    tr = solve_deterministic(rho0, params, cfg, record_every=100)
    assert tr.blown_up and tr.blowup_time < Tstar


def test_linearized_with_zero_source_is_heat_transport():
    d = DomainSpec(6.0, 64)
    params = ModelParams(a=1.0, sigma=0.3, chi=2.0)
    cfg = SolverConfig(dt=5e-3, t_end=0.05)
    rho0 = make_gaussian_field(d, 1.0, 0.9)
    zero = simulate(Field.zeros(d), params, None, cfg)  # ξ ≡ 0 on every step
    path = BrownianPath.sample(RngContext(1), cfg.dt, cfg.steps, 2)
    lin = solve_linearized(zero, params, DivergenceNoise(0.3), cfg, path, rho0)
    free = simulate(rho0, params.replace(chi=0.0), DivergenceNoise(0.3), cfg, path)
    assert np.allclose(lin.fields[-1], free.fields[-1], atol=1e-14)
    m = [mass(lin.field(i)) for i in range(len(lin))]
    assert np.ptp(m) <= 1e-10


def test_linearized_fixed_point():
    d = DomainSpec(6.0, 64)
    params = ModelParams(a=1.0, chi=1.0)
    cfg = SolverConfig(dt=5e-3, t_end=0.1)
    rho0 = make_gaussian_field(d, 1.0, 0.9)
    full = solve_deterministic(rho0, params, cfg)
    lin = solve_linearized(full, params, None, cfg)
    assert np.max(np.abs(np.stack(lin.fields) - np.stack(full.fields))) < 1e-12 * rho0.sup()
    with pytest.raises(ValueError):
        solve_linearized(solve_deterministic(rho0, params, cfg, record_every=2), params, None, cfg)


def test_picard_without_coupling_converges_at_once():
    d = DomainSpec(6.0, 32)
    rho0 = make_gaussian_field(d, 1.0, 0.9)
    res = picard_iterate(rho0, ModelParams(a=1.0, chi=0.0), None, SolverConfig(dt=1e-2, t_end=0.1), 3)
    assert res.distances[1] < 1e-14 * max(res.distances[0], 1e-300) + 1e-14
    with pytest.raises(ValueError):
        picard_iterate(rho0, ModelParams(), None, SolverConfig(dt=1e-2, t_end=0.1), 1)


def test_picard_contracts_on_short_horizon():
    d = DomainSpec(6.0, 64)
    rho0 = make_gaussian_field(d, 1.0, 0.9)
    res = picard_iterate(rho0, ModelParams(a=1.0, chi=1.0), None, SolverConfig(dt=5e-3, t_end=0.1), 6)
    r = res.ratios[:4]
    assert np.all(r < 1) and not res.diverged
