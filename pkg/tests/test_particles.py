import math

import numpy as np
import pytest
from scipy.stats import norm

from stochks.core import ConfigError, DomainSpec, ModelParams, RngContext, make_gaussian_field
from stochks.particles import (ParticleConfig, ParticleState, ParticleTrajectory, chaos_gap, empirical_density,
                               gaussian_particles, pair_drift, particle_step, simulate_particles)
from stochks.solver import SolverConfig, solve_deterministic

D = DomainSpec(8.0, 64)


def test_config_guards():
    with pytest.raises(ConfigError):
        ParticleConfig(N=1, dt=1e-3, domain=D)
    with pytest.raises(ConfigError):
        ParticleConfig(N=10, dt=1e-3, domain=D, delta=0.0)
    with pytest.raises(ConfigError):
        ParticleConfig(N=10, dt=1e-3, domain=D, normalization="N+1")
    with pytest.raises(ConfigError):
        ParticleConfig(N=10, dt=1e-3, domain=D, kernel="bessel")
    with pytest.raises(ConfigError):
        ParticleConfig(N=10, dt=1e-3, domain=D, common_sigma=1.0)
    with pytest.raises(ValueError):
        ParticleState(np.array([[0.0, np.nan]]))


def test_brownian_msd():
    cfg = ParticleConfig(N=2000, dt=1e-2, domain=DomainSpec(20.0, 64), a=1.0, chi=0.0, init_width=0.5)
    s0 = gaussian_particles(cfg, RngContext(1))
    traj = simulate_particles(cfg, RngContext(1), 20, record_every=20, state=s0)
    disp = traj.snapshots[-1] - traj.snapshots[0]
    sq = (disp**2).sum(axis=1)
    se = sq.std(ddof=1) / math.sqrt(sq.size)
    assert abs(sq.mean() - 2 * 1.0 * 0.2) <= 3 * se


def test_common_noise_is_rigid_translation():
    cfg = ParticleConfig(N=200, dt=1e-2, domain=DomainSpec(20.0, 64), a=0.5, chi=0.0, common_sigma=0.4,
                         init_width=1.0)
    s = gaussian_particles(cfg, RngContext(3))
    rng = np.random.default_rng(0)
    x0 = s.positions.copy()
    for _ in range(10):
        s = particle_step(s, cfg, rng, dB=np.zeros((200, 2)))
    shift = s.positions - x0
    assert np.allclose(shift, shift[0], atol=1e-12)
    assert np.allclose(shift[0], -0.4 * s.common_W, atol=1e-12)


def test_drift_antisymmetric_and_exchangeable():
    rng = np.random.default_rng(5)
    pos = rng.normal(size=(300, 2))
    f = pair_drift(pos, 8.0, 0.1, 1.0)
    assert np.abs(f.sum(axis=0)).max() < 1e-11
    perm = rng.permutation(300)
    g = pair_drift(pos[perm], 8.0, 0.1, 1.0)
    assert np.array_equal(g, f[perm])
    kde = empirical_density(pos, 0.4, D).values
    assert np.array_equal(kde, empirical_density(pos[perm], 0.4, D).values)


def test_drift_is_attractive():
    pos = np.array([[-0.5, 0.0], [0.5, 0.0]])
    f = pair_drift(pos, 8.0, 0.01, 1.0)
    assert f[0, 0] > 0 and f[1, 0] < 0


def test_kde_single_particle_and_mass():
    d = DomainSpec(8.0, 128)
    one = empirical_density(np.zeros((1, 2)), 0.7, d, m0=2.0)
    ref = make_gaussian_field(d, 2.0, 0.7)
    assert np.max(np.abs(one.values - ref.values)) < 1e-10 * ref.sup()
    pos = np.random.default_rng(1).normal(size=(500, 2))
    assert float(empirical_density(pos, 0.3, d, 1.5).values.sum()) * d.cell_area == pytest.approx(1.5, abs=1e-8)
    with pytest.raises(ValueError):
        empirical_density(pos, 0.0, d)


def test_kde_converges_in_N():
    d = DomainSpec(8.0, 128)
    ref = make_gaussian_field(d, 1.0, 1.0).values
    errs = []
    for N in (500, 2000, 8000):
        pos = np.random.default_rng(N).normal(size=(N, 2))
        kde = empirical_density(pos, 1.06 * N ** (-1 / 6), d).values
        errs.append(math.sqrt(float(((kde - ref) ** 2).sum()) * d.cell_area))
    assert errs[0] > errs[1] > errs[2]


def test_chaos_gap_grid_mismatch():
    traj = ParticleTrajectory(np.array([0.0, 0.1]), [np.zeros((2, 2))] * 2, 1.0)
    with pytest.raises(ValueError):
        chaos_gap(traj, np.array([0.0, 0.2]), [np.zeros((64, 64))] * 2, D, 0.3)


def test_heat_chaos_gap_small():
    d = DomainSpec(8.0, 64)
    cfg = SolverConfig(dt=1e-2, t_end=0.2)
    star = solve_deterministic(make_gaussian_field(d, 1.0, 1.0), ModelParams(chi=0.0), cfg, record_every=5)
    pc = ParticleConfig(N=4000, dt=1e-2, domain=d, chi=0.0)
    traj = simulate_particles(pc, RngContext(2), cfg.steps, record_every=5)
    g = chaos_gap(traj, star.times, star.fields, d, 0.3)
    assert g.moment_gap.max() < 0.05


def test_common_noise_coupling_tightens_gap():
    from stochks.noise import BrownianPath, DivergenceNoise
    from stochks.solver import simulate

    d = DomainSpec(8.0, 128)
    params = ModelParams(a=1.0, sigma=0.8, chi=0.0)
    cfg = SolverConfig(dt=1e-2, t_end=0.5, positivity_action="continue")
    pc = ParticleConfig(N=2000, dt=1e-2, domain=d, a=1.0, chi=0.0, common_sigma=0.8)
    coupled, free = [], []
    for r in range(4):
        path = BrownianPath.sample(RngContext(20), cfg.dt, cfg.steps, 2, keys=(r,))
        other = BrownianPath.sample(RngContext(21), cfg.dt, cfg.steps, 2, keys=(r,))
        pde = simulate(make_gaussian_field(d, 1.0, 1.0), params, DivergenceNoise(0.8), cfg, path, record_every=10)
        for inc, sink in ((path.increments, coupled), (other.increments, free)):
            traj = simulate_particles(pc, RngContext(30, stream=r), cfg.steps, record_every=10,
                                      common_increments=inc)
            sink.append(chaos_gap(traj, pde.times, pde.fields, d, 0.3).moment_gap.mean())
    assert np.mean(coupled) < np.mean(free)
