import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochks.core import ConfigError, DomainSpec, Field, RngContext, make_gaussian_field
from stochks.noise import (BrownianPath, DivergenceNoise, GeneralNoise, Phi, basis_l2_norms, constant_mode_noise,
                           make_fourier_basis, noise_term, sample_increments, spectral_gradient)


def test_path_reproducible():
    a = BrownianPath.sample(RngContext(3), 0.01, 50, 2, keys=(4,))
    b = BrownianPath.sample(RngContext(3), 0.01, 50, 2, keys=(4,))
    assert np.array_equal(a.increments, b.increments)
    assert a.values()[0].tolist() == [0.0, 0.0]
    assert a.horizon == pytest.approx(0.5)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32), levels=st.integers(1, 3))
def test_bridge_refinement_keeps_coarse_values(seed, levels):
    p = BrownianPath.sample(RngContext(seed), 0.02, 16, 2)
    f = p.refined(levels)
    stride = 2**levels
    assert f.dt == pytest.approx(p.dt / stride)
    assert np.allclose(f.values()[::stride], p.values(), atol=1e-13)
    again = p.refined(levels)
    assert np.array_equal(f.increments, again.increments)


def test_bridge_increment_variance():
    p = BrownianPath.sample(RngContext(1), 0.01, 20000, 1).refine()
    assert np.var(p.increments) == pytest.approx(0.005, rel=0.03)


def test_refine_needs_context():
    with pytest.raises(ValueError):
        BrownianPath(0.1, np.zeros((4, 1))).refine()


def test_phi_kinds():
    r = np.linspace(0, 10, 11)
    assert np.allclose(Phi("linear", 0.5)(r), 0.5 * r)
    b = Phi("bounded", 1.0, rho_cap=2.0)(r)
    assert np.all(b <= 2.0) and np.all(np.diff(b) > 0)
    t = Phi("table", table_x=(0.0, 10.0), table_y=(0.0, 5.0))(r)
    assert np.allclose(t, 0.5 * r)
    with pytest.raises(ConfigError):
        Phi("cubic")
    with pytest.raises(ConfigError):
        Phi("table", table_x=(1.0, 0.0), table_y=(0.0, 1.0))


def test_basis_noise_checks_sup_norm():
    d = DomainSpec(4.0, 16)
    with pytest.raises(ConfigError):
        GeneralNoise(((1.0, Field(d, 2 * np.ones((16, 16)))),))
    with pytest.raises(ConfigError):
        GeneralNoise(())
    assert constant_mode_noise(d, 0.3).single_constant


def test_fourier_basis_order_and_norms():
    d = DomainSpec(4.0, 32)
    basis = make_fourier_basis(d, 7, alpha0=2.0)
    assert len(basis) == 7
    assert [a for a, _ in basis] == pytest.approx([2.0 / k for k in range(1, 8)])
    for _, e in basis:
        assert np.abs(e.values).max() == pytest.approx(1.0)
    norms = basis_l2_norms(basis)
    assert norms[0] == pytest.approx(8.0)  # sqrt(area) for the constant mode
    assert np.allclose(norms[1:], 8.0 / math.sqrt(2))
    with pytest.raises(ConfigError):
        make_fourier_basis(DomainSpec(4.0, 16), 400)


def test_sample_increments_guard_and_shape():
    with pytest.raises(ValueError):
        sample_increments(DivergenceNoise(1.0), 0.0, RngContext(0))
    assert sample_increments(DivergenceNoise(1.0), 0.1, RngContext(0), 1).shape == (2,)


def test_noise_term_both_regimes():
    d = DomainSpec(6.0, 32)
    f = make_gaussian_field(d, 1.0, 0.8)
    g = spectral_gradient(f)
    v = noise_term(DivergenceNoise(0.5), f, g, np.array([0.1, 0.0]))
    assert np.allclose(v.values, 0.05 * g[0].values)
    w = noise_term(constant_mode_noise(d, 0.5), f, g, np.array([0.2]))
    assert np.allclose(w.values, 0.1 * f.values)
    with pytest.raises(ValueError):
        noise_term(DivergenceNoise(0.5), f, g, np.array([0.1]))
