import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochks.core import (ConfigError, DomainSpec, Field, ModelParams, RngContext, lp_norm, lp_norm_array,
                          make_gaussian_field, mass)


@pytest.mark.parametrize("n", [8, 15, 24, 100])
def test_domain_rejects_bad_n(n):
    with pytest.raises(ConfigError):
        DomainSpec(4.0, n)


@pytest.mark.parametrize("L", [0.0, -1.0])
def test_domain_rejects_bad_width(L):
    with pytest.raises(ConfigError):
        DomainSpec(L, 16)


def test_domain_geometry():
    d = DomainSpec(4.0, 32)
    assert d.dx == 0.25
    assert d.area == 64.0
    assert d.coords[0] == -4.0 and d.coords[-1] == 4.0 - 0.25
    X, Y = d.mesh
    assert X[3, 0] == d.coords[3] and Y[0, 3] == d.coords[3]
    assert d.refined().n == 64
    assert d.contains((3.9, -4.0)) and not d.contains((4.0, 0.0))


def test_field_is_immutable_copy():
    d = DomainSpec(1.0, 16)
    raw = np.ones((16, 16))
    f = Field(d, raw)
    raw[0, 0] = 5.0
    assert f.values[0, 0] == 1.0
    with pytest.raises(ValueError):
        f.values[0, 0] = 2.0


def test_field_rejects_nonfinite_and_shape():
    d = DomainSpec(1.0, 16)
    bad = np.ones((16, 16))
    bad[2, 2] = np.nan
    with pytest.raises(ValueError):
        Field(d, bad)
    with pytest.raises(ValueError):
        Field(d, np.ones((16, 8)))


def test_field_arithmetic_and_translation():
    d = DomainSpec(6.0, 32)
    f = make_gaussian_field(d, 1.0, 0.8)
    g = (f + f) * 0.5 - f
    assert np.all(g.values == 0)
    t = f.translated(3, -2)
    assert np.array_equal(t.values, np.roll(f.values, (3, -2), axis=(0, 1)))
    with pytest.raises(ValueError):
        f + Field.zeros(DomainSpec(2.0, 16))


def test_params_nu_relation():
    p = ModelParams.from_nu(0.8, 0.6, 1.0)
    assert p.a == pytest.approx(1.0)
    assert p.nu2 == pytest.approx(0.64)
    assert p.diffusion == pytest.approx(0.5)
    with pytest.raises(ConfigError):
        ModelParams(a=1.0, sigma=1.0).require_divergence()
    with pytest.raises(ConfigError):
        ModelParams(p=1.5)


def test_rng_reproducible_and_streams_differ():
    a = RngContext(7).generator(0, 3).standard_normal(5)
    b = RngContext(7).generator(0, 3).standard_normal(5)
    c = RngContext(7).generator(0, 4).standard_normal(5)
    d = RngContext(7, stream=1).generator(0, 3).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_gaussian_mass_and_guards():
    d = DomainSpec(6.0, 64)
    f = make_gaussian_field(d, 2.5, 0.8, (0.5, -0.5))
    assert abs(mass(f) - 2.5) <= 1e-8 * 2.5
    with pytest.raises(ConfigError):
        make_gaussian_field(d, 1.0, 1.5)  # wider than L/6
    with pytest.raises(ConfigError):
        make_gaussian_field(d, 1.0, 0.5, (7.0, 0.0))


def test_gaussian_l2_norm_oracle():
    # ‖ρ‖₂² = m0² / (4π s²) for the isotropic Gaussian
    d = DomainSpec(6.0, 128)
    f = make_gaussian_field(d, 3.0, 0.7)
    assert lp_norm(f, 2) == pytest.approx(math.sqrt(9.0 / (4 * math.pi * 0.49)), rel=1e-10)


@settings(max_examples=25, deadline=None)
@given(m=st.floats(0.01, 50.0), p=st.floats(1.0, 8.0))
def test_lp_norm_homogeneous(m, p):
    d = DomainSpec(6.0, 32)
    f = make_gaussian_field(d, 1.0, 0.8)
    assert lp_norm(f * m, p) == pytest.approx(m * lp_norm(f, p), rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(p=st.floats(1.0, 10.0))
def test_lp_norm_batch_matches_single(p):
    d = DomainSpec(6.0, 32)
    fs = [make_gaussian_field(d, m, 0.8) for m in (0.5, 1.0, 2.0)]
    batch = lp_norm_array(np.stack([f.values for f in fs]), d.cell_area, p)
    assert np.allclose(batch, [lp_norm(f, p) for f in fs], rtol=1e-13)
