import math

import numpy as np
import pytest

from stochks.core import ConfigError, DomainSpec, ModelParams
from stochks.ensemble import (ExperimentKind, ExperimentSpec, PreconditionError, _paired_fields, _sup_gap,
                              ci_half_width, run, run_any_mass_blowup, run_continuous_dependence,
                              run_global_existence, run_small_perturbation, run_supercritical)
from stochks.solver import SolverConfig


def _spec(**kw):
    base = dict(kind="GlobalExistence", domain=DomainSpec(8.0, 64), params=ModelParams(a=1.0, sigma=0.5, chi=0.0),
                solver=SolverConfig(dt=1e-2, t_end=0.2, positivity_action="continue"), paths=8, seed=3,
                m0=1.0, width=1.0, record_every=5)
    base.update(kw)
    return ExperimentSpec(**base)


def test_kind_parse():
    assert ExperimentKind.parse("anymassblowup") is ExperimentKind.ANY_MASS_BLOWUP
    with pytest.raises(ConfigError):
        ExperimentKind.parse("Nope")
    with pytest.raises(ConfigError):
        _spec(paths=0)


def test_global_existence_without_coupling():
    s = run_global_existence(_spec(paths=50))
    assert s.passed and s.blowup_fraction == 0
    assert s.metrics["max_norm_ratio_p2"] <= 1.0 + 1e-12


def test_preconditions():
    sup = dict(params=ModelParams(a=1.0, sigma=0.5, chi=2 * math.pi), m0=10.0)
    with pytest.raises(PreconditionError):
        run_global_existence(_spec(**sup))
    with pytest.raises(PreconditionError):
        run_supercritical(_spec(kind="SupercriticalDivergence", m0=1.0,
                                params=ModelParams(a=1.0, sigma=0.5, chi=2 * math.pi)))
    with pytest.raises(PreconditionError):
        run_any_mass_blowup(_spec(kind="AnyMassBlowup"))


def test_reproducible():
    a = run(_spec(params=ModelParams(a=1.0, sigma=0.5, chi=0.5), m0=0.3))
    b = run(_spec(params=ModelParams(a=1.0, sigma=0.5, chi=0.5), m0=0.3))
    assert a.rows() == b.rows() and a.metrics == b.metrics


def test_ci_halves_when_paths_quadruple():
    small = run(_spec(paths=25, seed=1)).stats["sup"].ci[-1]
    big = run(_spec(paths=100, seed=1)).stats["sup"].ci[-1]
    assert small / big == pytest.approx(2.0, rel=0.3)
    assert ci_half_width(np.ones((1, 3)))[0] != ci_half_width(np.ones((1, 3)))[0]  # undefined for one sample


def test_small_perturbation_zero_eps_is_exact():
    spec = _spec(kind="SmallPerturbation", params=ModelParams(a=1.0, chi=0.5), m0=0.3, paths=4, C=1.0)
    s = run_small_perturbation(spec, eps_values=(0.1, 0.0))
    assert s.metrics["gap_mean"][1] == 0.0 and s.metrics["gap_mean"][0] > 0


def test_identical_data_same_path_zero_gap():
    spec = _spec(params=ModelParams(a=1.0, sigma=0.5, chi=0.5), m0=0.3, paths=3)
    noise = spec.noise_spec()
    inc = spec.increments(noise)
    _, a = _paired_fields(spec, spec.initial(), spec.params, noise, inc)
    _, b = _paired_fields(spec, spec.initial(), spec.params, noise, inc)
    assert np.all(_sup_gap(a, b, spec.domain.cell_area, 2.0) == 0.0)


def test_continuous_dependence_scaling():
    spec = _spec(kind="ContinuousDependence", params=ModelParams(a=1.0, sigma=0.5, chi=0.5), m0=0.3, paths=4,
                 C=1.0, domain=DomainSpec(8.0, 64))
    s = run_continuous_dependence(spec, deltas=(0.1, 0.05))
    g = s.metrics["gap_mean"]
    assert g[0] / g[1] == pytest.approx(4.0, rel=0.1)  # p-th power of the halved gap
    assert s.passed


def test_any_mass_vanishes_without_noise_strength():
    spec = _spec(kind="AnyMassBlowup", noise="constant", params=ModelParams(a=1.0, sigma=0.02, chi=2 * math.pi),
                 solver=SolverConfig(dt=0.1, t_end=1.0, positivity_action="continue"), m0=0.5, paths=8,
                 record_every=200, alpha_grid=(1.0,), beta_grid=(0.5,))
    s = run_any_mass_blowup(spec)
    assert s.metrics["observed_fraction"] == 0.0
    assert s.metrics["lower_bound"] < 1e-20
    assert s.passed
