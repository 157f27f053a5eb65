"""Built-in checks, one per quantitative claim, each sized by its arguments.

The acceptance suite calls these at full size. ``stochks verify`` runs the
``quick`` profile, which shrinks ensembles and grids but keeps every
tolerance.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from stochks.core import STREAM_PATH, DomainSpec, ModelParams, RngContext, lp_norm, make_gaussian_field
from stochks.diagnostics import CutoffSpec, ItoLpResidual
from stochks.ensemble import (ExperimentSpec, _Monitor, empirical_C, run_any_mass_blowup, run_global_existence,
                              run_particle_chaos, run_picard, run_small_perturbation, run_supercritical)
from stochks.moments import (BrownianEventSpec, MomentOracle, brownian_event_probability, smallness_boundary,
                             u_plus_series)
from stochks.noise import BrownianPath, DivergenceNoise, GeneralNoise, Phi, constant_mode_noise, make_fourier_basis
from stochks.solver import SolverConfig, simulate_batch

TWO_PI = 2.0 * math.pi


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: str
    detail: dict = field(default_factory=dict)
    elapsed: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: {self.value:.6g} ({self.threshold}) [{self.elapsed:.1f}s]"


def _timed(fn):
    def wrapper(*a, **kw):
        t0 = time.perf_counter()
        r = fn(*a, **kw)
        r.elapsed = time.perf_counter() - t0
        return r

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _paths(ctx, P, dt, steps, comps):
    return np.stack([BrownianPath.sample(ctx, dt, steps, comps, keys=(i,)).increments for i in range(P)])


@_timed
def check_mass_divergence(*, n=128, paths=20, steps=1000, dt=1e-3, seed=1, tol=1e-10) -> CheckResult:
    """Transport noise: relative mass change of every step on every path.

    Undershoots inside the positivity tolerance are zeroed and their mass is
    logged, so the ledger identity ``m(T) - added = m0`` is checked too.
    """
    d = DomainSpec(8.0, n)
    params = ModelParams(a=1.0, sigma=0.5, chi=TWO_PI)
    rho0 = make_gaussian_field(d, 1.0, 1.0)
    cfg = SolverConfig(dt=dt, t_end=dt * steps)
    inc = _paths(RngContext(seed), paths, dt, steps, 2)
    m0 = float(np.asarray(rho0.values).sum()) * d.cell_area
    prev = np.full(paths, m0)
    worst = np.zeros(2)  # per-step change, cumulative drift

    def obs(k, t, idx, rho):
        m = rho.sum(axis=(-2, -1)) * d.cell_area
        worst[0] = max(worst[0], float(np.abs(m - prev[idx]).max()) / m0)
        worst[1] = max(worst[1], float(np.abs(m - m0).max()) / m0)
        prev[idx] = m

    res = simulate_batch(rho0, params, DivergenceNoise(0.5), cfg, inc, observer=obs)
    final = res.final.sum(axis=(-2, -1)) * d.cell_area
    ledger = float(np.abs(final - res.clipped_mass - m0).max()) / m0
    ok = worst[0] <= tol and ledger <= tol and not res.blown_up.any()
    return CheckResult("mass conservation, transport noise", ok, worst[0], f"per-step change <= {tol:g}",
                       {"paths": paths, "steps": steps, "blown_up": int(res.blown_up.sum()),
                        "cumulative_drift": worst[1], "clip_ledger_error": ledger,
                        "clipped_mass_max": float(res.clipped_mass.max())})


@_timed
def check_mean_mass_general(*, n=64, paths=200, t_end=1.0, dt=2e-3, outputs=10, modes=5, sigma=0.5, seed=2) -> CheckResult:
    """Basis noise: ensemble mean mass within 3 standard errors of m0 at each output time."""
    d = DomainSpec(8.0, n)
    params = ModelParams(a=1.0, sigma=sigma, chi=math.pi)
    rho0 = make_gaussian_field(d, 1.0, 1.0)
    noise = GeneralNoise(tuple(make_fourier_basis(d, modes)), Phi("linear", sigma))
    cfg = SolverConfig(dt=dt, t_end=t_end, positivity_action="continue")
    every = cfg.steps // outputs
    inc = _paths(RngContext(seed), paths, dt, cfg.steps, noise.components)
    mon = _Monitor(d, paths, outputs + 1, ())
    res = simulate_batch(rho0, params, noise, cfg, inc, record_every=every, observer=mon)
    m = mon.trimmed()["mass"][:, 1:]
    m0 = 1.0
    mean = np.nanmean(m, axis=0)
    se = np.nanstd(m, axis=0, ddof=1) / np.sqrt(np.sum(np.isfinite(m), axis=0))
    z = np.abs(mean - m0) / se
    ok = bool(np.all(z <= 3.0)) and not res.blown_up.any()
    return CheckResult("mean mass, basis noise", ok, float(z.max()), "max |mean-m0|/SE <= 3",
                       {"mean": mean.tolist(), "se": se.tolist(), "blown_up": int(res.blown_up.sum()),
                        "breached_paths": int(np.isfinite(res.first_breach).sum()),
                        "worst_undershoot": float((res.final.min(axis=(-2, -1)) / res.final.max(axis=(-2, -1))).min())})


@_timed
def check_mass_oracle_rate(*, n=32, paths=20, t_end=1.0, dt0=1e-3, levels=3, sigma=0.5, seed=3) -> CheckResult:
    """Constant-mode linear noise: pathwise mass error against the exact exponential, under dt halving.

    Coarser paths come from the finest by summing increments, so every level
    sees the same Brownian path. The error is the path mean of
    ``max_t |m - m0 Ψ|``, and each halving should halve it within 20%.
    """
    d = DomainSpec(8.0, n)
    params = ModelParams(a=1.0, sigma=sigma, chi=math.pi)
    rho0 = make_gaussian_field(d, 1.0, 1.0)
    noise = constant_mode_noise(d, sigma)
    m0 = float(np.asarray(rho0.values).sum()) * d.cell_area
    coarse = [BrownianPath.sample(RngContext(seed), dt0, int(round(t_end / dt0)), 1, keys=(i,)) for i in range(paths)]
    errs = []
    for lvl in range(levels):
        ps = [p.refined(lvl) for p in coarse]
        dt = ps[0].dt
        cfg = SolverConfig(dt=dt, t_end=t_end, positivity_action="continue")
        W = np.stack([p.values()[:, 0] for p in ps])
        worst = np.zeros(paths)

        def obs(k, t, idx, rho):
            m = rho.sum(axis=(-2, -1)) * d.cell_area
            exact = m0 * np.exp(-0.5 * sigma**2 * t + sigma * W[idx, k])
            worst[idx] = np.maximum(worst[idx], np.abs(m - exact))

        res = simulate_batch(rho0, params, noise, cfg, ps, observer=obs)
        if res.blown_up.any():
            raise RuntimeError(f"mass-oracle run flagged blowup at dt={dt:g}")
        errs.append(float(worst.mean()))
    ratios = [errs[i] / errs[i + 1] for i in range(levels - 1)]
    ok = all(1.6 <= r <= 2.4 for r in ratios)
    return CheckResult("exact mass oracle, error halves with dt", ok, min(ratios), "ratios in [1.6, 2.4]",
                       {"errors": errs, "ratios": ratios})


@_timed
def check_virial_slope(*, n=256, L=8.0, dt=1e-3, t_end=0.2, s=1.0, seed=0) -> CheckResult:
    """Deterministic dM/dt against ``2a²m0 - (χ/2π)m0²`` for m0 = 1 and 3."""
    d = DomainSpec(L, n)
    params = ModelParams(a=1.0, sigma=0.0, chi=TWO_PI)
    cfg = SolverConfig(dt=dt, t_end=t_end, positivity_action="continue")
    worst = 0.0
    slopes = {}
    for m0 in (1.0, 3.0):
        rho0 = make_gaussian_field(d, m0, s)
        mon = _Monitor(d, 1, cfg.steps + 1, ())
        simulate_batch(rho0, params, None, cfg, None, observer=mon)
        M = mon.trimmed()["second_moment"][0]
        t = dt * np.arange(M.size)
        slope = float(np.polyfit(t, M, 1)[0])
        expect = 2 * params.a**2 * m0 - params.chi / TWO_PI * m0 * m0
        slopes[m0] = (slope, expect)
        worst = max(worst, abs(slope - expect) / abs(expect))
    return CheckResult("virial slope", worst <= 0.02, worst, "relative error <= 0.02",
                       {"slopes": {k: v[0] for k, v in slopes.items()}})


@_timed
def check_stochastic_comparison(*, n=64, L=8.0, paths=50, t_end=1.0, dt=1e-3, sigma=0.5, chi=math.pi, m0=1.0,
                                seed=5, rtol=1e-2) -> CheckResult:
    """Cutoff moment never exceeds the supersolution ``u⁺`` on the same scalar path."""
    d = DomainSpec(L, n)
    params = ModelParams(a=1.0, sigma=sigma, chi=chi)
    rho0 = make_gaussian_field(d, m0, 1.0)
    cut = CutoffSpec(2.0 / L)
    phi = cut.on(d)
    noise = constant_mode_noise(d, sigma)
    cfg = SolverConfig(dt=dt, t_end=t_end, positivity_action="continue")
    w = d.cell_area
    M0 = float((np.asarray(rho0.values) * d.r2).sum()) * w
    mass0 = float(np.asarray(rho0.values).sum()) * w
    ps = [BrownianPath.sample(RngContext(seed), dt, cfg.steps, 1, keys=(i,)) for i in range(paths)]
    U = np.stack([u_plus_series(MomentOracle(mass0, M0, params, p))[1] for p in ps])
    worst = np.full(1, -np.inf)

    def obs(k, t, idx, rho):
        u = (rho * phi).sum(axis=(-2, -1)) * w
        worst[0] = max(worst[0], float((u / U[idx, k]).max()))

    res = simulate_batch(rho0, params, noise, cfg, ps, observer=obs)
    ok = worst[0] <= 1 + rtol
    return CheckResult("stochastic comparison u_eps <= u_plus", ok, worst[0], f"max ratio <= {1 + rtol:g}",
                       {"blown_up": int(res.blown_up.sum())})


def supercritical_spec(*, n=128, paths=50, dt=5e-4, seed=6, L=8.0) -> ExperimentSpec:
    params = ModelParams(a=1.0, sigma=0.5, chi=TWO_PI)  # threshold mass 2
    cfg = SolverConfig(dt=dt, t_end=2.0, positivity_action="continue")
    return ExperimentSpec("SupercriticalDivergence", DomainSpec(L, n), params, cfg, paths=paths, seed=seed,
                          m0=3.0, width=1.0, noise="divergence", record_every=20)


@_timed
def check_supercritical(*, n=128, paths=50, refine_paths=4, dt=5e-4, seed=6) -> CheckResult:
    """m0 = 1.5 × threshold: firing before T* on >= 95% of paths; firing time stable under n → 2n."""
    spec = supercritical_spec(n=n, paths=paths, dt=dt, seed=seed)
    s = run_supercritical(spec)
    T_star = s.metrics["T_star"]
    frac = s.metrics["fraction_before_T"]
    fine = run_supercritical(supercritical_spec(n=2 * n, paths=refine_paths, dt=dt, seed=seed))
    coarse_t = s.firing_times[:refine_paths]
    fine_t = fine.firing_times
    both = np.isfinite(coarse_t) & np.isfinite(fine_t)
    rel = np.abs(coarse_t - fine_t) / fine_t
    worst = float(rel[both].max()) if both.all() else math.inf
    ok = frac >= 0.95 and worst <= 0.10
    return CheckResult("supercritical blowup before T*", ok, frac, "fraction >= 0.95 and refinement change <= 10%",
                       {"T_star": T_star, "refinement_change": worst, "median_firing": s.firing_quantiles.get(0.5),
                        "fine_firing": fine_t.tolist(), "coarse_firing": coarse_t.tolist()})


def subcritical_spec(*, n=64, paths=50, dt=5e-3, seed=7, t_end=1.0, kind="GlobalExistence") -> ExperimentSpec:
    params = ModelParams.from_nu(1.0, 0.5, 0.5)
    cfg = SolverConfig(dt=dt, t_end=t_end)
    base = ExperimentSpec(kind, DomainSpec(8.0, n), params, cfg, paths=paths, seed=seed, m0=1.0,
                          width=1.0, p_list=(2.0, 4.0), record_every=5)
    C = empirical_C(base, 4.0)
    boundary = min(smallness_boundary(params, C, p) for p in base.p_list)
    return base.replace(m0=0.5 * boundary, C=C)


@_timed
def check_norm_monotonicity(*, n=64, paths=50, dt=5e-3, seed=7) -> CheckResult:
    """Half the smallness boundary: ``‖ρ(t)‖_p / ‖ρ0‖_p <= 1.01`` for p = 2, 4 on every path."""
    spec = subcritical_spec(n=n, paths=paths, dt=dt, seed=seed)
    s = run_global_existence(spec)
    worst = max(s.metrics["max_norm_ratio_p2"], s.metrics["max_norm_ratio_p4"])
    return CheckResult("subcritical norm monotonicity", bool(s.passed), worst, "max ratio <= 1.01",
                       {"m0": spec.m0, "C": spec.C, **s.metrics, "failures": s.failures[:5]})


@_timed
def check_small_perturbation(*, n=64, paths=100, dt=5e-3, seed=8) -> CheckResult:
    """Gap to the deterministic limit: strictly decreasing in ε at 3 sigma, log-log slope in [0.7, 1.3]."""
    spec = subcritical_spec(n=n, paths=paths, dt=dt, seed=seed, kind="SmallPerturbation")
    spec = spec.replace(p_list=(2.0,), sweep=(0.2, 0.1, 0.05, 0.025))
    s = run_small_perturbation(spec)
    return CheckResult("small-perturbation convergence", bool(s.passed), s.metrics["slope"],
                       "strictly decreasing and slope in [0.7, 1.3]", dict(s.metrics))


@_timed
def check_event_probability(*, n_paths=100_000, steps=200, seed=9) -> CheckResult:
    spec = BrownianEventSpec(alpha=0.5, beta=1.0, t=1.0)
    r = brownian_event_probability(spec, 1.0, n_paths=n_paths, steps=steps, ctx=RngContext(seed))
    z = abs(r.mc_estimate - r.closed_form) / r.mc_stderr
    return CheckResult("Brownian event probability", z <= 3.0, z, "|MC - closed form| <= 3 SE",
                       {"mc": r.mc_estimate, "se": r.mc_stderr, "closed_form": r.closed_form,
                        "grid_monitored": r.grid_fraction})


def any_mass_spec(*, n=128, paths=200, dt=5e-3, seed=10) -> ExperimentSpec:
    params = ModelParams(a=1.0, sigma=0.093, chi=TWO_PI)  # threshold mass 2
    cfg = SolverConfig(dt=dt, t_end=1.0, positivity_action="continue")
    return ExperimentSpec("AnyMassBlowup", DomainSpec(8.0, n), params, cfg, paths=paths, seed=seed, m0=1.998,
                          width=math.sqrt(0.03), noise="constant", record_every=50)


@_timed
def check_any_mass_blowup(*, n=128, paths=200, dt=5e-3, seed=10) -> CheckResult:
    """Subcritical mass: observed fraction before t₂ >= ½p_{α,β} - 3 SE, with ½p_{α,β} >= 0.05."""
    s = run_any_mass_blowup(any_mass_spec(n=n, paths=paths, dt=dt, seed=seed))
    m = s.metrics
    ok = bool(s.passed) and m["lower_bound"] >= 0.05
    return CheckResult("any-mass blowup evidence", ok, m["observed_fraction"],
                       f">= {m['lower_bound']:.4f} - 3*{m['stderr_test']:.4f}", dict(m))


@_timed
def check_picard(*, n=64, dt=1e-3, t_end=0.1, iterations=6) -> CheckResult:
    """Picard iterate distances shrink geometrically, and halving T cuts z by >= 1.8."""
    spec = ExperimentSpec("PicardContraction", DomainSpec(8.0, n), ModelParams(a=1.0, chi=1.0),
                          SolverConfig(dt=dt, t_end=t_end), m0=1.0, noise="none")
    s = run_picard(spec, iterations=iterations)
    return CheckResult("Picard contraction", bool(s.passed), s.metrics["reduction"],
                       "z < 1 over >= 4 iterations and z(T)/z(T/2) >= 1.8", dict(s.metrics))


@_timed
def check_particle_chaos(*, n=256, N_values=(2000, 8000), replicas=2, dt=2e-3, seed=11) -> CheckResult:
    """Second-moment gap <= 5% over [0, 0.2] at N=2000, smaller at N=8000."""
    spec = ExperimentSpec("ParticleChaos", DomainSpec(6.0, n), ModelParams(a=1.0, chi=math.pi),
                          SolverConfig(dt=dt, t_end=0.2), m0=1.0, width=1.0, record_every=10, seed=seed)
    s = run_particle_chaos(spec, N_values=N_values, replicas=replicas)
    first = N_values[0]
    return CheckResult("particle chaos gap", bool(s.passed), s.metrics[f"max_moment_gap_N{first}"],
                       "gap <= 0.05 and decreasing in N", dict(s.metrics))


def _ito_residual(n, dt, t_end, p, paths, seed, qv="realized"):
    d = DomainSpec(8.0, n)
    params = ModelParams(a=1.0, sigma=0.5, chi=math.pi)
    rho0 = make_gaussian_field(d, 1.0, 1.0)
    cfg = SolverConfig(dt=dt, t_end=t_end, positivity_action="continue")
    out = []
    for i in range(paths):
        path = BrownianPath.sample(RngContext(seed), 4e-3, int(round(t_end / 4e-3)), 2, keys=(i,))
        path = path.refined(int(round(math.log2(4e-3 / dt))))
        acc = ItoLpResidual(params, d, p, quadratic_variation=qv)
        inc = path.increments

        def obs(k, t, idx, rho):
            acc.update(t, rho[0], inc[k] if k < len(inc) else None)

        simulate_batch(rho0, params, DivergenceNoise(0.5), cfg, [path], observer=obs)
        out.append(acc.relative_max())
    return float(np.mean(out))


@_timed
def check_ito_residual(*, levels=((64, 4e-3), (128, 2e-3)), t_end=0.5, paths=4, seed=12) -> CheckResult:
    """Itô L^p residual shrinks by >= 1.5 under dt/2, n → 2n, for p = 2 and 4."""
    detail = {}
    worst = math.inf
    for p in (2.0, 4.0):
        r = [_ito_residual(n, dt, t_end, p, paths, seed) for n, dt in levels]
        ratio = r[0] / r[1]
        detail[f"p{p:g}"] = {"residuals": r, "ratio": ratio}
        worst = min(worst, ratio)
    return CheckResult("Ito L^p residual refinement", worst >= 1.5, worst, "ratio >= 1.5 for p = 2, 4", detail)


@_timed
def check_explicit_guard(*, n=64) -> CheckResult:
    """An explicit step above ``dx²/(2a²)`` must be refused."""
    from stochks.core import ConfigError

    d = DomainSpec(8.0, n)
    cfg = SolverConfig(dt=1.0, t_end=1.0, stepping="explicit")
    try:
        cfg.validate(d, ModelParams())
    except ConfigError:
        return CheckResult("explicit stability guard", True, 1.0, "unstable dt rejected")
    return CheckResult("explicit stability guard", False, 0.0, "unstable dt rejected")


@_timed
def check_snapshot_roundtrip(*, n=32, tmpdir=None) -> CheckResult:
    import tempfile
    from pathlib import Path

    from stochks.io import SnapshotError, read_snapshot, write_snapshot

    d = DomainSpec(4.0, n)
    f = make_gaussian_field(d, 1.0, 0.5)
    with tempfile.TemporaryDirectory(dir=tmpdir) as td:
        path = Path(td) / "snap.sks"
        write_snapshot(path, f, 0.25, ModelParams())
        g, _ = read_snapshot(path)
        exact = np.array_equal(np.asarray(f.values), np.asarray(g.values))
        raw = bytearray(path.read_bytes())
        raw[1] ^= 0xFF
        path.write_bytes(bytes(raw))
        try:
            read_snapshot(path)
            caught = False
        except SnapshotError:
            caught = True
    return CheckResult("snapshot round trip", exact and caught, float(exact and caught), "bit-exact, corruption detected")


QUICK = {
    "mass": lambda: check_mass_divergence(n=128, paths=2, steps=200),
    "mean_mass": lambda: check_mean_mass_general(n=64, paths=100, t_end=0.5, dt=5e-3),
    "virial": lambda: check_virial_slope(n=128),
    "comparison": lambda: check_stochastic_comparison(n=64, paths=8, t_end=0.5, dt=5e-3),
    "event": lambda: check_event_probability(n_paths=20_000),
    "ito": lambda: check_ito_residual(paths=1, t_end=0.2),
    "guard": check_explicit_guard,
    "snapshot": check_snapshot_roundtrip,
}

FULL = {
    "mass": check_mass_divergence,
    "mean_mass": check_mean_mass_general,
    "mass_oracle": check_mass_oracle_rate,
    "virial": check_virial_slope,
    "comparison": check_stochastic_comparison,
    "supercritical": check_supercritical,
    "monotonicity": check_norm_monotonicity,
    "perturbation": check_small_perturbation,
    "event": check_event_probability,
    "any_mass": check_any_mass_blowup,
    "picard": check_picard,
    "particles": check_particle_chaos,
    "ito": check_ito_residual,
    "guard": check_explicit_guard,
    "snapshot": check_snapshot_roundtrip,
}


def run_suite(profile: str = "quick", only=None, report=print) -> list:
    table = {"quick": QUICK, "full": FULL}[profile]
    results = []
    for name, fn in table.items():
        if only and name not in only:
            continue
        r = fn()
        results.append(r)
        if report:
            report(r.line())
    return results
