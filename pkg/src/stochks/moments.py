"""Exact scalar oracles for the mass and second-moment SDEs and the blowup thresholds.

With scalar noise ``Φ(ρ) = σρ`` on a constant mode the mass solves
``dm = σ m dW``, so ``m = m0 Ψ`` with ``Ψ(t) = exp(-σ²t/2 + σW(t))``. The
second moment then has the closed form::

    M(t) = Ψ(t) (M0 + 2a²m0 t - (χ m0²/2π) ∫₀ᵗ Ψ(s) ds)

The supersolution ``u⁺`` has the same form with ``+`` on the last term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

from stochks.core import STREAM_EVENTS, ConfigError, ModelParams, RngContext
from stochks.noise import BrownianPath

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True, eq=False)
class MomentOracle:
    m0: float
    M0: float
    params: ModelParams
    path: BrownianPath | None = None  # component 0 drives the scalar noise

    def __post_init__(self):
        if self.m0 < 0 or self.M0 < 0:
            raise ConfigError("m0 and M0 must be nonnegative")

    def _w(self) -> np.ndarray:
        if self.path is None:
            return None
        return self.path.values()[:, 0]

    def psi_series(self) -> tuple[np.ndarray, np.ndarray]:
        """(times, Ψ) on the path grid."""
        s = self.params.sigma
        if self.path is None:
            raise ValueError("oracle has no path")
        t = self.path.times
        return t, np.exp(-0.5 * s * s * t + s * self._w())

    def _psi_at(self, t: float) -> float:
        s = self.params.sigma
        if s == 0.0 or self.path is None:
            return 1.0
        w = self._w_at(t)
        return math.exp(-0.5 * s * s * t + s * w)

    def _w_at(self, t: float) -> float:
        if t < 0 or t > self.path.horizon * (1 + 1e-12):
            raise ValueError(f"t={t} outside the path horizon {self.path.horizon}")
        return float(np.interp(t, self.path.times, self._w()))

    def _psi_integral(self, t: float) -> float:
        if self.params.sigma == 0.0 or self.path is None:
            return t
        times, psi = self.psi_series()
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (psi[1:] + psi[:-1]) * np.diff(times))])
        return float(np.interp(t, times, cum))


def exact_mass(oracle: MomentOracle, t: float) -> float:
    return oracle.m0 * oracle._psi_at(t)


def _moment(oracle: MomentOracle, t: float, sign: float) -> float:
    p = oracle.params
    m0 = oracle.m0
    return oracle._psi_at(t) * (
        oracle.M0 + 2.0 * p.a**2 * m0 * t + sign * p.chi * m0 * m0 / TWO_PI * oracle._psi_integral(t)
    )


def exact_second_moment(oracle: MomentOracle, t: float) -> float:
    return _moment(oracle, t, -1.0)


def supersolution_u_plus(oracle: MomentOracle, t: float) -> float:
    return _moment(oracle, t, +1.0)


def _series(oracle: MomentOracle, sign: float | None):
    p = oracle.params
    if oracle.path is None or p.sigma == 0.0:
        if oracle.path is None:
            raise ValueError("series need a time grid; attach a path")
        t = oracle.path.times
        psi = np.ones_like(t)
    else:
        t, psi = oracle.psi_series()
    if sign is None:
        return t, oracle.m0 * psi
    integ = np.concatenate([[0.0], np.cumsum(0.5 * (psi[1:] + psi[:-1]) * np.diff(t))])
    m0 = oracle.m0
    return t, psi * (oracle.M0 + 2.0 * p.a**2 * m0 * t + sign * p.chi * m0 * m0 / TWO_PI * integ)


def mass_series(oracle):
    return _series(oracle, None)


def second_moment_series(oracle):
    return _series(oracle, -1.0)


def u_plus_series(oracle):
    return _series(oracle, +1.0)


def u_plus_euler_maruyama(oracle: MomentOracle) -> tuple[np.ndarray, np.ndarray]:
    """Euler–Maruyama integration of ``du⁺ = (2a²m + (χ/2π)m²)dt + σu⁺dW`` with exact ``m``."""
    p = oracle.params
    t, m = mass_series(oracle)
    dW = oracle.path.increments[:, 0]
    dt = oracle.path.dt
    u = np.empty_like(t)
    u[0] = oracle.M0
    drift = 2.0 * p.a**2 * m + p.chi / TWO_PI * m * m
    for k in range(len(dW)):
        u[k + 1] = u[k] + drift[k] * dt + p.sigma * u[k] * dW[k]
    return t, u


def smallness_condition(m0: float, params: ModelParams, C: float, p: float | None = None) -> bool:
    """``C(χ - ν²p(p-1)/2) m0^{-p/(p-1)} + χ m0^{(p-2)/(p-1)} <= 0``, evaluated literally."""
    if not m0 > 0 or not C > 0:
        raise ValueError("m0 and C must be positive")
    p = params.p if p is None else p
    lhs = C * (-params.nu2 * p * (p - 1) / 2.0 + params.chi) * m0 ** (-p / (p - 1)) + params.chi * m0 ** ((p - 2) / (p - 1))
    return bool(lhs <= 0)


def smallness_boundary(params: ModelParams, C: float, p: float | None = None, *, m_max: float = 1e6,
                       rtol: float = 1e-12) -> float:
    """Largest ``m0`` satisfying the smallness condition, found by bisection.

    Returns ``inf`` when every mass qualifies (``χ = 0``) and ``0`` when none does.
    """
    p = params.p if p is None else p
    if params.chi == 0:
        return math.inf
    tiny = 1e-12
    if not smallness_condition(tiny, params, C, p):
        return 0.0
    lo, hi = tiny, 1.0
    while smallness_condition(hi, params, C, p):
        lo, hi = hi, 2.0 * hi
        if hi > m_max:
            return math.inf
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if smallness_condition(mid, params, C, p):
            lo = mid
        else:
            hi = mid
    return lo


def blowup_mass_condition(m0: float, params: ModelParams) -> bool:
    if m0 < 0:
        raise ValueError("m0 must be nonnegative")
    return params.chi / TWO_PI * m0 > 2.0 * params.a**2


def threshold_mass(params: ModelParams) -> float:
    if params.chi <= 0:
        return math.inf
    return 4.0 * math.pi * params.a**2 / params.chi


def blowup_time_bound(m0: float, M0: float, params: ModelParams) -> float:
    if not blowup_mass_condition(m0, params):
        raise ValueError(f"m0={m0} is not supercritical (threshold {threshold_mass(params):.6g})")
    return M0 / (params.chi / TWO_PI * m0 * m0 - 2.0 * params.a**2 * m0)


def _t2_gap(t, m0, M0, params, alpha, beta):
    s = params.sigma
    k = params.chi * m0 * m0 / (s * alpha * TWO_PI)
    return k * math.exp(s * (alpha * t - beta)) - (M0 + 2.0 * params.a**2 * m0 * t + k * math.exp(-s * beta))


def t2_condition(t, m0, M0, params, alpha, beta) -> bool:
    return _t2_gap(t, m0, M0, params, alpha, beta) >= 0


def t2_min(m0: float, M0: float, params: ModelParams, alpha: float, beta: float, *, t_max: float = 1e4,
           rtol: float = 1e-8) -> float:
    """Smallest ``t₂`` with ``M0 + 2a²m0t₂ + K e^{-σβ} <= K e^{σ(αt₂-β)}``, ``K = χm0²/(2πσα)``.

    The gap is convex in ``t₂`` and equals ``-M0`` at zero, so the feasible
    set is a half-line. Bisection runs after bracketing by doubling.
    """
    if not (params.sigma > 0 and alpha > 0 and beta > 0 and m0 > 0):
        raise ValueError("t2 needs sigma, alpha, beta, m0 > 0")
    if t2_condition(0.0, m0, M0, params, alpha, beta):
        return 0.0
    hi = 1e-3
    while not t2_condition(hi, m0, M0, params, alpha, beta):
        hi *= 2.0
        if hi > t_max:
            raise ValueError(f"no t2 bracket below t_max={t_max}")
    lo = 0.0 if hi <= 1e-3 else hi / 2.0
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if t2_condition(mid, m0, M0, params, alpha, beta):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class BrownianEventSpec:
    alpha: float
    beta: float
    t: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0 and self.t > 0):
            raise ConfigError("alpha, beta and t must be positive")


@dataclass
class EventProbability:
    mc_estimate: float
    mc_stderr: float
    closed_form: float
    grid_fraction: float  # monitored at grid times only, biased upward


def event_probability_closed_form(spec: BrownianEventSpec, sigma: float) -> float:
    """``P(inf_{s<=t}(W(s) - cs) > -β)`` for ``c = σ/2 + α`` by the reflection principle."""
    c = 0.5 * sigma + spec.alpha
    t, b = spec.t, spec.beta
    rt = math.sqrt(t)
    # the reflected term is formed in log space; e^{2cβ} alone overflows for large β
    return float(ndtr((b - c * t) / rt) - math.exp(2.0 * c * b + log_ndtr((-b - c * t) / rt)))


def brownian_event_probability(spec: BrownianEventSpec, sigma: float, *, n_paths: int = 100_000, steps: int = 200,
                               ctx: RngContext | None = None, chunk: int = 20_000) -> EventProbability:
    """Monte Carlo and closed-form probability that ``W(s) >= (σ/2+α)s - β`` on ``[0, t]``.

    Between grid times the path crosses the line with the Brownian-bridge
    probability ``exp(-2 x_a x_b / Δt)``, and that crossing is drawn as a
    Bernoulli. The Monte Carlo event is then exactly the continuous-time
    event. The plain grid-monitored fraction is returned too, for reference.
    """
    ctx = ctx or RngContext(0)
    rng = ctx.generator(STREAM_EVENTS)
    c = 0.5 * sigma + spec.alpha
    dt = spec.t / steps
    s = np.arange(1, steps + 1) * dt
    hits = 0
    grid_hits = 0
    done = 0
    while done < n_paths:
        m = min(chunk, n_paths - done)
        W = np.cumsum(rng.standard_normal((m, steps)) * math.sqrt(dt), axis=1)
        X = W - c * s + spec.beta  # distance above the line
        Xa = np.concatenate([np.full((m, 1), spec.beta), X[:, :-1]], axis=1)
        above = (X > 0).all(axis=1)
        grid_hits += int(above.sum())
        with np.errstate(over="ignore"):
            cross = np.exp(-2.0 * np.maximum(Xa, 0) * np.maximum(X, 0) / dt)
        u = rng.random((m, steps))
        survive = above & ~(u < cross).any(axis=1)
        hits += int(survive.sum())
        done += m
    p = hits / n_paths
    se = math.sqrt(max(p * (1 - p), 1e-300) / n_paths)
    return EventProbability(p, se, event_probability_closed_form(spec, sigma), grid_hits / n_paths)


def blowup_probability_lower_bound(p_ab: float) -> float:
    if not 0.0 <= p_ab <= 1.0:
        raise ValueError("probability must lie in [0, 1]")
    return 0.5 * p_ab


def sweep_alpha_beta(m0: float, M0: float, params: ModelParams, alphas, betas, *, t_max: float = 1e4):
    """Rows ``(alpha, beta, t2, p_ab, bound)`` over the grid, with p from the closed form."""
    rows = []
    for a in alphas:
        for b in betas:
            try:
                t2 = t2_min(m0, M0, params, a, b, t_max=t_max)
            except ValueError:
                continue
            if t2 <= 0:
                p = 1.0
            else:
                p = event_probability_closed_form(BrownianEventSpec(a, b, t2), params.sigma)
            rows.append((a, b, t2, p, blowup_probability_lower_bound(max(p, 0.0))))
    return rows
