"""Euler–Maruyama pseudospectral time stepping.

One step for a batch of paths ``rho`` of shape ``(P, n, n)`` is::

    ρ̂' = E(k) [ρ̂ - dt χ (ik·(ρ∇c))^ + noise^]

Here ``E = exp(-D|k|²dt)`` in semi-implicit mode and ``1 - D|k|²dt`` in
explicit mode, with ``D = a²/2``. The flux ``ρ∇c`` is dealiased by the
2/3 rule. Transport noise is applied in Fourier space as
``σ (ik·dW) ρ̂``. The k=0 mode is never touched by the flux or by transport
noise, so transport-noise runs conserve discrete mass to roundoff.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from stochks.core import ConfigError, DomainSpec, Field, ModelParams
from stochks.noise import BrownianPath, DivergenceNoise, GeneralNoise
from stochks.potential import KernelKind, gradient_batch, kernel_symbol

log = logging.getLogger(__name__)

SEMI_IMPLICIT = "semi-implicit"
EXPLICIT = "explicit"


class SolverError(RuntimeError):
    """Non-finite state without prior growth: a defect, not physical blowup."""


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    t_end: float
    kernel: KernelKind = KernelKind.NEWTONIAN
    stepping: str = SEMI_IMPLICIT
    dealias: bool = True
    blowup_cap: float | None = None  # None: 1e4 * sup(rho0)
    cap_factor: float = 1e4
    positivity_rtol: float = 1e-10
    positivity_action: str = "fail"  # or "continue": breaches are left in place and only logged
    free_space: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not self.t_end >= 0:
            raise ConfigError("t_end must be nonnegative")
        if self.blowup_cap is not None and not self.blowup_cap > 0:
            raise ConfigError("blowup_cap must be positive")
        if self.positivity_action not in ("fail", "continue"):
            raise ConfigError(f"unknown positivity_action {self.positivity_action!r}")
        if self.stepping not in (SEMI_IMPLICIT, EXPLICIT):
            raise ConfigError(f"unknown stepping {self.stepping!r}")
        object.__setattr__(self, "kernel", KernelKind.parse(self.kernel))

    @property
    def steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def validate(self, domain: DomainSpec, params: ModelParams):
        if self.stepping == EXPLICIT:
            limit = domain.dx**2 / (2.0 * params.a**2)
            if self.dt > limit:
                raise ConfigError(
                    f"explicit stepping unstable: dt={self.dt:g} > dx^2/(2a^2)={limit:g}"
                )

    def cap_for(self, sup0: float) -> float:
        if self.blowup_cap is not None:
            return self.blowup_cap
        return self.cap_factor * sup0 if sup0 > 0 else math.inf

    def replace(self, **kw) -> "SolverConfig":
        d = self.__dict__.copy()
        d.update(kw)
        return SolverConfig(**d)


class BatchStepper:
    """Precomputed multipliers for one (domain, params, noise, cfg) combination."""

    def __init__(self, domain: DomainSpec, params: ModelParams, noise, cfg: SolverConfig):
        cfg.validate(domain, params)
        if isinstance(noise, DivergenceNoise) and noise.sigma > 0:
            if abs(noise.sigma - params.sigma) > 1e-12:
                raise ConfigError("transport noise sigma differs from params.sigma")
            params.require_divergence()
        self.domain = domain
        self.params = params
        self.noise = noise
        self.cfg = cfg
        sp = domain.spectral
        self.sp = sp
        n = domain.n
        self.shape = (n, n)
        D = params.diffusion
        if cfg.stepping == SEMI_IMPLICIT:
            self.E = np.exp(-D * sp.k2 * cfg.dt)
        else:
            self.E = 1.0 - D * sp.k2 * cfg.dt
        self.gsym = kernel_symbol(domain, cfg.kernel)
        self.mask = sp.dealias if cfg.dealias else None
        self._modes = None
        if isinstance(noise, GeneralNoise):
            self._modes = noise.weighted_modes()
            self._scalar_mode = noise.single_constant and noise.phi.is_linear
            self._alpha_e = float(self._modes[0].flat[0]) if noise.single_constant else None

    @property
    def components(self) -> int:
        return self.noise.components if self.noise is not None else 0

    def transport_field(self, rho: np.ndarray, rho_hat: np.ndarray | None = None):
        """∇c for a batch, built from the dealiased density."""
        if rho_hat is None:
            rho_hat = sfft.rfft2(rho, axes=(-2, -1))
        if self.mask is not None:
            rho_hat = rho_hat * self.mask
            rho = sfft.irfft2(rho_hat, s=self.shape, axes=(-2, -1))
        return gradient_batch(rho, rho_hat, self.domain, self.cfg.kernel, self.cfg.free_space, self.gsym)

    def advance(self, rho: np.ndarray, dW: np.ndarray | None, transport=None) -> np.ndarray:
        """One step for ``rho`` of shape (P, n, n); ``dW`` has shape (P, components).

        ``transport`` optionally freezes ∇c to a given ``(gx, gy)`` pair
        (the linearized equation).
        """
        sp = self.sp
        chi = self.params.chi
        dt = self.cfg.dt
        rho_hat = sfft.rfft2(rho, axes=(-2, -1))
        acc = rho_hat.copy()
        if chi != 0.0:
            if self.mask is not None:
                rh = rho_hat * self.mask
                rd = sfft.irfft2(rh, s=self.shape, axes=(-2, -1))
            else:
                rh, rd = rho_hat, rho
            if transport is None:
                gx, gy = gradient_batch(rd, rh, self.domain, self.cfg.kernel, self.cfg.free_space, self.gsym)
            else:
                gx, gy = transport
            fh = sfft.rfft2(np.stack((rd * gx, rd * gy)), axes=(-2, -1))
            div = sp.ikx * fh[0] + sp.iky * fh[1]
            if self.mask is not None:
                div *= self.mask
            acc -= (dt * chi) * div
        if dW is not None and self.noise is not None:
            acc += self._noise_hat(rho, rho_hat, dW)
        acc *= self.E
        return sfft.irfft2(acc, s=self.shape, axes=(-2, -1))

    def _noise_hat(self, rho, rho_hat, dW):
        dW = np.asarray(dW, dtype=float)
        if isinstance(self.noise, DivergenceNoise):
            s = self.noise.sigma
            if s == 0.0:
                return 0.0
            w1 = dW[:, 0, None, None]
            w2 = dW[:, 1, None, None]
            return s * (self.sp.ikx * w1 + self.sp.iky * w2) * rho_hat
        if self._scalar_mode:
            amp = self.noise.phi.sigma * self._alpha_e * dW[:, 0]
            return amp[:, None, None] * rho_hat
        forcing = np.tensordot(dW, self._modes, axes=1)
        return sfft.rfft2(self.noise.phi(rho) * forcing, axes=(-2, -1))


@dataclass
class SolverState:
    t: float
    rho: Field
    step_index: int = 0
    path: BrownianPath | None = None
    blown_up: bool = False
    blowup_time: float | None = None
    blowup_reason: str | None = None
    clipped_mass: float = 0.0
    sup0: float | None = None

    def __post_init__(self):
        if self.sup0 is None:
            self.sup0 = self.rho.sup()


def _clip(values: np.ndarray, rtol: float, cell_area: float):
    """Zero undershoots within tolerance; returns (values, breach mask, clipped mass).

    Values below ``-rtol * max`` are left untouched so that mass is never
    created by clipping a resolution-loss oscillation.
    """
    top = np.abs(values).max(axis=(-2, -1))
    tol = (rtol * top)[..., None, None]
    low = values.min(axis=(-2, -1))
    breach = low < -tol[..., 0, 0]
    neg = (values < 0) & (values >= -tol)
    clipped_mass = -(np.where(neg, values, 0.0).sum(axis=(-2, -1))) * cell_area
    values = np.where(neg, 0.0, values)
    return values, breach, clipped_mass


def _classify(new: np.ndarray, prev_sup: np.ndarray, sup0: np.ndarray, cap: np.ndarray, rtol: float,
              cell_area: float, fail_on_breach: bool = True):
    """Blowup reason per path (or None), cleaned values, clipped mass, sup and breach mask."""
    P = new.shape[0]
    finite = np.isfinite(new).all(axis=(-2, -1))
    reasons = [None] * P
    clipped = np.zeros(P)
    if not finite.all():
        for i in np.flatnonzero(~finite):
            if prev_sup[i] < 2.0 * sup0[i]:
                raise SolverError(
                    f"non-finite values without prior growth (sup {prev_sup[i]:.3g}, initial {sup0[i]:.3g})"
                )
            reasons[i] = "nonfinite"
    safe = np.where(finite[:, None, None], new, 0.0)
    cleaned, breach, clipped = _clip(safe, rtol, cell_area)
    sup = np.abs(safe).max(axis=(-2, -1))
    for i in range(P):
        if reasons[i] is not None:
            continue
        if sup[i] > cap[i]:
            reasons[i] = "cap"
        elif breach[i] and fail_on_breach:
            reasons[i] = "positivity"
    return reasons, cleaned, clipped, np.abs(cleaned).max(axis=(-2, -1)), breach


def step(state: SolverState, params: ModelParams, noise, cfg: SolverConfig, dW=None, stepper=None) -> SolverState:
    """Advance a single-path state by one step.

    The increment comes from ``dW`` if given, else from ``state.path`` at
    ``state.step_index``.
    """
    if state.blown_up:
        raise ValueError("state already blown up; stepping halts")
    stepper = stepper or BatchStepper(state.rho.domain, params, noise, cfg)
    if dW is None and noise is not None and stepper.components:
        if state.path is None:
            raise ValueError("noisy step needs a path or explicit increments")
        dW = state.path.increments[state.step_index]
    dWb = None if dW is None else np.asarray(dW, dtype=float)[None, :]
    new = stepper.advance(np.asarray(state.rho.values)[None], dWb)
    d = state.rho.domain
    cap = np.array([cfg.cap_for(state.sup0)])
    reasons, cleaned, clipped, _, _ = _classify(
        new, np.array([state.rho.sup()]), np.array([state.sup0]), cap, cfg.positivity_rtol, d.cell_area,
        cfg.positivity_action == "fail",
    )
    t_new = state.t + cfg.dt
    if reasons[0] is not None:
        return SolverState(state.t, state.rho, state.step_index, state.path, True, t_new, reasons[0],
                           state.clipped_mass, state.sup0)
    return SolverState(t_new, Field(d, cleaned[0]), state.step_index + 1, state.path, False, None, None,
                       state.clipped_mass + float(clipped[0]), state.sup0)


@dataclass
class BatchResult:
    """Outcome of a batched run; per-path arrays indexed by path."""

    times: np.ndarray  # recorded times
    blown_up: np.ndarray
    blowup_time: np.ndarray  # nan when no blowup
    reasons: list
    clipped_mass: np.ndarray
    final: np.ndarray  # last valid field per path, (P, n, n)
    records: list = field(default_factory=list)  # observer outputs
    first_breach: np.ndarray | None = None  # first positivity breach time, nan if none


def _as_increments(paths, P: int, steps: int, comps: int):
    if paths is None:
        return None
    if isinstance(paths, np.ndarray):
        inc = paths
    else:
        inc = np.stack([p.increments for p in paths])
    if inc.shape[0] != P or inc.shape[1] < steps or inc.shape[2] != comps:
        raise ValueError(f"increments shape {inc.shape} incompatible with {P} paths, {steps} steps, {comps} components")
    return inc


def simulate_batch(
    rho0,
    params: ModelParams,
    noise,
    cfg: SolverConfig,
    paths=None,
    *,
    n_paths: int | None = None,
    record_every: int = 1,
    observer=None,
    transport=None,
    keep_fields: bool = False,
):
    """Run P paths in lockstep.

    ``paths`` is a list of BrownianPath or an increments array
    ``(P, steps, components)``. ``observer(k, t, idx, rho)`` is called at
    record steps with the indices of live paths and their fields, and its
    return values are collected in ``records``. Blown-up paths are dropped
    from the batch and keep their last valid field. ``transport(k)`` may
    return a frozen ``(gx, gy)`` for the linearized equation.
    """
    if isinstance(rho0, Field):
        domain = rho0.domain
        base = np.asarray(rho0.values)
    else:
        raise TypeError("rho0 must be a Field")
    steps = cfg.steps
    comps = noise.components if noise is not None else 0
    if paths is not None:
        P = len(paths)
    else:
        P = n_paths or 1
    inc = _as_increments(paths, P, steps, comps) if comps else None
    stepper = BatchStepper(domain, params, noise, cfg)
    rho = np.broadcast_to(base, (P,) + base.shape).copy()
    sup0 = np.full(P, np.abs(base).max())
    cap = np.array([cfg.cap_for(s) for s in sup0])
    prev_sup = sup0.copy()
    idx = np.arange(P)
    blown = np.zeros(P, dtype=bool)
    btime = np.full(P, np.nan)
    reasons = [None] * P
    clipped = np.zeros(P)
    final = rho.copy()
    first_breach = np.full(P, np.nan)
    fail_on_breach = cfg.positivity_action == "fail"
    times = []
    records = []
    kept = []

    def record(k):
        t = k * cfg.dt
        times.append(t)
        if observer is not None:
            records.append(observer(k, t, idx.copy(), rho))
        if keep_fields:
            kept.append((idx.copy(), rho.copy()))

    record(0)
    for k in range(steps):
        if idx.size == 0:
            break
        dW = inc[idx, k] if inc is not None else None
        tr = transport(k) if transport is not None else None
        new = stepper.advance(rho, dW, tr)
        rs, cleaned, clip, sups, breach = _classify(
            new, prev_sup, sup0[idx], cap[idx], cfg.positivity_rtol, domain.cell_area, fail_on_breach
        )
        fresh = breach & np.isnan(first_breach[idx])
        first_breach[idx[fresh]] = (k + 1) * cfg.dt
        dead = np.array([r is not None for r in rs])
        if dead.any():
            for j in np.flatnonzero(dead):
                p = idx[j]
                blown[p] = True
                btime[p] = (k + 1) * cfg.dt
                reasons[p] = rs[j]
                final[p] = rho[j]
            live = ~dead
            idx = idx[live]
            rho = cleaned[live]
            prev_sup = sups[live]
            clipped[idx] += clip[live]
        else:
            rho = cleaned
            prev_sup = sups
            clipped[idx] += clip
        if (k + 1) % record_every == 0 or k + 1 == steps:
            if idx.size:
                record(k + 1)
    final[idx] = rho
    res = BatchResult(np.array(times), blown, btime, reasons, clipped, final, records, first_breach)
    if keep_fields:
        res.kept = kept
    return res


@dataclass
class Trajectory:
    """Single-path run: recorded times and fields plus blowup flags."""

    domain: DomainSpec
    times: np.ndarray
    fields: list
    blown_up: bool = False
    blowup_time: float | None = None
    blowup_reason: str | None = None
    clipped_mass: float = 0.0

    def field(self, i: int) -> Field:
        return Field(self.domain, self.fields[i])

    def __len__(self):
        return len(self.times)


def simulate(rho0: Field, params: ModelParams, noise, cfg: SolverConfig, path: BrownianPath | None = None,
             *, record_every: int = 1, transport=None) -> Trajectory:
    fields = []

    def keep(k, t, idx, rho):
        fields.append(rho[0].copy())

    res = simulate_batch(rho0, params, noise, cfg, None if path is None else [path],
                         record_every=record_every, observer=keep, transport=transport)
    bt = float(res.blowup_time[0]) if res.blown_up[0] else None
    return Trajectory(rho0.domain, res.times, fields, bool(res.blown_up[0]), bt, res.reasons[0],
                      float(res.clipped_mass[0]))


def solve_deterministic(rho0: Field, params: ModelParams, cfg: SolverConfig, *, record_every: int = 1) -> Trajectory:
    return simulate(rho0, params.replace(sigma=0.0), None, cfg, record_every=record_every)


def solve_linearized(xi: Trajectory, params: ModelParams, noise, cfg: SolverConfig, path=None, rho0: Field | None = None) -> Trajectory:
    """Linear equation with transport field ``∇(G*ξ(t))`` frozen at left endpoints.

    ``xi`` must hold a field for every step of ``cfg``.
    """
    steps = cfg.steps
    if len(xi.fields) < steps + 1:
        raise ValueError(f"xi needs {steps + 1} fields on the step grid, has {len(xi.fields)}")
    rho0 = rho0 or xi.field(0)
    stepper = BatchStepper(rho0.domain, params, noise, cfg)

    def frozen(k):
        return stepper.transport_field(xi.fields[k][None])

    return simulate(rho0, params, noise, cfg, path, record_every=1, transport=frozen)


@dataclass
class PicardResult:
    trajectory: Trajectory
    distances: np.ndarray
    ratios: np.ndarray
    diverged: bool

    @property
    def contraction(self) -> float:
        """Geometric mean of the first four ratios (fewer if unavailable)."""
        r = self.ratios[:4]
        r = r[np.isfinite(r)]
        if r.size == 0:
            return math.nan
        if np.any(r <= 0):
            return 0.0
        return float(np.exp(np.mean(np.log(r))))


def picard_iterate(rho0: Field, params: ModelParams, noise, cfg: SolverConfig, iterations: int, path=None, p: float = 2.0) -> PicardResult:
    """Fixed-point iteration ``ξ ↦ ρ_ξ`` from ``ξ ≡ ρ0`` on one fixed path.

    The distance between consecutive iterates is ``sup_t ‖ξ⁽ⁿ⁺¹⁾ - ξ⁽ⁿ⁾‖_p``.
    """
    if iterations < 2:
        raise ValueError("iterations must be >= 2")
    steps = cfg.steps
    xi = Trajectory(rho0.domain, cfg.dt * np.arange(steps + 1), [np.asarray(rho0.values)] * (steps + 1))
    w = rho0.domain.cell_area
    dists = []
    diverged = False
    for _ in range(iterations):
        nxt = solve_linearized(xi, params, noise, cfg, path, rho0)
        if nxt.blown_up:
            diverged = True
            xi = nxt
            break
        diff = np.stack(nxt.fields) - np.stack(xi.fields)
        d = float(np.max((np.abs(diff) ** p).sum(axis=(-2, -1)) * w) ** (1.0 / p))
        dists.append(d)
        xi = nxt
        if len(dists) >= 4 and all(dists[-i] > dists[-i - 1] for i in (1, 2, 3)):
            diverged = True
            log.warning("picard iterates diverging: distances %s", dists[-4:])
            break
    dists = np.array(dists)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(dists[:-1] > 0, dists[1:] / np.where(dists[:-1] > 0, dists[:-1], 1.0), np.nan)
    return PicardResult(xi, dists, ratios, diverged)
