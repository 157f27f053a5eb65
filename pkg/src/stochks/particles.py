"""Interacting particle approximation and its comparison with the PDE.

Each particle carries mass ``m0/N`` and moves as::

    dX_i = χ m0/(N-1) Σ_{j≠i} ∇G_δ(X_i - X_j) dt + ν dB_i - σ dW

Here ``∇G_δ(x) = -x / (2π(|x|² + δ²))``. The idiosyncratic amplitude is
``a`` without common noise and ``ν = sqrt(a² - σ²)`` with it, so the total
diffusion is always ``a²/2``. The common kick ``-σ dW`` transports every
particle the same way that ``σ∇ρ·dW`` transports the density.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.stats import qmc, norm

from stochks.core import STREAM_INIT, STREAM_PARTICLES, ConfigError, DomainSpec, Field, RngContext
from stochks.potential import KernelKind


@numba.njit(cache=True, fastmath=False)
def _pair_drift(pos, half_width, delta2, scale):
    n = pos.shape[0]
    out = np.zeros((n, 2))
    box = 2.0 * half_width
    inv2pi = 1.0 / (2.0 * math.pi)
    for i in range(n):
        sx = 0.0
        sy = 0.0
        xi = pos[i, 0]
        yi = pos[i, 1]
        for j in range(n):
            if j == i:
                continue
            dx = xi - pos[j, 0]
            dy = yi - pos[j, 1]
            dx -= box * np.round(dx / box)
            dy -= box * np.round(dy / box)
            f = inv2pi / (dx * dx + dy * dy + delta2)
            sx -= dx * f
            sy -= dy * f
        out[i, 0] = scale * sx
        out[i, 1] = scale * sy
    return out


def canonical_order(pos: np.ndarray) -> np.ndarray:
    """Index order by (x, y); makes sums independent of particle labels."""
    return np.lexsort((pos[:, 1], pos[:, 0]))


def pair_drift(pos: np.ndarray, half_width: float, delta: float, scale: float) -> np.ndarray:
    order = canonical_order(pos)
    sorted_pos = np.ascontiguousarray(pos[order])
    drift_sorted = _pair_drift(sorted_pos, half_width, delta * delta, scale)
    out = np.empty_like(drift_sorted)
    out[order] = drift_sorted
    return out


@dataclass(frozen=True)
class ParticleConfig:
    N: int
    dt: float
    domain: DomainSpec
    m0: float = 1.0
    a: float = 1.0
    chi: float = 0.0
    delta: float | None = None  # None: twice the spacing sqrt(4π s²/N) for the configured width
    common_sigma: float = 0.0
    normalization: str = "N-1"  # or "N"
    kernel: KernelKind = KernelKind.NEWTONIAN
    init_width: float = 1.0

    def __post_init__(self):
        if self.N < 2:
            raise ConfigError("N must be >= 2")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.delta is not None and not self.delta > 0:
            raise ConfigError("delta must be positive")
        if self.normalization not in ("N-1", "N"):
            raise ConfigError("normalization must be 'N-1' or 'N'")
        if self.common_sigma < 0 or self.common_sigma >= self.a:
            raise ConfigError("common-noise sigma must satisfy 0 <= sigma < a")
        if KernelKind.parse(self.kernel) is not KernelKind.NEWTONIAN:
            raise ConfigError("particles support the Newtonian kernel only")

    @property
    def resolved_delta(self) -> float:
        if self.delta is not None:
            return self.delta
        return 2.0 * math.sqrt(4.0 * math.pi * self.init_width**2 / self.N)

    @property
    def idiosyncratic(self) -> float:
        return math.sqrt(self.a**2 - self.common_sigma**2)

    @property
    def drift_scale(self) -> float:
        denom = self.N - 1 if self.normalization == "N-1" else self.N
        return self.chi * self.m0 / denom


@dataclass
class ParticleState:
    positions: np.ndarray
    t: float = 0.0
    common_W: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise ValueError("positions must have shape (N, 2)")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("non-finite particle positions")

    @property
    def N(self) -> int:
        return self.positions.shape[0]


def wrap(pos: np.ndarray, half_width: float) -> np.ndarray:
    box = 2.0 * half_width
    return (pos + half_width) % box - half_width


def gaussian_particles(cfg: ParticleConfig, ctx: RngContext, center=(0.0, 0.0)) -> ParticleState:
    """Scrambled Sobol points pushed through the normal inverse CDF."""
    seed = int(ctx.generator(STREAM_INIT).integers(2**63))
    sampler = qmc.Sobol(d=2, scramble=True, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # N need not be a power of two
        u = sampler.random(cfg.N)
    u = np.clip(u, 1e-12, 1 - 1e-12)
    pos = norm.ppf(u) * cfg.init_width + np.asarray(center)
    return ParticleState(wrap(pos, cfg.domain.half_width))


def particle_step(state: ParticleState, cfg: ParticleConfig, rng: np.random.Generator | None = None,
                  dB: np.ndarray | None = None, dW: np.ndarray | None = None) -> ParticleState:
    """One Euler–Maruyama step; explicit ``dB`` (N, 2) and ``dW`` (2,) override draws."""
    pos = state.positions
    sq = math.sqrt(cfg.dt)
    if dB is None:
        dB = rng.standard_normal(pos.shape) * sq
    if cfg.common_sigma > 0 and dW is None:
        dW = rng.standard_normal(2) * sq
    step = cfg.idiosyncratic * dB
    if cfg.chi != 0:
        step = step + cfg.dt * pair_drift(pos, cfg.domain.half_width, cfg.resolved_delta, cfg.drift_scale)
    W = state.common_W
    if cfg.common_sigma > 0:
        step = step - cfg.common_sigma * np.asarray(dW)[None, :]
        W = W + dW
    new = wrap(pos + step, cfg.domain.half_width)
    if not np.all(np.isfinite(new)):
        raise FloatingPointError("non-finite particle positions")
    return ParticleState(new, state.t + cfg.dt, W)


@dataclass
class ParticleTrajectory:
    times: np.ndarray
    snapshots: list  # positions at each recorded time
    m0: float

    def second_moments(self) -> np.ndarray:
        return np.array([self.m0 * float((p * p).sum(axis=1).mean()) for p in self.snapshots])


def simulate_particles(cfg: ParticleConfig, ctx: RngContext, steps: int, *, record_every: int = 1,
                       state: ParticleState | None = None, common_increments: np.ndarray | None = None):
    """Run ``steps`` steps; ``common_increments`` (steps, 2) couples the common noise to a PDE path."""
    rng = ctx.generator(STREAM_PARTICLES)
    state = state or gaussian_particles(cfg, ctx)
    times = [state.t]
    snaps = [state.positions.copy()]
    for k in range(steps):
        dW = None if common_increments is None else common_increments[k]
        if cfg.common_sigma > 0 and dW is None:
            dW = rng.standard_normal(2) * math.sqrt(cfg.dt)
        state = particle_step(state, cfg, rng, dW=dW)
        if (k + 1) % record_every == 0 or k + 1 == steps:
            times.append(state.t)
            snaps.append(state.positions.copy())
    return ParticleTrajectory(np.array(times), snaps, cfg.m0)


def _kde_axis(coords: np.ndarray, centers: np.ndarray, h: float, half_width: float, dx: float) -> np.ndarray:
    box = 2.0 * half_width
    d = coords[None, :] - centers[:, None]
    d -= box * np.round(d / box)
    g = np.exp(-0.5 * (d / h) ** 2)
    g /= g.sum(axis=1, keepdims=True) * dx  # each row integrates to one on the grid
    return g


def empirical_density(state, bandwidth: float, domain: DomainSpec, m0: float = 1.0) -> Field:
    """Separable Gaussian KDE with each particle carrying ``m0/N``; discrete mass is exactly ``m0``."""
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    pos = state.positions if isinstance(state, ParticleState) else np.asarray(state)
    pos = pos[canonical_order(pos)]
    x = domain.coords
    gx = _kde_axis(x, pos[:, 0], bandwidth, domain.half_width, domain.dx)
    gy = _kde_axis(x, pos[:, 1], bandwidth, domain.half_width, domain.dx)
    return Field(domain, (m0 / pos.shape[0]) * (gx.T @ gy))


@dataclass
class ChaosGap:
    times: np.ndarray
    l2: np.ndarray
    moment_gap: np.ndarray  # relative |M_N - M| / M
    particle_moment: np.ndarray
    pde_moment: np.ndarray


def chaos_gap(particles: ParticleTrajectory, pde_times, pde_fields, domain: DomainSpec, bandwidth: float) -> ChaosGap:
    """L² distance between KDE and PDE field, and the relative second-moment gap, per time.

    The particle second moment is taken from the empirical measure itself,
    because the KDE adds ``2h²m0`` to it.
    """
    pt = np.asarray(particles.times)
    qt = np.asarray(pde_times)
    if pt.shape != qt.shape or np.max(np.abs(pt - qt)) > 1e-9:
        raise ValueError("particle and PDE trajectories are on different time grids")
    w = domain.cell_area
    l2 = []
    Mp = particles.second_moments()
    Mq = []
    for pos, f in zip(particles.snapshots, pde_fields):
        kde = empirical_density(pos, bandwidth, domain, particles.m0)
        v = np.asarray(f)
        l2.append(math.sqrt(float(((kde.values - v) ** 2).sum()) * w))
        Mq.append(float((v * domain.r2).sum()) * w)
    Mq = np.array(Mq)
    return ChaosGap(pt, np.array(l2), np.abs(Mp - Mq) / Mq, Mp, Mq)
