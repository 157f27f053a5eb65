"""Brownian paths and stochastic forcing for both noise regimes.

Transport noise is ``σ ∇ρ · dW`` with two scalar Wiener components. Basis
noise is ``Φ(ρ) Σ α_k e_k dW_k`` with one scalar Wiener component per mode.
Everything is read in the Itô sense.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from stochks.core import STREAM_BRIDGE, STREAM_PATH, ConfigError, DomainSpec, Field, RngContext

log = logging.getLogger(__name__)


class BrownianPath:
    """Increments of an m-component Wiener process on a uniform time grid.

    ``increments`` has shape ``(steps, components)``. A path remembers the
    RngContext and keys it was drawn from. Its bridge refinements are then
    reproducible, and each one leaves the coarse-grid values unchanged.
    """

    def __init__(self, dt: float, increments: np.ndarray, ctx: RngContext | None = None, keys=(), level: int = 0):
        if not dt > 0:
            raise ValueError("dt must be positive")
        inc = np.asarray(increments, dtype=float)
        if inc.ndim == 1:
            inc = inc[:, None]
        self.dt = float(dt)
        self.increments = inc
        self.ctx = ctx
        self.keys = tuple(keys)
        self.level = level

    @classmethod
    def sample(cls, ctx: RngContext, dt: float, steps: int, components: int = 1, keys=()) -> "BrownianPath":
        if not dt > 0:
            raise ValueError("dt must be positive")
        rng = ctx.generator(STREAM_PATH, *keys)
        inc = rng.standard_normal((steps, components)) * math.sqrt(dt)
        return cls(dt, inc, ctx, keys)

    @property
    def steps(self) -> int:
        return self.increments.shape[0]

    @property
    def components(self) -> int:
        return self.increments.shape[1]

    @property
    def horizon(self) -> float:
        return self.dt * self.steps

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)

    def values(self) -> np.ndarray:
        """W at every grid time, shape ``(steps + 1, components)``; W(0) = 0."""
        out = np.zeros((self.steps + 1, self.components))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out

    def refine(self) -> "BrownianPath":
        """Halve dt by Brownian-bridge midpoints."""
        if self.ctx is None:
            raise ValueError("refinement needs the originating RngContext")
        rng = self.ctx.generator(STREAM_BRIDGE, self.level, *self.keys)
        z = rng.standard_normal(self.increments.shape) * (0.5 * math.sqrt(self.dt))
        fine = np.empty((2 * self.steps, self.components))
        fine[0::2] = 0.5 * self.increments + z
        fine[1::2] = 0.5 * self.increments - z
        return BrownianPath(0.5 * self.dt, fine, self.ctx, self.keys, self.level + 1)

    def refined(self, times: int) -> "BrownianPath":
        p = self
        for _ in range(times):
            p = p.refine()
        return p

    def scaled(self, factor: float) -> "BrownianPath":
        return BrownianPath(self.dt, self.increments * factor, self.ctx, self.keys, self.level)

    def independent(self, component: int = 0) -> "BrownianPath":
        return BrownianPath(self.dt, self.increments[:, component : component + 1], self.ctx, self.keys, self.level)


@dataclass(frozen=True)
class Phi:
    """Lipschitz amplitude map for basis noise."""

    kind: str = "linear"
    sigma: float = 0.0
    rho_cap: float = 1.0
    table_x: tuple = ()
    table_y: tuple = ()

    def __post_init__(self):
        if self.kind not in ("linear", "bounded", "table"):
            raise ConfigError(f"unknown phi kind {self.kind!r}")
        if self.kind == "bounded" and not self.rho_cap > 0:
            raise ConfigError("rho_cap must be positive")
        if self.kind == "table":
            xs = np.asarray(self.table_x, dtype=float)
            if len(xs) < 2 or len(xs) != len(self.table_y) or np.any(np.diff(xs) <= 0):
                raise ConfigError("phi table needs >= 2 strictly increasing nodes")

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        if self.kind == "linear":
            return self.sigma * rho
        if self.kind == "bounded":
            return self.sigma * rho / (1.0 + rho / self.rho_cap)
        return np.interp(rho, self.table_x, self.table_y)

    @property
    def is_linear(self) -> bool:
        return self.kind == "linear"


@dataclass(frozen=True)
class DivergenceNoise:
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError("sigma must be nonnegative")

    @property
    def components(self) -> int:
        return 2


@dataclass(frozen=True, eq=False)
class GeneralNoise:
    modes: tuple = field(default_factory=tuple)  # (alpha_k, e_k Field) pairs
    phi: Phi = field(default_factory=Phi)

    def __post_init__(self):
        if not self.modes:
            raise ConfigError("basis noise needs at least one mode")
        for _, e in self.modes:
            if np.abs(e.values).max() > 1.0 + 1e-12:
                raise ConfigError("basis modes must satisfy sup|e_k| <= 1")
        object.__setattr__(self, "modes", tuple(self.modes))

    @property
    def components(self) -> int:
        return len(self.modes)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([a for a, _ in self.modes])

    def weighted_modes(self) -> np.ndarray:
        """``α_k e_k`` stacked as ``(K, n, n)``."""
        return np.stack([a * e.values for a, e in self.modes])

    @property
    def single_constant(self) -> bool:
        if len(self.modes) != 1:
            return False
        e = self.modes[0][1].values
        return bool(np.all(e == e.flat[0]))


def constant_mode_noise(domain: DomainSpec, sigma: float, alpha: float = 1.0) -> GeneralNoise:
    """``Φ(ρ) = σρ`` with the single mode ``e ≡ 1``: the scalar-noise model."""
    e = Field(domain, np.ones((domain.n, domain.n)))
    return GeneralNoise(((alpha, e),), Phi("linear", sigma))


def sample_increments(spec, dt: float, ctx: RngContext, *keys: int) -> np.ndarray:
    """One N(0, dt) draw per scalar Wiener component of ``spec``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    rng = ctx.generator(STREAM_PATH, *keys)
    return rng.standard_normal(spec.components) * math.sqrt(dt)


def noise_term(spec, rho: Field, grad_rho, dW) -> Field:
    dW = np.asarray(dW, dtype=float)
    if dW.shape != (spec.components,):
        raise ValueError(f"expected {spec.components} increments, got shape {dW.shape}")
    if isinstance(spec, DivergenceNoise):
        gx, gy = grad_rho
        v = spec.sigma * (gx.values * dW[0] + gy.values * dW[1])
        return Field(rho.domain, v)
    forcing = np.tensordot(dW, spec.weighted_modes(), axes=1)
    return Field(rho.domain, spec.phi(np.asarray(rho.values)) * forcing)


def spectral_gradient(f: Field) -> tuple[Field, Field]:
    sp = f.domain.spectral
    n = f.domain.n
    fh = np.fft.rfft2(f.values)
    gx = np.fft.irfft2(sp.ikx * fh, s=(n, n))
    gy = np.fft.irfft2(sp.iky * fh, s=(n, n))
    return Field(f.domain, gx), Field(f.domain, gy)


def _wavevectors(limit: int):
    vecs = []
    for i in range(-limit, limit + 1):
        for j in range(0, limit + 1):
            if j > 0 or i > 0:
                vecs.append((i, j))
    vecs.sort(key=lambda v: (v[0] ** 2 + v[1] ** 2, math.atan2(v[1], v[0])))
    return vecs


def make_fourier_basis(domain: DomainSpec, N: int, alpha0: float = 1.0):
    """First ``N`` real Fourier modes of the box, each scaled to sup-norm 1.

    The order is the constant mode, then ``cos`` and ``sin`` pairs by
    increasing wavenumber. Weights are ``α_k = α0 / k``. The L² norm of each
    mode on the box is available from :func:`basis_l2_norms`.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    X, Y = domain.mesh
    L = domain.half_width
    k0 = math.pi / L
    modes = [np.ones((domain.n, domain.n))]
    limit = 1
    while 1 + 2 * len([v for v in _wavevectors(limit)]) < N:
        limit += 1
    for i, j in _wavevectors(limit):
        if len(modes) >= N:
            break
        if max(abs(i), j) >= domain.n // 2:
            raise ConfigError(f"N={N} exceeds the modes the grid can resolve")
        phase = k0 * (i * X + j * Y)
        for g in (np.cos(phase), np.sin(phase)):
            if len(modes) < N:
                modes.append(g / np.abs(g).max())
    tail = alpha0**2 * (math.pi**2 / 6.0 - sum(1.0 / k**2 for k in range(1, N + 1)))
    log.info("fourier basis: %d modes, neglected weight tail sum alpha_k^2 = %.3e", N, tail)
    return [(alpha0 / (k + 1), Field(domain, m)) for k, m in enumerate(modes)]


def basis_l2_norms(basis) -> np.ndarray:
    return np.array([math.sqrt(float((e.values**2).sum()) * e.domain.cell_area) for _, e in basis])
