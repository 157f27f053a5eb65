"""Grid geometry, density fields, model constants and random streams.

The plane is truncated to the periodic square ``[-L, L)^2`` sampled on an
``n x n`` uniform grid. Array axis 0 is ``x``, axis 1 is ``y``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

# spawn-key tags for independent sub-streams of one RngContext
STREAM_PATH = 0
STREAM_BRIDGE = 1
STREAM_PARTICLES = 2
STREAM_INIT = 3
STREAM_EVENTS = 4


class ConfigError(ValueError):
    """Invalid parameters or configuration."""


@dataclass(frozen=True)
class DomainSpec:
    half_width: float
    n: int

    def __post_init__(self):
        if not (self.half_width > 0 and math.isfinite(self.half_width)):
            raise ConfigError(f"half_width must be positive, got {self.half_width}")
        n = int(self.n)
        if n != self.n or n < 16 or n & (n - 1):
            raise ConfigError(f"n must be a power of two >= 16, got {self.n}")

    @property
    def dx(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def cell_area(self) -> float:
        return self.dx * self.dx

    @property
    def area(self) -> float:
        return (2.0 * self.half_width) ** 2

    @cached_property
    def coords(self) -> np.ndarray:
        return -self.half_width + self.dx * np.arange(self.n)

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.coords
        return x[:, None] * np.ones((1, self.n)), np.ones((self.n, 1)) * x[None, :]

    @cached_property
    def r2(self) -> np.ndarray:
        X, Y = self.mesh
        return X * X + Y * Y

    @cached_property
    def spectral(self) -> "Spectral":
        return Spectral(self)

    def refined(self) -> "DomainSpec":
        return DomainSpec(self.half_width, 2 * self.n)

    def contains(self, point) -> bool:
        x, y = point
        L = self.half_width
        return -L <= x < L and -L <= y < L


class Spectral:
    """Wavenumber tables for real 2D transforms on a domain (rfft along axis 1)."""

    def __init__(self, domain: DomainSpec):
        n = domain.n
        kx = 2.0 * np.pi * np.fft.fftfreq(n, d=domain.dx)
        ky = 2.0 * np.pi * np.fft.rfftfreq(n, d=domain.dx)
        self.kx = kx[:, None]
        self.ky = ky[None, :]
        self.k2 = self.kx**2 + self.ky**2
        # odd derivatives drop the Nyquist modes so real data stays real
        dkx = kx.copy()
        dkx[n // 2] = 0.0
        dky = ky.copy()
        dky[-1] = 0.0
        self.ikx = 1j * dkx[:, None]
        self.iky = 1j * dky[None, :]
        kmax = np.pi / domain.dx
        cut = 2.0 / 3.0 * kmax
        self.dealias = ((np.abs(self.kx) < cut) & (np.abs(self.ky) < cut)).astype(float)
        self.shape = (n, n)


@dataclass(frozen=True, eq=False)
class Field:
    """Immutable density snapshot on a domain grid."""

    domain: DomainSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.shape != (self.domain.n, self.domain.n):
            raise ValueError(f"values shape {v.shape} does not match grid n={self.domain.n}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, domain: DomainSpec) -> "Field":
        return cls(domain, np.zeros((domain.n, domain.n)))

    def _check(self, other: "Field"):
        if other.domain != self.domain:
            raise ValueError("fields live on different domains")

    def __add__(self, other: "Field") -> "Field":
        self._check(other)
        return Field(self.domain, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        self._check(other)
        return Field(self.domain, self.values - other.values)

    def __mul__(self, c: float) -> "Field":
        return Field(self.domain, self.values * float(c))

    __rmul__ = __mul__

    def translated(self, cells_x: int, cells_y: int = 0) -> "Field":
        return Field(self.domain, np.roll(self.values, (cells_x, cells_y), axis=(0, 1)))

    def min(self) -> float:
        return float(self.values.min())

    def sup(self) -> float:
        return float(np.abs(self.values).max())


@dataclass(frozen=True)
class ModelParams:
    """Physical constants.

    ``a`` is the total diffusion amplitude (drift ``a^2/2 Δρ``), ``sigma`` the
    noise amplitude, ``chi`` the chemotactic sensitivity and ``p`` the Lebesgue
    exponent used by norm-based statements. In the divergence regime the
    idiosyncratic part is ``nu = sqrt(a^2 - sigma^2)``.
    """

    a: float = 1.0
    sigma: float = 0.0
    chi: float = 1.0
    p: float = 2.0

    def __post_init__(self):
        if not self.a > 0:
            raise ConfigError("a must be positive")
        if self.sigma < 0:
            raise ConfigError("sigma must be nonnegative")
        if self.chi < 0:
            raise ConfigError("chi must be nonnegative")
        if self.p < 2:
            raise ConfigError("p must be >= 2")

    @classmethod
    def from_nu(cls, nu: float, sigma: float, chi: float, p: float = 2.0) -> "ModelParams":
        return cls(a=math.sqrt(nu * nu + sigma * sigma), sigma=sigma, chi=chi, p=p)

    @property
    def nu2(self) -> float:
        return self.a * self.a - self.sigma * self.sigma

    @property
    def nu(self) -> float:
        if self.nu2 <= 0:
            raise ConfigError("divergence-type noise needs a^2 - sigma^2 > 0")
        return math.sqrt(self.nu2)

    @property
    def diffusion(self) -> float:
        """Coefficient D of ``D Δρ``; equals (nu^2 + sigma^2)/2 = a^2/2 in both regimes."""
        return 0.5 * self.a * self.a

    def require_divergence(self):
        if self.nu2 <= 0:
            raise ConfigError(
                f"divergence-type noise needs a^2 - sigma^2 > 0 (a={self.a}, sigma={self.sigma})"
            )

    def replace(self, **kw) -> "ModelParams":
        d = dict(a=self.a, sigma=self.sigma, chi=self.chi, p=self.p)
        d.update(kw)
        return ModelParams(**d)


@dataclass(frozen=True)
class RngContext:
    """Master seed plus stream id; every random draw in the package derives from one."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if int(self.stream) < 0:
            raise ConfigError("stream id must be nonnegative")

    def generator(self, *keys: int) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream), *map(int, keys)))
        return np.random.Generator(np.random.PCG64(ss))

    def for_stream(self, stream: int) -> "RngContext":
        return RngContext(self.seed, stream)


def make_gaussian_field(
    domain: DomainSpec, m0: float, s: float, center=(0.0, 0.0), *, rtol: float = 1e-8
) -> Field:
    """Sample ``m0/(2π s²) exp(-|x-c|²/(2s²))`` on the grid.

    Raises ConfigError when the width is too large for the box or the sampled
    mass misses ``m0`` by more than ``rtol`` (relative).
    """
    if not s > 0:
        raise ConfigError("width must be positive")
    if m0 < 0:
        raise ConfigError("mass must be nonnegative")
    if not domain.contains(center):
        raise ConfigError(f"center {center} outside the box")
    if s > domain.half_width / 6.0:
        raise ConfigError(
            f"width {s} exceeds L/6 = {domain.half_width / 6.0:.4g}; tail truncation too large"
        )
    X, Y = domain.mesh
    cx, cy = center
    r2 = (X - cx) ** 2 + (Y - cy) ** 2
    values = m0 / (2.0 * np.pi * s * s) * np.exp(-r2 / (2.0 * s * s))
    f = Field(domain, values)
    if m0 > 0 and abs(mass(f) - m0) > rtol * m0:
        raise ConfigError(
            f"discrete mass {mass(f):.12g} misses {m0} beyond rtol={rtol}; "
            "width under-resolved or Gaussian truncated by the box"
        )
    return f


def mass(f: Field) -> float:
    return float(f.values.sum() * f.domain.cell_area)


def lp_norm(f: Field, p: float) -> float:
    if p < 1:
        raise ValueError("p must be >= 1")
    v = np.abs(f.values)
    if p == 1:
        return float(v.sum() * f.domain.cell_area)
    scale = v.max()
    if scale == 0:
        return 0.0
    # rescale before the power so large exponents do not overflow
    return float(scale * ((v / scale) ** p).sum() ** (1.0 / p) * f.domain.cell_area ** (1.0 / p))


def lp_norm_array(values: np.ndarray, cell_area: float, p: float) -> np.ndarray:
    """L^p norms over the last two axes of ``values``."""
    v = np.abs(values)
    if p == 1:
        return v.sum(axis=(-2, -1)) * cell_area
    scale = v.max(axis=(-2, -1))
    safe = np.where(scale > 0, scale, 1.0)
    s = ((v / safe[..., None, None]) ** p).sum(axis=(-2, -1))
    return np.where(scale > 0, safe * (s * cell_area) ** (1.0 / p), 0.0)
