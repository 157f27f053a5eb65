"""Chemical concentration ``c = G * ρ`` and its gradient by Fourier multiplication.

Two kernels are available. The Newtonian kernel solves ``-Δc = ρ`` and the
Bessel kernel solves ``(I - Δ)c = ρ``.

On a periodic box the Newtonian solve needs a zero-mean source, so the k=0
mode is dropped. The dropped mode acts like a uniform neutralizing
background, and that background adds a linear restoring force
``(m0 x - m1) / (2A)`` to the gradient, where ``A`` is the box area and
``m1`` the first moment. With ``free_space=True`` (the default) this term is
removed analytically. What remains is the field of the periodic images,
which is ``O(r^3 / L^4)`` near the mass centre on a square box.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from stochks.core import ConfigError, DomainSpec, Field, lp_norm


class KernelKind(enum.Enum):
    NEWTONIAN = "newtonian"
    BESSEL = "bessel"

    @classmethod
    def parse(cls, value) -> "KernelKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ConfigError(f"unknown kernel {value!r}; expected newtonian or bessel") from None


@dataclass(frozen=True, eq=False)
class PotentialField:
    c: Field
    grad_c: tuple[Field, Field]


def kernel_symbol(domain: DomainSpec, kernel: KernelKind) -> np.ndarray:
    """Fourier multiplier Ĝ(k) on the rfft2 half-plane."""
    k2 = domain.spectral.k2
    if kernel is KernelKind.NEWTONIAN:
        with np.errstate(divide="ignore"):
            g = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
        return g
    return 1.0 / (1.0 + k2)


def _moments(values: np.ndarray, domain: DomainSpec):
    X, Y = domain.mesh
    w = domain.cell_area
    m0 = values.sum(axis=(-2, -1)) * w
    mx = (values * X).sum(axis=(-2, -1)) * w
    my = (values * Y).sum(axis=(-2, -1)) * w
    return m0, mx, my


def gradient_batch(
    values: np.ndarray,
    rho_hat: np.ndarray,
    domain: DomainSpec,
    kernel: KernelKind,
    free_space: bool = True,
    gsym: np.ndarray | None = None,
):
    """∇c for a batch ``(..., n, n)`` given the density and its rfft2.

    Returns physical-space ``(gx, gy)`` with the same leading shape.
    """
    sp = domain.spectral
    if gsym is None:
        gsym = kernel_symbol(domain, kernel)
    c_hat = gsym * rho_hat
    n = domain.n
    gx = sfft.irfft2(sp.ikx * c_hat, s=(n, n), axes=(-2, -1))
    gy = sfft.irfft2(sp.iky * c_hat, s=(n, n), axes=(-2, -1))
    if free_space and kernel is KernelKind.NEWTONIAN:
        X, Y = domain.mesh
        m0, mx, my = _moments(values, domain)
        inv = 1.0 / (2.0 * domain.area)
        m0 = np.asarray(m0)[..., None, None]
        gx = gx - inv * (m0 * X - np.asarray(mx)[..., None, None])
        gy = gy - inv * (m0 * Y - np.asarray(my)[..., None, None])
    return gx, gy


def solve_potential(rho: Field, kernel: KernelKind = KernelKind.NEWTONIAN, *, free_space: bool = True) -> PotentialField:
    """Concentration and gradient of ``rho``.

    With ``free_space=False`` the Newtonian result is the plain periodic
    solve, whose spectral Laplacian equals ``-(ρ - mean ρ)``.
    """
    kernel = KernelKind.parse(kernel)
    values = np.asarray(rho.values)
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite density")
    d = rho.domain
    n = d.n
    rho_hat = sfft.rfft2(values)
    gsym = kernel_symbol(d, kernel)
    c = sfft.irfft2(gsym * rho_hat, s=(n, n))
    gx, gy = gradient_batch(values, rho_hat, d, kernel, free_space, gsym)
    if free_space and kernel is KernelKind.NEWTONIAN:
        m0, mx, my = _moments(values, d)
        X, Y = d.mesh
        c = c - (m0 * d.r2 - 2.0 * (mx * X + my * Y)) / (4.0 * d.area)
    return PotentialField(Field(d, c), (Field(d, gx), Field(d, gy)))


def grad_sup(rho: Field, kernel: KernelKind, free_space: bool = True) -> float:
    pot = solve_potential(rho, kernel, free_space=free_space)
    gx, gy = pot.grad_c
    return float(np.sqrt(gx.values**2 + gy.values**2).max())


def estimate_Cp(kernel: KernelKind, p: float, probe_set) -> float:
    """Largest observed ``‖∇(G*ρ)‖_∞ / ‖ρ‖_p`` over the probes.

    This is only a lower estimate of the embedding constant. Probes with zero
    norm are skipped.
    """
    if not p > 2:
        raise ValueError("the embedding bound needs p > 2")
    kernel = KernelKind.parse(kernel)
    best = None
    for f in probe_set:
        norm = lp_norm(f, p)
        if norm == 0:
            continue
        ratio = grad_sup(f, kernel) / norm
        best = ratio if best is None else max(best, ratio)
    if best is None:
        raise ValueError("every probe has zero norm")
    return best
