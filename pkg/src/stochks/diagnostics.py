"""Monitored quantities and blowup classification.

The cutoff ``φ_ε`` equals ``|x|²`` inside ``R = 1/ε`` and vanishes beyond
``2R``. Between the two it is the quintic blend ``R² q(u)``, ``u = (r-R)/R``,
with::

    q(u) = 1 + 2u + u² - 25u³ + 34u⁴ - 13u⁵

It matches value, slope and curvature at both ends, so ``φ_ε`` is C².
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from stochks.core import ConfigError, Field, lp_norm_array

_Q = np.array([1.0, 2.0, 1.0, -25.0, 34.0, -13.0])  # ascending powers


def _poly(c, u):
    return sum(ci * u**i for i, ci in enumerate(c))


def _dpoly(c):
    return np.array([i * ci for i, ci in enumerate(c)][1:])


@dataclass(frozen=True)
class CutoffSpec:
    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigError("eps must be positive")

    @property
    def radius(self) -> float:
        return 1.0 / self.eps

    def profile(self, r: np.ndarray) -> np.ndarray:
        R = self.radius
        r = np.asarray(r, dtype=float)
        u = np.clip((r - R) / R, 0.0, 1.0)
        blend = R * R * _poly(_Q, u)
        return np.where(r <= R, r * r, np.where(r >= 2 * R, 0.0, blend))

    def radial_derivatives(self, r: np.ndarray):
        """(φ', φ'') as functions of the radius."""
        R = self.radius
        r = np.asarray(r, dtype=float)
        u = np.clip((r - R) / R, 0.0, 1.0)
        d1 = R * _poly(_dpoly(_Q), u)
        d2 = _poly(_dpoly(_dpoly(_Q)), u)
        inside = r <= R
        outside = r >= 2 * R
        p1 = np.where(inside, 2 * r, np.where(outside, 0.0, d1))
        p2 = np.where(inside, 2.0, np.where(outside, 0.0, d2))
        return p1, p2

    def laplacian(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        p1, p2 = self.radial_derivatives(r)
        with np.errstate(divide="ignore", invalid="ignore"):
            lap = p2 + np.where(r > 0, p1 / np.where(r > 0, r, 1.0), 2.0)
        return lap

    def on(self, domain) -> np.ndarray:
        return self.profile(np.sqrt(domain.r2))

    def slack(self, samples: int = 20001) -> tuple[float, float]:
        """Worst |Δφ_ε| and worst |∇φ_ε| Lipschitz constant (max |φ''|, |φ'/r|)."""
        R = self.radius
        r = np.linspace(1e-9, 2.5 * R, samples)
        p1, p2 = self.radial_derivatives(r)
        return float(np.abs(self.laplacian(r)).max()), float(max(np.abs(p2).max(), np.abs(p1 / r).max()))


@dataclass
class DiagnosticsRecord:
    t: float
    mass: float
    second_moment: float
    cutoff_moment: float
    lp_norms: dict
    h1_norm: float
    hess_l2: float
    sup_norm: float
    sup_norm_on_ball: float

    def as_row(self, p_list) -> list:
        return [self.t, self.mass, self.second_moment, self.cutoff_moment,
                *[self.lp_norms[p] for p in p_list], self.h1_norm, self.hess_l2, self.sup_norm,
                self.sup_norm_on_ball]


def second_moment(f: Field) -> float:
    return float((f.values * f.domain.r2).sum() * f.domain.cell_area)


def first_moment(f: Field) -> tuple[float, float]:
    X, Y = f.domain.mesh
    w = f.domain.cell_area
    return float((f.values * X).sum() * w), float((f.values * Y).sum() * w)


def cutoff_moment(f: Field, cut: CutoffSpec) -> float:
    if 2.0 * cut.radius > f.domain.half_width:
        raise ConfigError(f"cutoff support radius {2 * cut.radius:g} exceeds box half-width {f.domain.half_width:g}")
    return float((f.values * cut.on(f.domain)).sum() * f.domain.cell_area)


def sup_norm_on_ball(f: Field, R: float) -> float:
    inside = f.domain.r2 <= R * R
    if not inside.any():
        return 0.0
    return float(np.abs(f.values[inside]).max())


def _spectral_derivatives(values: np.ndarray, domain):
    sp = domain.spectral
    n = domain.n
    vh = np.fft.rfft2(values)
    kx = sp.kx
    ky = sp.ky
    grads = [np.fft.irfft2(sp.ikx * vh, s=(n, n)), np.fft.irfft2(sp.iky * vh, s=(n, n))]
    # second derivatives keep the Nyquist modes (real multipliers)
    hess = [np.fft.irfft2(-kx * kx * vh, s=(n, n)), np.fft.irfft2(-kx * ky * vh, s=(n, n)),
            np.fft.irfft2(-ky * ky * vh, s=(n, n))]
    return grads, hess


def h1_and_hessian_norms(f: Field) -> tuple[float, float]:
    """``(sqrt(‖ρ‖₂² + ‖∇ρ‖₂²), ‖D²ρ‖₂)`` evaluated spectrally."""
    w = f.domain.cell_area
    v = np.asarray(f.values)
    (gx, gy), (hxx, hxy, hyy) = _spectral_derivatives(v, f.domain)
    h1 = math.sqrt(float((v * v).sum() + (gx * gx).sum() + (gy * gy).sum()) * w)
    hs = math.sqrt(float((hxx * hxx).sum() + 2 * (hxy * hxy).sum() + (hyy * hyy).sum()) * w)
    return h1, hs


def record(f: Field, t: float, p_list=(2.0,), cut: CutoffSpec | None = None, ball_radius: float = 1.0) -> DiagnosticsRecord:
    v = np.asarray(f.values)
    w = f.domain.cell_area
    h1, hs = h1_and_hessian_norms(f)
    return DiagnosticsRecord(
        t=float(t),
        mass=float(v.sum() * w),
        second_moment=second_moment(f),
        cutoff_moment=cutoff_moment(f, cut) if cut is not None else math.nan,
        lp_norms={p: float(lp_norm_array(v, w, p)) for p in p_list},
        h1_norm=h1,
        hess_l2=hs,
        sup_norm=float(np.abs(v).max()),
        sup_norm_on_ball=sup_norm_on_ball(f, ball_radius),
    )


def records_for(traj, **kw) -> list:
    return [record(traj.field(i), t, **kw) for i, t in enumerate(traj.times)]


class BlowupType(enum.Enum):
    TYPE1 = "type1"
    TYPE2 = "type2"
    TYPE3 = "type3"
    NUMERICAL = "numerical"
    NONE = "none"
    INCONCLUSIVE = "inconclusive"


@dataclass
class BlowupReport:
    type: BlowupType
    firing_time: float | None = None
    evidence: dict = field(default_factory=dict)
    theoretical_bound: float | None = None
    fired: list = field(default_factory=list)  # every detector that fired, with time

    @property
    def blown_up(self) -> bool:
        return self.type not in (BlowupType.NONE, BlowupType.INCONCLUSIVE)

    @property
    def confirms_bound(self) -> bool | None:
        if self.theoretical_bound is None or self.firing_time is None:
            return None
        return self.firing_time <= self.theoretical_bound


@dataclass(frozen=True)
class DetectorThresholds:
    h1_factor: float = 1e2  # Type 1: H1 grows by this factor over its initial value
    moment_factor: float = 1e2  # Type 2: M grows by this factor over M0 + 1
    ensemble_factor: float = 1e2  # Type 3: ensemble mean local sup grows by this factor
    cap_fraction: float = 0.5


def detect_blowup(trajectory, records=None, *, thresholds: DetectorThresholds = DetectorThresholds(),
                  theoretical_bound: float | None = None) -> BlowupReport:
    """Classify a single-path trajectory.

    ``records`` are the DiagnosticsRecord series. They are computed from
    ``trajectory`` when omitted. A numerical blowup flag on the trajectory
    takes the firing time from the solver. The Type 1 and Type 2 proxies
    scan the records.
    """
    if records is None:
        records = records_for(trajectory)
    if len(records) < 2:
        return BlowupReport(BlowupType.INCONCLUSIVE, evidence={"records": len(records)},
                            theoretical_bound=theoretical_bound)
    t = np.array([r.t for r in records])
    h1 = np.array([r.h1_norm for r in records])
    hs = np.array([r.hess_l2 for r in records])
    M = np.array([r.second_moment for r in records])
    m = np.array([r.mass for r in records])
    fired = []
    if getattr(trajectory, "blown_up", False):
        fired.append((BlowupType.NUMERICAL, float(trajectory.blowup_time)))
    # Type 1: H1 past threshold with accelerating growth; the time integral of ‖D²ρ‖₂ reported
    hess_int = np.concatenate([[0.0], np.cumsum(0.5 * (hs[1:] + hs[:-1]) * np.diff(t))])
    over = np.flatnonzero(h1 > thresholds.h1_factor * max(h1[0], 1e-300))
    for i in over:
        if i >= 2 and (h1[i] - h1[i - 1]) * (t[i - 1] - t[i - 2]) > (h1[i - 1] - h1[i - 2]) * (t[i] - t[i - 1]):
            fired.append((BlowupType.TYPE1, float(t[i])))
            break
    # Type 2: M forced through zero while mass stays positive, or M past threshold
    for i in range(1, len(t)):
        if m[i] <= 0:
            continue
        slope = (M[i] - M[i - 1]) / (t[i] - t[i - 1])
        dt_next = t[i] - t[i - 1]
        if M[i] <= 0 or (slope < 0 and M[i] + slope * dt_next <= 0):
            fired.append((BlowupType.TYPE2, float(t[i])))
            break
        if M[i] > thresholds.moment_factor * (M[0] + 1.0):
            fired.append((BlowupType.TYPE2, float(t[i])))
            break
    evidence = {"t": t, "h1": h1, "hess_integral": hess_int, "second_moment": M, "mass": m}
    if not fired:
        return BlowupReport(BlowupType.NONE, None, evidence, theoretical_bound)
    kind, when = min(fired, key=lambda x: x[1])
    return BlowupReport(kind, when, evidence, theoretical_bound, fired)


def detect_type3(times, ball_sup: np.ndarray, blown_up: np.ndarray, blowup_time: np.ndarray,
                 thresholds: DetectorThresholds = DetectorThresholds(), theoretical_bound=None) -> BlowupReport:
    """Ensemble Type 3 proxy.

    ``ball_sup`` has shape (paths, times), with nan once a path has stopped.
    A stopped path contributes its last value, which is a lower bound for
    the true expectation. The detector fires at the first time when the
    ensemble mean exceeds its threshold and more than ``cap_fraction`` of
    the paths have stopped.
    """
    times = np.asarray(times)
    S = np.array(ball_sup, dtype=float)
    if S.shape[1] != times.size or S.shape[1] < 2:
        return BlowupReport(BlowupType.INCONCLUSIVE, theoretical_bound=theoretical_bound)
    filled = S.copy()
    for j in range(1, filled.shape[1]):
        gap = np.isnan(filled[:, j])
        filled[gap, j] = filled[gap, j - 1]
    mean = filled.mean(axis=0)
    bt = np.where(blown_up, blowup_time, np.inf)
    frac = np.array([(bt <= tt).mean() for tt in times])
    evidence = {"t": times, "mean_ball_sup": mean, "stopped_fraction": frac}
    for j, tt in enumerate(times):
        if mean[j] > thresholds.ensemble_factor * mean[0] or frac[j] > thresholds.cap_fraction:
            if frac[j] > thresholds.cap_fraction:
                return BlowupReport(BlowupType.TYPE3, float(tt), evidence, theoretical_bound,
                                    [(BlowupType.TYPE3, float(tt))])
    return BlowupReport(BlowupType.NONE, None, evidence, theoretical_bound)


def lp_power_series(fields, cell_area: float, p: float) -> np.ndarray:
    v = np.abs(np.asarray(fields))
    return (v**p).sum(axis=(-2, -1)) * cell_area


class ItoLpResidual:
    """Streaming residual of the pathwise Itô L^p identity for transport noise.

    The residual is ``‖ρ(t)‖_p^p - ‖ρ₀‖_p^p`` plus the left-point sums of
    ``ν² p(p-1)/2 ∫ρ^{p-2}|∇ρ|²`` and ``χ p ∫ρ^{p-1} ∇·(ρ∇c)``. The
    stochastic term integrates to zero, because ``ρ^{p-1}∇ρ = ∇ρ^p / p``.
    Feed every step in order through :meth:`update`.

    ``quadratic_variation="calendar"`` uses that form as written, with the
    Itô correction ``σ² p(p-1)/2 ∫ρ^{p-2}|∇ρ|² dt`` folded into ``ν²``.
    Its pathwise error is ``O(√dt)``, because ``Σ(∂ρ·ΔW)²`` only matches
    ``Σ|∇ρ|²dt`` to that order. ``"realized"`` writes the correction as
    ``σ² p(p-1)/2 ∫ρ^{p-2}(∇ρ·ΔW)²`` with the actual increments, which is
    the identity an Euler–Maruyama step satisfies up to ``O(dt)``. Both
    forms converge to the same continuum identity.
    """

    def __init__(self, params, domain, p: float, *, kernel=None, free_space: bool = True, dealias: bool = True,
                 quadratic_variation: str = "realized"):
        if quadratic_variation not in ("realized", "calendar"):
            raise ValueError("quadratic_variation must be 'realized' or 'calendar'")
        self.qv = quadratic_variation
        from stochks.potential import KernelKind

        self.params = params
        self.domain = domain
        self.p = p
        self.kernel = KernelKind.parse(kernel or KernelKind.NEWTONIAN)
        self.free_space = free_space
        self.dealias = dealias
        self.times = []
        self.values = []
        self._lpp0 = None
        self._integral = 0.0
        self._last = None  # (t, integrand) at the previous step

    def _integrand(self, v: np.ndarray, dW) -> tuple[float, float, float]:
        from stochks.potential import gradient_batch

        d = self.domain
        sp = d.spectral
        n = d.n
        p = self.p
        w = d.cell_area
        vh = np.fft.rfft2(v)
        gx = np.fft.irfft2(sp.ikx * vh, s=(n, n))
        gy = np.fft.irfft2(sp.iky * vh, s=(n, n))
        pos = np.maximum(v, 0.0)
        weight = pos ** (p - 2)
        coef = p * (p - 1) / 2.0
        if self.qv == "calendar":
            val = self.params.nu2 * coef * float((weight * (gx * gx + gy * gy)).sum()) * w
            kick = 0.0
        else:
            val = self.params.a**2 * coef * float((weight * (gx * gx + gy * gy)).sum()) * w
            kick = 0.0
            if dW is not None:
                proj = gx * dW[0] + gy * dW[1]
                kick = -self.params.sigma**2 * coef * float((weight * proj * proj).sum()) * w
        if self.params.chi != 0:
            mask = sp.dealias if self.dealias else 1.0
            rh = vh * mask
            rd = np.fft.irfft2(rh, s=(n, n))
            cx, cy = gradient_batch(rd, rh, d, self.kernel, self.free_space)
            fh = np.fft.rfft2(rd * cx) * sp.ikx + np.fft.rfft2(rd * cy) * sp.iky
            div = np.fft.irfft2(fh * mask, s=(n, n))
            val += self.params.chi * p * float((pos ** (p - 1) * div).sum()) * w
        return val, kick, float((pos**p).sum()) * w

    def update(self, t: float, v: np.ndarray, dW=None):
        """Add the state at time ``t``; ``dW`` is the transport increment of the step leaving ``t``."""
        g, kick, lpp = self._integrand(np.asarray(v, dtype=float), None if dW is None else np.asarray(dW))
        if self._last is None:
            self._lpp0 = lpp
        else:
            t0, g0, k0 = self._last
            self._integral += g0 * (t - t0) + k0
        self._last = (t, g, kick)
        self.times.append(t)
        self.values.append(lpp - self._lpp0 + self._integral)

    @property
    def residual(self) -> np.ndarray:
        return np.array(self.values)

    def relative_max(self) -> float:
        return float(np.abs(self.residual).max() / self._lpp0)


def ito_lp_residual(fields, times, params, domain, p: float, increments=None, **kw) -> np.ndarray:
    """Residual series for stored fields at every step; ``increments`` has one row per step."""
    acc = ItoLpResidual(params, domain, p, **kw)
    for k, (t, v) in enumerate(zip(times, fields)):
        dW = increments[k] if increments is not None and k < len(increments) else None
        acc.update(t, v, dW)
    return acc.residual


def weak_form_residual(fields, times, params, domain, phi: np.ndarray, grad_phi, lap_phi: np.ndarray,
                       noise_integral=None) -> np.ndarray:
    """Residual of the weak form for a test function on the grid.

    ``∫φρ(t) - ∫φρ₀ - ∫₀ᵗ [a²/2 ∫Δφ ρ - (χ/4π) ∬ (∇φ(x)-∇φ(y))·(x-y)/|x-y|² ρρ]``
    minus the supplied stochastic integral. The symmetrized double integral
    equals ``χ ∫ρ ∇φ·∇c``, which is the form computed here for the Newtonian
    kernel.
    """
    from stochks.potential import KernelKind, gradient_batch

    F = np.asarray(fields)
    w = domain.cell_area
    Fh = np.fft.rfft2(F, axes=(-2, -1))
    cx, cy = gradient_batch(F, Fh, domain, KernelKind.NEWTONIAN, True)
    px, py = grad_phi
    drift = params.diffusion * (F * lap_phi).sum(axis=(-2, -1)) * w
    drift += params.chi * (F * (px * cx + py * cy)).sum(axis=(-2, -1)) * w
    dt = np.diff(times)
    integ = np.concatenate([[0.0], np.cumsum(drift[:-1] * dt)])
    lhs = (F * phi).sum(axis=(-2, -1)) * w
    res = lhs - lhs[0] - integ
    if noise_integral is not None:
        res = res - noise_integral
    return res
