"""Flat ``key = value`` run configuration.

Grammar: one ``key = value`` per line. ``#`` starts a comment, and blank
lines are ignored. Lists are comma-separated. Booleans are ``true`` or
``false``. Unknown or repeated keys are errors, and absent keys take the
defaults below. ``RunConfig.to_text`` writes the fully resolved document
back out.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields

from stochks.core import ConfigError, DomainSpec, ModelParams, make_gaussian_field
from stochks.noise import DivergenceNoise, GeneralNoise, Phi, constant_mode_noise, make_fourier_basis
from stochks.solver import SolverConfig


@dataclass
class RunConfig:
    # run
    seed: int = 0
    out: str = "out"
    experiment: str = "GlobalExistence"
    paths: int = 50
    # domain
    L: float = 8.0
    n: int = 128
    # model
    a: float = 1.0
    sigma: float = 0.0
    chi: float = 1.0
    # noise: divergence | constant | basis | none
    noise: str = "divergence"
    modes: int = 5
    alpha0: float = 1.0
    phi: str = "linear"  # linear | bounded:<rho_cap>
    # solver
    dt: float = 1e-3
    t_end: float = 1.0
    kernel: str = "newtonian"
    stepping: str = "semi-implicit"
    dealias: bool = True
    cap_factor: float = 1e4
    positivity_action: str = "fail"
    free_space: bool = True
    # initial data
    m0: float = 1.0
    width: float = 1.0
    center: tuple = (0.0, 0.0)
    # outputs
    record_every: int = 10
    snapshot_every: int = 0  # in output rows; 0 disables
    p_list: tuple = (2.0, 4.0)
    cutoff_eps: float = 0.25
    ball_radius: float = 1.0
    # experiments
    sweep: tuple = ()
    C: str = "auto"
    alpha_grid: tuple = ()
    beta_grid: tuple = ()
    # particles
    N: int = 2000
    delta: str = "auto"
    normalization: str = "N-1"
    common_sigma: float = 0.0
    bandwidth: str = "auto"
    replicas: int = 2

    @classmethod
    def keys(cls) -> list:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        seen = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            if key in seen:
                raise ConfigError(f"{source}:{lineno}: key {key!r} repeated")
            seen[key] = _parse(key, value, types[key], source, lineno)
        cfg = cls(**seen)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_text(fh.read(), str(path))

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        cfg = dataclasses.replace(self, **kw)
        cfg.validate()
        return cfg

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(repr(float(x)) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def validate(self):
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.paths < 1:
            raise ConfigError("paths must be >= 1")
        if self.record_every < 1:
            raise ConfigError("record_every must be >= 1")
        if len(self.center) != 2:
            raise ConfigError("center needs two coordinates")
        for name in ("C", "delta", "bandwidth"):
            v = getattr(self, name)
            if v != "auto":
                try:
                    if not float(v) > 0:
                        raise ValueError
                except ValueError:
                    raise ConfigError(f"{name} must be 'auto' or a positive number") from None
        self.domain()
        self.params()
        self.solver()
        self.phi_spec()

    # builders
    def domain(self) -> DomainSpec:
        return DomainSpec(self.L, self.n)

    def params(self) -> ModelParams:
        p = self.p_list[0] if self.p_list else 2.0
        return ModelParams(a=self.a, sigma=self.sigma, chi=self.chi, p=p)

    def phi_spec(self) -> Phi:
        kind, _, arg = self.phi.partition(":")
        if kind == "linear":
            return Phi("linear", self.sigma)
        if kind == "bounded":
            try:
                cap = float(arg)
            except ValueError:
                raise ConfigError("phi = bounded:<rho_cap> needs a number") from None
            return Phi("bounded", self.sigma, cap)
        raise ConfigError(f"unknown phi {self.phi!r}")

    def noise_spec(self):
        d = self.domain()
        if self.noise == "none" or self.sigma == 0:
            return None
        if self.noise == "divergence":
            return DivergenceNoise(self.sigma)
        if self.noise == "constant":
            return constant_mode_noise(d, self.sigma, self.alpha0)
        if self.noise == "basis":
            return GeneralNoise(tuple(make_fourier_basis(d, self.modes, self.alpha0)), self.phi_spec())
        raise ConfigError(f"unknown noise {self.noise!r}")

    def solver(self) -> SolverConfig:
        return SolverConfig(dt=self.dt, t_end=self.t_end, kernel=self.kernel, stepping=self.stepping,
                            dealias=self.dealias, cap_factor=self.cap_factor,
                            positivity_action=self.positivity_action, free_space=self.free_space)

    def initial(self):
        return make_gaussian_field(self.domain(), self.m0, self.width, self.center)

    def experiment_spec(self):
        from stochks.ensemble import ExperimentSpec

        return ExperimentSpec(
            kind=self.experiment, domain=self.domain(), params=self.params(), solver=self.solver(),
            paths=self.paths, seed=self.seed, m0=self.m0, width=self.width, noise=self.noise,
            basis_modes=self.modes, alpha0=self.alpha0, phi=self.phi_spec() if self.noise == "basis" else None,
            p_list=tuple(self.p_list), record_every=self.record_every, sweep=tuple(self.sweep),
            C=None if self.C == "auto" else float(self.C), alpha_grid=tuple(self.alpha_grid),
            beta_grid=tuple(self.beta_grid), ball_radius=self.ball_radius,
        )

    def particle_config(self):
        from stochks.particles import ParticleConfig

        return ParticleConfig(N=self.N, dt=self.dt, domain=self.domain(), m0=self.m0, a=self.a, chi=self.chi,
                              delta=None if self.delta == "auto" else float(self.delta),
                              common_sigma=self.common_sigma, normalization=self.normalization,
                              kernel=self.kernel, init_width=self.width)

    @property
    def resolved_bandwidth(self) -> float:
        if self.bandwidth != "auto":
            return float(self.bandwidth)
        return 1.06 * self.width * self.N ** (-1 / 6)


def _parse(key, value, typ, source, lineno):
    typ = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
    try:
        if typ == "int":
            return int(value, 0)
        if typ == "float":
            v = float(value)
            if not math.isfinite(v):
                raise ValueError
            return v
        if typ == "bool":
            low = value.lower()
            if low not in ("true", "false"):
                raise ValueError
            return low == "true"
        if typ == "tuple":
            return tuple(float(x) for x in value.split(",") if x.strip())
        return value
    except ValueError:
        raise ConfigError(f"{source}:{lineno}: bad value {value!r} for {key} ({typ})") from None
