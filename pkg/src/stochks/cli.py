"""``stochks`` command line: simulate, ensemble, particles, verify.

Exit codes: 0 success, 1 configuration error, 2 internal error, 3 verify failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from stochks import __version__
from stochks.config import RunConfig
from stochks.core import ConfigError, Field, RngContext
from stochks.diagnostics import CutoffSpec, detect_blowup, record
from stochks.io import (SnapshotError, read_snapshot, write_csv, write_manifest, write_particles, write_schema,
                        write_snapshot)
from stochks.moments import blowup_mass_condition, blowup_time_bound
from stochks.noise import BrownianPath
from stochks.solver import Trajectory, simulate_batch

log = logging.getLogger("stochks")

EXIT_OK, EXIT_CONFIG, EXIT_INTERNAL, EXIT_VERIFY = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value config file")
    common.add_argument("--seed", type=_u64, help="master seed override")
    common.add_argument("--out", type=Path, help="output directory override")
    common.add_argument("--paths", type=int, help="ensemble size override")
    common.add_argument("--quiet", action="store_true")
    p = _Parser(prog="stochks", description="Stochastic Keller-Segel laboratory")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="single-path run with diagnostics CSV")
    sub.add_parser("ensemble", parents=[common], help="run the configured experiment")
    sub.add_parser("particles", parents=[common], help="interacting particle run")
    v = sub.add_parser("verify", parents=[common], help="built-in invariant checks")
    v.add_argument("--full", action="store_true", help="acceptance-size checks (slow)")
    v.add_argument("--only", action="append", help="run only the named check (repeatable)")
    v.add_argument("snapshots", nargs="*", type=Path, help="snapshot files to validate")
    return p


def load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    return cfg.with_overrides(seed=args.seed, out=str(args.out) if args.out else None, paths=args.paths)


def _prepare_out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(cfg.to_text())
    return out


def _diag_columns(p_list):
    cols = [("t", "time", "output time"),
            ("mass", "mass", "integral of rho"),
            ("second_moment", "mass*length^2", "integral of |x|^2 rho"),
            ("cutoff_moment", "mass*length^2", "integral of phi_eps rho")]
    cols += [(f"lp_{p:g}", "mass/length^(2-2/p)", f"L^{p:g} norm of rho") for p in p_list]
    cols += [("h1", "mass/length", "H1 norm"),
             ("hessian_l2", "mass/length^3", "L2 norm of the Hessian"),
             ("sup", "mass/length^2", "max of |rho|"),
             ("sup_ball", "mass/length^2", "max of |rho| on the ball of radius ball_radius"),
             ("blown_up", "flag", "1 on the row written after a blowup flag")]
    return cols


def cmd_simulate(cfg: RunConfig) -> int:
    out = _prepare_out(cfg)
    d = cfg.domain()
    params = cfg.params()
    noise = cfg.noise_spec()
    scfg = cfg.solver()
    rho0 = cfg.initial()
    path = None
    if noise is not None:
        path = BrownianPath.sample(RngContext(cfg.seed), scfg.dt, scfg.steps, noise.components, keys=(0,))
    cut = CutoffSpec(cfg.cutoff_eps)
    recs = []
    snaps = []

    def obs(k, t, idx, rho):
        f = Field(d, rho[0])
        recs.append(record(f, t, tuple(cfg.p_list), cut, cfg.ball_radius))
        if cfg.snapshot_every and (len(recs) - 1) % cfg.snapshot_every == 0:
            name = out / f"snapshot_{len(snaps):05d}.sks"
            write_snapshot(name, f, t, params)
            snaps.append(name.name)

    res = simulate_batch(rho0, params, noise, scfg, None if path is None else [path],
                         record_every=cfg.record_every, observer=obs)
    cols = _diag_columns(cfg.p_list)
    rows = [r.as_row(tuple(cfg.p_list)) + [0] for r in recs]
    blown = bool(res.blown_up[0])
    if blown and rows:
        rows[-1][-1] = 1
    write_csv(out / "diagnostics.csv", [c[0] for c in cols], rows)
    write_schema(out / "diagnostics.schema", cols)
    bound = None
    if params.chi > 0 and blowup_mass_condition(cfg.m0, params):
        bound = blowup_time_bound(cfg.m0, recs[0].second_moment, params)
    traj = Trajectory(d, res.times, [], blown, float(res.blowup_time[0]) if blown else None, res.reasons[0])
    rep = detect_blowup(traj, recs, theoretical_bound=bound)
    manifest = {"command": "simulate", "seed": cfg.seed, "steps": scfg.steps, "rows": len(rows),
                "blown_up": blown, "snapshots": len(snaps), "version": __version__}
    if blown or rep.blown_up:
        lines = [f"type = {rep.type.value}", f"firing_time = {rep.firing_time!r}",
                 f"solver_reason = {res.reasons[0]}", f"solver_time = {res.blowup_time[0]!r}",
                 f"theoretical_bound = {bound!r}", f"confirms_bound = {rep.confirms_bound}"]
        lines += [f"fired = {k.value}@{t!r}" for k, t in rep.fired]
        (out / "blowup_report.txt").write_text("\n".join(lines) + "\n")
        manifest["blowup_type"] = rep.type.value
    write_manifest(out / "manifest.txt", manifest)
    if not cfg_quiet:
        print(f"simulate: {len(rows)} rows, blowup={'yes at t=%.6g' % res.blowup_time[0] if blown else 'no'}")
    return EXIT_OK


def cmd_ensemble(cfg: RunConfig) -> int:
    from stochks.ensemble import run

    out = _prepare_out(cfg)
    spec = cfg.experiment_spec()
    s = run(spec)
    write_csv(out / "summary.csv", ["t", "quantity", "mean", "var", "ci95", "count"], s.rows())
    write_schema(out / "summary.schema", [
        ("t", "time", "output time"), ("quantity", "-", "diagnostic name"),
        ("mean", "varies", "mean over paths alive at t"), ("var", "varies", "sample variance"),
        ("ci95", "varies", "half-width of the 95% normal interval"), ("count", "paths", "paths contributing")])
    ft = s.firing_times
    write_csv(out / "firing_times.csv", ["path", "firing_time", "reason"],
              [(i, float(ft[i]) if np.isfinite(ft[i]) else "", s.reasons[i] or "") for i in range(len(ft))])
    write_schema(out / "firing_times.schema", [
        ("path", "-", "path index (RNG key)"), ("firing_time", "time", "numerical blowup time, empty if none"),
        ("reason", "-", "cap, nonfinite or positivity")])
    metrics = {k: v for k, v in s.metrics.items()}
    metrics.update(kind=s.kind.value, paths=s.paths, blowup_fraction=s.blowup_fraction, passed=s.passed,
                   seed=cfg.seed, version=__version__)
    write_manifest(out / "manifest.txt", {k: _flat(v) for k, v in metrics.items()})
    if s.failures:
        (out / "failures.txt").write_text("\n".join(s.failures) + "\n")
    if not cfg_quiet:
        print(f"ensemble {s.kind.value}: passed={s.passed} blowup_fraction={s.blowup_fraction:.4g}")
        for k in sorted(s.metrics):
            print(f"  {k} = {_flat(s.metrics[k])}")
    return EXIT_OK


def _flat(v):
    if isinstance(v, (tuple, list)):
        return " ".join(str(_flat(x)) for x in v)
    if isinstance(v, dict):
        return " ".join(f"{k}:{_flat(x)}" for k, x in v.items())
    return v


def cmd_particles(cfg: RunConfig) -> int:
    from stochks.particles import empirical_density, simulate_particles

    out = _prepare_out(cfg)
    pc = cfg.particle_config()
    steps = int(round(cfg.t_end / cfg.dt))
    traj = simulate_particles(pc, RngContext(cfg.seed), steps, record_every=cfg.record_every)
    h = cfg.resolved_bandwidth
    rows = []
    for j, (t, pos) in enumerate(zip(traj.times, traj.snapshots)):
        kde = empirical_density(pos, h, pc.domain, pc.m0)
        rows.append((float(t), pc.m0 * float((pos * pos).sum(axis=1).mean()),
                     float(np.asarray(kde.values).sum()) * pc.domain.cell_area))
        if cfg.snapshot_every and j % cfg.snapshot_every == 0:
            write_particles(out / f"particles_{j:05d}.csv", pos)
    write_csv(out / "particles.csv", ["t", "second_moment", "kde_mass"], rows)
    write_schema(out / "particles.schema", [("t", "time", "output time"),
                                            ("second_moment", "mass*length^2", "(m0/N) sum |X_i|^2"),
                                            ("kde_mass", "mass", "mass of the kernel density estimate")])
    write_manifest(out / "manifest.txt", {"command": "particles", "N": pc.N, "delta": pc.resolved_delta,
                                          "bandwidth": h, "seed": cfg.seed, "version": __version__})
    if not cfg_quiet:
        print(f"particles: N={pc.N}, {len(rows)} rows")
    return EXIT_OK


def cmd_verify(cfg: RunConfig, args) -> int:
    from stochks.verify import run_suite

    ok = True
    say = (lambda s: None) if cfg_quiet else print
    # the configured solver must itself be admissible
    try:
        cfg.solver().validate(cfg.domain(), cfg.params())
        say("PASS configured stability guard")
    except ConfigError as e:
        print(f"FAIL configured stability guard: {e}")
        ok = False
    for snap in args.snapshots:
        try:
            read_snapshot(snap)
            say(f"PASS snapshot {snap}")
        except (SnapshotError, OSError) as e:
            print(f"FAIL snapshot {snap}: {e}")
            ok = False
    if ok:
        results = run_suite("full" if args.full else "quick", only=args.only, report=say)
        failed = [r for r in results if not r.passed]
        for r in failed:
            if cfg_quiet:
                print(r.line())
        ok = not failed
    return EXIT_OK if ok else EXIT_VERIFY


cfg_quiet = False


def main(argv=None) -> int:
    global cfg_quiet
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg_quiet = bool(args.quiet)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "ensemble":
            return cmd_ensemble(cfg)
        if args.command == "particles":
            return cmd_particles(cfg)
        return cmd_verify(cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as e:  # noqa: BLE001 - reported, not swallowed
        log.exception("internal error")
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
