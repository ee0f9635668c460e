"""Command-line entry point.

Exit codes: 0 success, 1 usage, 2 configuration, 3 numerical failure,
4 invariant violation or failed verdict.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import constitutive as cv
from . import diagnostics as dg
from . import domain_flow as dfl
from .config import RunConfig, format_config, parse_config
from .errors import ConfigError, InvariantViolation, NsfpError, NumericalError
from .harness import SweepPlan, run_sweep
from .io import atomic_write, write_snapshot

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_INVARIANT = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def build_parser():
    p = _Parser(prog="nsfp", description="Penalised Navier-Stokes-Fourier-Poisson solver and verification harness")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sub.add_parser("run", help="run one simulation")
    r.add_argument("config")
    r.add_argument("--output", help="output directory (overrides [output] directory)")
    s = sub.add_parser("sweep", help="parameter sweep with slope fits")
    s.add_argument("config")
    s.add_argument("--param", required=True, choices=("eps", "h", "delta"))
    s.add_argument("--output", help="directory for the sweep CSV")
    a = sub.add_parser("audit-eos", help="check the constitutive hypotheses")
    a.add_argument("config")
    g = sub.add_parser("validate-geometry", help="check the domain velocity field")
    g.add_argument("config")
    g.add_argument("--samples", type=int, default=5, help="number of sample times in [0, t_end]")
    sub.add_parser("print-defaults", help="print the reference configuration")
    return p


def _cmd_run(cfg: RunConfig, args):
    from .scenarios import build_simulation

    out_dir = args.output or cfg.output.directory
    os.makedirs(out_dir, exist_ok=True)
    sim = build_simulation(cfg)
    rec = dg.Recorder(sim)
    every = cfg.output.snapshot_every

    def hook(s, terms):
        rec(s, terms)
        if every and s.step_count % every == 0:
            write_snapshot(os.path.join(out_dir, f"snapshot_{s.step_count:06d}.txt"), s.fields, s.grid, s.t)

    csv_path = os.path.join(out_dir, cfg.output.diagnostics_file)
    try:
        sim.run(cfg.scenario.t_end, on_step=hook)
    except NumericalError:
        write_snapshot(os.path.join(out_dir, "failure_state.txt"), sim.fields, sim.grid, sim.t)
        atomic_write(csv_path, _thin(rec, cfg))
        raise
    write_snapshot(os.path.join(out_dir, "final_state.txt"), sim.fields, sim.grid, sim.t)
    atomic_write(csv_path, _thin(rec, cfg))
    first, last = rec.records[0], rec.records[-1]
    r = rec.residuals()
    tol = rec.tolerances()
    print(f"steps {sim.step_count}, t = {sim.t:.6g}")
    print(f"relative mass drift     {abs(last.mass - first.mass) / max(first.mass, 1e-300):.3e}")
    print(f"min density             {min(q.min_rho for q in rec.records):.3e}")
    print(f"min temperature         {min(q.min_theta for q in rec.records):.3e}")
    print(f"max solid mass fraction {max(q.solid_mass for q in rec.records) / max(first.mass, 1e-300):.3e}")
    print(f"steps with r <= tol     {float(np.mean(r <= tol)) if r.size else 1.0:.4f}")
    flags = [k for k, v in rec.growth_flags().items() if v]
    print("superlinear monitors    " + (", ".join(flags) if flags else "none"))
    print(f"diagnostics written to {csv_path}")
    return EXIT_OK


def _thin(rec, cfg):
    every = cfg.output.diagnostics_every
    rows = [r for i, r in enumerate(rec.records) if i % every == 0 or i == len(rec.records) - 1]
    return dg.records_to_csv(rows)


def _cmd_sweep(cfg: RunConfig, args):
    plan = SweepPlan.from_config(cfg, args.param)
    report = run_sweep(plan, cfg)
    print(report.format())
    out_dir = args.output or cfg.output.directory
    if report.failure is None:
        atomic_write(os.path.join(out_dir, f"sweep_{args.param}.csv"), report.csv_text())
    if report.failure is not None:
        return EXIT_NUMERICAL
    return EXIT_OK if report.passed else EXIT_INVARIANT


def _cmd_audit(cfg: RunConfig, args):
    report = cv.hypothesis_audit(cfg.eos, cfg.transport)
    print(report.format())
    return EXIT_OK if report.passed else EXIT_INVARIANT


def _cmd_geometry(cfg: RunConfig, args):
    from .scenarios import build_setup

    setup = build_setup(cfg)
    times = np.linspace(0.0, cfg.scenario.t_end, max(args.samples, 2))
    sets = []
    for t in times:
        geo = dfl.build_geometry(setup.velocity, float(t), setup.phi0, setup.grid, setup.M0,
                                 setup.step.delta_half_width, setup.step.dt_geom, check_floor=False)
        sets.append((float(t), geo.phi))
    report = dfl.validate_velocity(setup.velocity, setup.grid, sets, M0=setup.M0)
    print(report.format())
    return EXIT_OK if report.passed else EXIT_INVARIANT


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    if args.command == "print-defaults":
        sys.stdout.write(format_config(RunConfig()))
        return EXIT_OK
    try:
        cfg = parse_config(args.config)
        handler = {"run": _cmd_run, "sweep": _cmd_sweep, "audit-eos": _cmd_audit,
                   "validate-geometry": _cmd_geometry}[args.command]
        return handler(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except NsfpError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
