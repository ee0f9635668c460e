"""End-to-end acceptance suite: one PASS/FAIL line per criterion.

The simulation-backed criteria share session fixtures: the 64^2 reference
run (executed twice for the determinism check), its 128^2 refinement and the
three parameter sweeps. Expect roughly a quarter of an hour on one core.
"""

import math
import time

import numpy as np
import pytest

from nsfp import constitutive as cv
from nsfp import diagnostics as dg
from nsfp import domain_flow as dfl
from nsfp.config import RunConfig, with_overrides
from nsfp.grid import Grid
from nsfp.harness import SweepPlan, fit_slope, run_sweep
from nsfp.poisson import GravityParams, energy_identity_residual, solve_gravity
from nsfp.scenarios import simulate

REFERENCE = RunConfig()


@pytest.fixture(scope="session")
def reference_runs():
    runs = []
    for _ in range(2):
        res = simulate(REFERENCE)
        runs.append((res, res.recorder.csv_text()))
    return runs


@pytest.fixture(scope="session")
def fine_run():
    return simulate(with_overrides(REFERENCE, grid={"cells": 2 * REFERENCE.grid.cells}))


@pytest.fixture(scope="session")
def sweeps():
    return {}


def _sweep(cache, param):
    if param not in cache:
        cache[param] = run_sweep(SweepPlan.from_config(REFERENCE, param), REFERENCE)
    return cache[param]


def test_c01_eos_hypotheses(criterion):
    start = time.perf_counter()
    report = cv.hypothesis_audit(REFERENCE.eos, REFERENCE.transport, cv.default_audit_grid(64, 1e-6, 1e3))
    elapsed = time.perf_counter() - start
    heat = report["0 < de_M/dtheta <= c"].constant
    gibbs = max(report["Gibbs theta ds/dtheta = de/dtheta"].constant,
                report["Gibbs ds/drho = -dp/dtheta / rho^2"].constant)
    third = report["third law S(1e6) < 2e-3 S(1)"].constant
    ok = (report.passed and gibbs < 1e-6 and abs(heat - 25 / 16) <= 1e-6 and third < 2e-3 and elapsed < 5.0)
    criterion(1, "EOS hypothesis audit", ok,
              f"all checks {'pass' if report.passed else 'do not pass'}, Gibbs {gibbs:.2e}, "
              f"de_M/dtheta sup {heat:.9f}, S(1e6)/S(1) {third:.2e}, {elapsed:.2f} s")


def test_c02_entropy_quadrature(criterion):
    errs = [abs(cv.entropy_quadrature(z, REFERENCE.eos) - (math.log1p(1 / z) + 1.5 / (1 + z)))
            for z in (1e-3, 1.0, 1e3)]
    criterion(2, "entropy closed form vs quadrature", max(errs) <= 1e-8, f"max error {max(errs):.2e}")


def test_c03_poisson_convergence(criterion):
    start = time.perf_counter()
    G = GravityParams(g=1.0, tol=1e-10)
    hs, errs, identity = [], [], []
    for n in (32, 64, 128):
        grid = Grid((n, n), (0.0, 0.0), (2.0, 2.0))
        x, y = grid.centers
        k = math.pi / 2.0
        psi = np.cos(k * x) * np.cos(k * y)
        rho = 1.0 + 2 * k**2 * psi / (4 * math.pi)
        Psi = solve_gravity(rho, grid, G)
        errs.append(math.sqrt(grid.integrate((Psi - (psi - psi.mean())) ** 2)))
        identity.append(energy_identity_residual(Psi, rho, grid, G))
        hs.append(grid.dx)
    slope = fit_slope(hs, errs).slope
    elapsed = time.perf_counter() - start
    ok = slope >= 1.8 and max(identity) <= 1e-10 and elapsed < 30
    criterion(3, "Poisson manufactured solution", ok,
              f"L2 slope {slope:.3f}, energy identity {max(identity):.1e}, {elapsed:.1f} s")


def test_c04_geometry_oracles(criterion):
    rot = dfl.VelocityFieldSpec("rigid_rotation", rate=0.7, support_radius=1.5, cutoff_width=0.3)
    seeds = np.random.default_rng(1).uniform(-0.7, 0.7, (2, 60))
    out = dfl.advance_flow_map(rot, 0.0, math.pi / (2 * rot.rate), seeds, dt_geom=1e-3)
    turn = float(np.max(np.abs(out - np.stack([-seeds[1], seeds[0]]))))

    g = Grid.box(2, 128, 1.6)
    c, r = np.array([0.45, 0.0]), 0.35
    t = 1.1
    phi = dfl.rebuild_level_set(rot, t, lambda x: np.hypot(x[0] - c[0], x[1] - c[1]) - r, g, dt_geom=1e-3)
    a = rot.rate * t
    rc = (math.cos(a) * c[0] - math.sin(a) * c[1], math.sin(a) * c[0] + math.cos(a) * c[1])
    agree = float(np.mean((phi < 0) == (np.hypot(g.centers[0] - rc[0], g.centers[1] - rc[1]) < r)))

    g64 = Grid.box(2, 64, 1.0)
    geo = dfl.interface_geometry(np.hypot(*g64.centers) - 0.55, g64)
    perim = abs(geo.perimeter(g64) / (2 * math.pi * 0.55) - 1)
    ok = turn < 1e-8 and agree >= 0.999 and perim <= 0.05
    criterion(4, "geometry oracles", ok,
              f"quarter turn error {turn:.1e}, sign agreement {agree:.5f}, perimeter error {perim:.2%}")


def test_c05_conservation(reference_runs, criterion):
    res, _ = reference_runs[0]
    recs = res.records
    drift = abs(recs[-1].mass - recs[0].mass) / recs[0].mass
    min_rho = min(r.min_rho for r in recs)
    min_theta = min(r.min_theta for r in recs)
    reached = math.isclose(res.simulation.t, REFERENCE.scenario.t_end, rel_tol=1e-12)
    ok = reached and drift < 1e-10 and min_rho >= 0 and min_theta > 0 and res.elapsed < 300
    criterion(5, "conservation in the reference run", ok,
              f"{res.simulation.step_count} steps to t = {res.simulation.t:.4g}, mass drift {drift:.1e}, "
              f"min rho {min_rho:.2e}, min theta {min_theta:.3f}, {res.elapsed:.0f} s")


def test_c06_entropy_production(reference_runs, criterion):
    res, _ = reference_runs[0]
    worst = min(r.min_entropy_production for r in res.records)
    criterion(6, "cellwise entropy production", worst >= 0, f"min cell sigma {worst:.3e}")


def _p99(rec):
    return float(np.percentile(np.maximum(rec.residuals(), 0.0), 99))


def test_c07_ballistic_inequality(reference_runs, fine_run, criterion):
    res, _ = reference_runs[0]
    r, tol = res.recorder.residuals(), res.recorder.tolerances()
    frac = float(np.mean(r <= tol))
    coarse, fine = _p99(res.recorder), _p99(fine_run.recorder)
    ratio = coarse / fine if fine > 0 else math.inf
    ok = frac >= 0.99 and ratio >= 1.7
    criterion(7, "ballistic-energy inequality", ok,
              f"r <= tol at {frac:.2%} of steps, p99 of max(r,0) {coarse:.3e} -> {fine:.3e} (x{ratio:.2f}), "
              f"C_TOL = {dg.C_TOL}")


def test_c08_penalty_limit(sweeps, criterion):
    start = time.perf_counter()
    rep = _sweep(sweeps, "eps")
    elapsed = time.perf_counter() - start
    ok = rep.passed and rep.verdicts[0].fit.slope >= 0.8 and elapsed < 25 * 60
    detail = rep.failure or f"slope {rep.verdicts[0].fit.slope:.3f} (r2 {rep.verdicts[0].fit.r2:.4f}), {elapsed:.0f} s"
    criterion(8, "penalty limit (eps-sweep)", ok, detail)


def test_c09_solid_vacuum(reference_runs, criterion):
    res, _ = reference_runs[0]
    frac = max(r.solid_mass for r in res.records) / res.records[0].mass
    criterion(9, "solid vacuum", frac < 1e-6, f"max solid mass fraction {frac:.2e}")


def test_c10_scaling_limit(sweeps, criterion):
    rep = _sweep(sweeps, "h")
    ok = rep.passed and all(v.fit.slope > 0 and v.fit.r2 >= 0.9 for v in rep.verdicts)
    detail = rep.failure or ", ".join(f"{v.name} {v.fit.slope:.3f} (r2 {v.fit.r2:.3f})" for v in rep.verdicts)
    criterion(10, "scaling limit (h-sweep)", ok, detail)


def test_c11_artificial_pressure_limit(sweeps, criterion):
    rep = _sweep(sweeps, "delta")
    ok = rep.passed and rep.verdicts[0].fit.slope >= 0.9
    detail = rep.failure or f"slope {rep.verdicts[0].fit.slope:.3f} (r2 {rep.verdicts[0].fit.r2:.4f})"
    criterion(11, "artificial-pressure limit (delta-sweep)", ok, detail)


def test_c12_helmholtz_coercivity(criterion):
    rho, theta = cv.default_audit_grid(64, 1e-6, 1e3)
    step = math.log(rho[1, 0] / rho[0, 0])
    rho_bar = 1.0
    mins, offsets = [], []
    for tt in (0.5, 1.0, 2.0):
        H = dg.helmholtz_relative(rho, theta, rho_bar, tt, REFERENCE.eos)
        k = np.unravel_index(int(np.argmin(H)), H.shape)
        mins.append(float(H.min()))
        offsets.append(max(abs(math.log(rho[k] / rho_bar)), abs(math.log(theta[k] / tt))) / step)
    ok = min(mins) >= -1e-10 and max(offsets) <= 1.0
    criterion(12, "relative Helmholtz coercivity", ok,
              f"min {min(mins):.2e}, argmin offset at most {max(offsets):.2f} cells")


def test_c13_determinism(reference_runs, criterion):
    (_, a), (_, b) = reference_runs
    criterion(13, "bit-identical reruns", a == b, f"{len(a.splitlines())} CSV lines, identical: {a == b}")
