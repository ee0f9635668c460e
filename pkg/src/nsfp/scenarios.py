"""Named initial profiles and the mapping from a :class:`RunConfig` to a
ready-to-run :class:`Simulation`."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from . import constitutive as cv
from . import diagnostics as dg
from . import domain_flow as dfl
from . import pde_solver as ps
from .config import RunConfig
from .errors import NumericalError
from .grid import Grid


def make_grid(cfg: RunConfig):
    return Grid.box(cfg.grid.dim, cfg.grid.cells, cfg.grid.half_width)


def ellipse_level_set(semi_axes):
    """Level set negative inside the ellipsoid, scaled to unit slope on its
    smallest axis; the solver redistances it."""
    axes = np.asarray(semi_axes, dtype=float)
    scale = float(axes.min())

    def phi(x):
        d = x.shape[0]
        a = axes[:d].reshape((d,) + (1,) * (x.ndim - 1))
        return (np.sqrt(np.sum((x / a) ** 2, axis=0)) - 1.0) * scale

    return phi


def whole_box(x):
    return -np.ones(x.shape[1:])


def hydrostatic_profile(x, rho_c, theta, eos: cv.EosParams, g, half_width):
    """Self-gravitating isothermal slab, densest at ``x = 0`` and symmetric.

    Integrates ``rho' = rho G / p_rho`` and ``G' = -4 pi g (rho - m)`` from
    the centre, ``G`` being the field ``Psi'``. The background mean ``m`` is
    chosen so that the field first returns to zero exactly at the wall, which
    makes ``m`` the slab mean and the profile monotone. When gravity is too
    weak for such a profile (the linearised half-period already exceeds the
    half width) only the uniform slab is in equilibrium, and it is returned.
    """
    x = np.asarray(x, dtype=float)
    if g == 0:
        return np.full_like(x, rho_c)

    def rhs(_, y, mean):
        rho, G = y
        dpdr = float(cv.pressure_density_derivative(cv.ThermoState(max(rho, 0.0), theta), eos))
        return [rho * G / dpdr, -4.0 * math.pi * g * (rho - mean)]

    def field_zero(_, y, mean):
        return y[1]

    field_zero.direction = 1.0
    field_zero.terminal = True

    def half_period(mean):
        sol = solve_ivp(rhs, (0.0, 1e3 * half_width), [rho_c, 0.0], args=(mean,), events=field_zero,
                        rtol=1e-12, atol=1e-14, method="DOP853")
        return sol.t_events[0][0] if sol.t_events[0].size else math.inf

    k2 = 4.0 * math.pi * g * rho_c / float(cv.pressure_density_derivative(cv.ThermoState(rho_c, theta), eos))
    if math.pi / math.sqrt(k2) >= half_width:
        return np.full_like(x, rho_c)
    lo, hi = 1e-9 * rho_c, rho_c * (1.0 - 1e-9)
    if not half_period(lo) > half_width > half_period(hi):
        raise NumericalError("no monotone hydrostatic profile for these parameters")
    mean = brentq(lambda m: half_period(m) - half_width, lo, hi, xtol=1e-14 * rho_c, rtol=1e-13)
    sol = solve_ivp(rhs, (0.0, half_width), [rho_c, 0.0], args=(mean,), rtol=1e-12, atol=1e-14,
                    dense_output=True, method="DOP853")
    if not sol.success:
        raise NumericalError(f"hydrostatic quadrature failed: {sol.message}")
    return sol.sol(np.abs(x).ravel())[0].reshape(x.shape)


def initial_density(cfg: RunConfig, grid: Grid):
    sc = cfg.scenario
    x = grid.centers
    if sc.profile == "uniform":
        return np.full(grid.shape, sc.density)
    if sc.profile == "gaussian_blob":
        return sc.density * np.exp(-np.sum(x**2, axis=0) / (2.0 * sc.sigma**2))
    g = cfg.gravity.g if cfg.gravity.enabled else 0.0
    return hydrostatic_profile(x[0], sc.density, sc.theta0, cfg.eos, g, cfg.grid.half_width)


def velocity_spec(cfg: RunConfig):
    sc = cfg.scenario
    table = dfl.TabulatedField.read(sc.velocity_table) if sc.velocity == "tabulated" else None
    return dfl.VelocityFieldSpec(sc.velocity, rate=sc.rate, amplitude=sc.amplitude, frequency=sc.frequency,
                                 support_radius=sc.support_radius, cutoff_width=sc.cutoff_width, table=table)


def boundary_data(cfg: RunConfig):
    sc = cfg.scenario
    if sc.boundary == "constant":
        return ps.BoundaryData.uniform(sc.theta_B)
    return ps.BoundaryData.angular(sc.theta_B, sc.theta_B_amplitude)


def build_setup(cfg: RunConfig):
    grid = make_grid(cfg)
    sc = cfg.scenario
    phi0 = ellipse_level_set(sc.semi_axes) if sc.domain == "ellipse" else whole_box
    return ps.Setup(grid=grid, eos=cfg.eos, transport=cfg.transport, penalty=cfg.penalty_params,
                    gravity=cfg.gravity.params(), step=cfg.step, velocity=velocity_spec(cfg), phi0=phi0,
                    boundary=boundary_data(cfg), M0=sc.M0, penalty_enabled=cfg.penalty.enabled)


def build_simulation(cfg: RunConfig):
    setup = build_setup(cfg)
    rho0 = initial_density(cfg, setup.grid)
    return ps.Simulation(setup, rho0, cfg.scenario.theta0)


@dataclass
class RunResult:
    config: RunConfig
    simulation: ps.Simulation
    recorder: dg.Recorder
    elapsed: float

    @property
    def records(self):
        return self.recorder.records

    @property
    def final(self):
        return self.recorder.records[-1]


def simulate(cfg: RunConfig, t_end=None, on_step=None):
    """Run ``cfg`` to ``t_end`` (default: the scenario end time) with a
    diagnostics record after every step."""
    start = time.perf_counter()
    sim = build_simulation(cfg)
    rec = dg.Recorder(sim)

    def hook(s, terms):
        rec(s, terms)
        if on_step is not None:
            on_step(s, terms, rec)

    sim.run(cfg.scenario.t_end if t_end is None else t_end, on_step=hook)
    return RunResult(cfg, sim, rec, time.perf_counter() - start)
