"""Monitored functionals: ballistic energy and its inequality residual,
entropy production, solid-region integrals, uniform-bound monitors, the
renormalised continuity residual and the relative Helmholtz function.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import constitutive as cv
from . import penalization as pen
from .grid import Grid, central_divergence, central_gradient
from .poisson import lebesgue_norm, poisson_bound_ratio, sobolev_norm

# tol_ineq = C_TOL * (dt + dx); calibrated on the reference scenario at 64^2
C_TOL = 2.0


def inequality_tolerance(dt, dx, c_tol=C_TOL):
    return c_tol * (dt + dx)


# ----------------------------------------------------------------- energies


def kinetic_energy(fields, grid: Grid):
    return grid.integrate(0.5 * fields.rho * np.sum(fields.u**2, axis=0))


def ballistic_density(rho, u, theta, theta_tilde, chi_xi, params: pen.PenaltyParams, eos: cv.EosParams):
    """``1/2 rho |u|^2 + rho e_xi - theta_tilde rho s_xi + delta rho^beta / (beta - 1)`` per cell."""
    st = cv.ThermoState(rho, theta)
    E = np.asarray(cv.energy_density(st, eos, chi_xi))
    S = np.asarray(cv.entropy_density(st, eos, chi_xi))
    kin = 0.5 * rho * np.sum(np.asarray(u) ** 2, axis=0)
    return kin + E - theta_tilde * S + pen.artificial_energy(rho, params)


def ballistic_energy(fields, theta_tilde, masks, params, eos, grid: Grid):
    """Box integral of the ballistic energy density; the internal energy is
    taken from the temperature so that it matches the entropy exactly."""
    return grid.integrate(ballistic_density(fields.rho, fields.u, fields.theta, theta_tilde,
                                            masks.chi_xi, params, eos))


def inequality_residual(B0, B1, dt, terms):
    """``(B1 - B0) / dt + D - W`` for one step."""
    return (B1 - B0) / dt + terms.D - terms.W


# --------------------------------------------------------- entropy production


def entropy_production(u, theta, masks, visc, cond, tp: cv.TransportParams):
    """Cellwise ``(1/theta)(S:grad u + kappa |grad theta|^2 / theta)`` and its
    per-cell pieces; every summand is a square with a nonnegative weight."""
    mu, eta, kappa = pen.mollified_transport(theta, masks, tp=tp)
    Q = visc.heating(u, mu, eta)
    cond_part = cond.cell_dissipation(theta, cond.face_conductivity(kappa))
    return Q / theta + cond_part


# ----------------------------------------------------------- solid integrals


def solid_integral_rates(fields, masks, params: pen.PenaltyParams, eos: cv.EosParams,
                         tp: cv.TransportParams, grid: Grid):
    """Instantaneous solid-region integrands of A1..A4, integrated in space.

    A1: radiation pressure ``a_xi theta^4 / 3``; A2: Frobenius norm of the
    damped stress; A3: ``a_xi theta^3 (1 + |u|)``; A4: ``kappa_nu |grad theta| / theta``.
    """
    from .operators import stress_tensor

    solid = masks.solid
    if not np.any(solid):
        return (0.0, 0.0, 0.0, 0.0)
    th = fields.theta
    a_xi = eos.a * masks.chi_xi
    mu, eta, kappa = pen.mollified_transport(th, masks, tp=tp)
    S = stress_tensor(fields.u, mu, eta, grid)
    s_norm = np.sqrt(np.sum(S**2, axis=(0, 1)))
    speed = np.sqrt(np.sum(fields.u**2, axis=0))
    grad = np.sqrt(np.sum(central_gradient(th, grid) ** 2, axis=0))
    dV = grid.cell_volume
    A1 = float(np.sum((a_xi * th**4 / 3.0)[solid]) * dV)
    A2 = float(np.sum(s_norm[solid]) * dV)
    A3 = float(np.sum((a_xi * th**3 * (1.0 + speed))[solid]) * dV)
    A4 = float(np.sum((kappa * grad / th)[solid]) * dV)
    return (A1, A2, A3, A4)


# ------------------------------------------------------------ bound monitors

MONITORS = ("rho_53", "sink_l1", "grad_theta_alpha", "psi_w12", "rho_s_u_l1", "poisson_ratio")


def bound_monitors(fields, masks, params: pen.PenaltyParams, eos: cv.EosParams, grid: Grid):
    rho, th = fields.rho, fields.theta
    st = cv.ThermoState(rho, th)
    rs = np.asarray(cv.entropy_density(st, eos, masks.chi_xi))
    g = central_gradient(th ** (params.alpha / 2.0), grid)
    return {
        "rho_53": grid.integrate(rho ** (5.0 / 3.0)),
        "sink_l1": grid.integrate(params.lambda_ * th ** (params.alpha + 1.0)),
        "grad_theta_alpha": grid.integrate(np.sum(g**2, axis=0)),
        "psi_w12": sobolev_norm(fields.Psi, grid),
        "rho_s_u_l1": grid.integrate(rs * np.sqrt(np.sum(fields.u**2, axis=0))),
        "poisson_ratio": poisson_bound_ratio(fields.Psi, rho, grid),
    }


def superlinear_growth(times, values, factor=2.0):
    """True when the late increment outgrows a linear continuation of the
    early one by more than ``factor``.

    The series is split at its time midpoint; the increment over the second
    half, per unit time, is compared with that over the first half.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.size < 3 or not t[-1] > t[0]:
        return False
    mid = 0.5 * (t[0] + t[-1])
    vm = float(np.interp(mid, t, v))
    early = (vm - v[0]) / (mid - t[0])
    late = (v[-1] - vm) / (t[-1] - mid)
    scale = max(abs(v).max(), 1e-300)
    return bool(late > factor * max(early, 0.0) + 1e-9 * scale / (t[-1] - t[0]))


# ------------------------------------------------------ renormalised residual


def renormalization(rho, choice="min"):
    """``(b(rho), rho B(rho))`` with ``B(1) = 1``.

    ``choice='min'`` uses ``b = min(rho, 1)``; ``choice='zero'`` uses ``b = 0``
    and reduces to the continuity equation scaled by ``B(1)``.
    """
    rho = np.asarray(rho, dtype=float)
    if choice == "zero":
        return np.zeros_like(rho), rho
    if choice != "min":
        raise ValueError(f"unknown renormalisation {choice!r}")
    b = np.minimum(rho, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        low = rho * (1.0 + np.where(rho > 0, np.log(np.where(rho > 0, rho, 1.0)), 0.0))
        high = rho * (2.0 - 1.0 / np.where(rho > 0, rho, 1.0))
    return b, np.where(rho <= 1.0, low, high)


def renormalized_residual(rho0, u0, rho1, u1, dt, test, grid: Grid, choice="min"):
    """Weak residual of ``d_t(rho B) + div(rho B u) + b div u = 0`` against ``test``.

    Spatial terms use the average of the two time levels.
    """
    b0, rB0 = renormalization(rho0, choice)
    b1, rB1 = renormalization(rho1, choice)
    grad = central_gradient(test, grid)

    def spatial(b, rB, u):
        return -np.sum(rB * u * grad, axis=0) + b * central_divergence(u, grid) * test

    body = (rB1 - rB0) / dt * test + 0.5 * (spatial(b0, rB0, u0) + spatial(b1, rB1, u1))
    return grid.integrate(body)


# --------------------------------------------------------- Helmholtz function

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def _gauss(f, a, b, panels=16):
    """Composite Gauss-Legendre of a vectorised ``f`` over ``[a, b]`` (arrays)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    edges = np.linspace(0.0, 1.0, panels + 1)
    total = np.zeros(np.broadcast(a, b).shape)
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        for x, w in zip(_GL_NODES, _GL_WEIGHTS):
            s = lo + half * (x + 1.0)
            total = total + w * half * f(a + s * (b - a)) * (b - a)
    return total


def helmholtz(rho, theta, theta_tilde, eos: cv.EosParams, chi_xi=1.0):
    """``H = rho e_xi - theta_tilde rho s_xi``."""
    st = cv.ThermoState(rho, theta)
    return np.asarray(cv.energy_density(st, eos, chi_xi)) - theta_tilde * np.asarray(
        cv.entropy_density(st, eos, chi_xi))


def helmholtz_relative(rho, theta, rho_bar, theta_tilde, eos: cv.EosParams, chi_xi=1.0):
    """``H(rho, theta) - (rho - rho_bar) d_rho H(rho_bar, theta_tilde) - H(rho_bar, theta_tilde)``.

    Evaluated without cancellation as the sum of two nonnegative integrals:
    ``int_{theta_tilde}^{theta} c_v(rho, t)(1 - theta_tilde/t) dt`` and
    ``int_{rho_bar}^{rho} (rho - r) d_rho p(r, theta_tilde) / r dr``, both in
    logarithmic variables.
    """
    rho, theta = np.broadcast_arrays(np.asarray(rho, dtype=float), np.asarray(theta, dtype=float))
    tt = float(theta_tilde)

    def thermal(s):
        t = tt * np.exp(s)
        cvd = np.asarray(cv.heat_capacity_density(cv.ThermoState(rho, t), eos, chi_xi))
        return cvd * (t - tt)

    part_t = _gauss(thermal, 0.0, np.log(theta / tt))

    pos = rho > 0
    safe = np.where(pos, rho, rho_bar)

    def mech_log(s):
        r = rho_bar * np.exp(s)
        return (safe - r) * np.asarray(cv.pressure_density_derivative(cv.ThermoState(r, np.full_like(r, tt)), eos))

    part_r = _gauss(mech_log, 0.0, np.log(safe / rho_bar))
    if not np.all(pos):
        # rho = 0: the integral collapses to p_M(rho_bar) - p_M(0) at theta_tilde
        st = cv.ThermoState(np.array([float(rho_bar), 0.0]), np.full(2, tt))
        p_bar, p_vac = np.asarray(cv.molecular_pressure(st, eos))
        part_r = np.where(pos, part_r, p_bar - p_vac)
    return part_t + part_r


# ------------------------------------------------------------------ records


@dataclass
class DiagnosticsRecord:
    step: int
    t: float
    dt: float
    mass: float
    momentum: tuple
    kinetic: float
    internal: float
    ballistic: float
    dissipation: float
    work: float
    residual: float
    tolerance: float
    entropy_production: float
    min_entropy_production: float
    penalty_residual: float
    penalty_integral: float
    solid_mass: float
    A1: float
    A2: float
    A3: float
    A4: float
    artificial_energy: float
    fluid_volume: float
    min_rho: float
    min_theta: float
    max_theta: float
    clamped: int
    monitors: dict = field(default_factory=dict)

    def row(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "momentum":
                for k, m in enumerate(v):
                    out[f"momentum_{'xyz'[k]}"] = m
            elif f.name == "monitors":
                out.update(v)
            else:
                out[f.name] = v
        return out


class Recorder:
    """Accumulates one :class:`DiagnosticsRecord` per step."""

    def __init__(self, sim):
        self.sim = sim
        self.records = []
        self.A = [0.0, 0.0, 0.0, 0.0]
        self.penalty_integral = 0.0
        self._B = sim.ballistic()
        self.records.append(self._record(None, float("nan")))

    def _record(self, terms, residual):
        sim = self.sim
        s = sim.setup
        g = sim.grid
        f = sim.fields
        masks = sim.masks
        dt = terms.dt if terms is not None else 0.0
        rates = solid_integral_rates(f, masks, s.penalty, s.eos, s.transport, g)
        for k in range(4):
            self.A[k] += rates[k] * dt
        sigma = entropy_production(f.u, f.theta, masks, sim.visc, sim.cond, s.transport)
        geo = sim.geometry
        V = s.velocity.velocity(sim.t, g.centers)
        slip = np.sum((f.u - V) * geo.normals, axis=0)
        pen_rate = g.integrate(geo.delta_weight * slip**2)
        self.penalty_integral += pen_rate * dt
        E = np.asarray(cv.energy_density(cv.ThermoState(f.rho, f.theta), s.eos, masks.chi_xi))
        monitors = bound_monitors(f, masks, s.penalty, s.eos, g)
        return DiagnosticsRecord(
            step=sim.step_count, t=sim.t, dt=dt,
            mass=g.integrate(f.rho),
            momentum=tuple(g.integrate(f.rho * f.u[k]) for k in range(g.dim)),
            kinetic=kinetic_energy(f, g),
            internal=g.integrate(E),
            ballistic=self._B,
            dissipation=terms.D if terms is not None else 0.0,
            work=terms.W if terms is not None else 0.0,
            residual=residual,
            tolerance=inequality_tolerance(dt, g.dx) if terms is not None else float("nan"),
            entropy_production=g.integrate(sigma),
            min_entropy_production=float(sigma.min()),
            penalty_residual=pen_rate,
            penalty_integral=self.penalty_integral,
            solid_mass=g.integrate(np.where(masks.solid, f.rho, 0.0)),
            A1=self.A[0], A2=self.A[1], A3=self.A[2], A4=self.A[3],
            artificial_energy=g.integrate(pen.artificial_energy(f.rho, s.penalty)),
            fluid_volume=geo.volume,
            min_rho=float(f.rho.min()),
            min_theta=float(f.theta.min()),
            max_theta=float(f.theta.max()),
            clamped=terms.clamped if terms is not None else 0,
            monitors=monitors,
        )

    def __call__(self, sim, terms):
        B1 = sim.ballistic()
        r = inequality_residual(self._B, B1, terms.dt, terms)
        self._B = B1
        rec = self._record(terms, r)
        if rec.min_entropy_production < 0:
            raise AssertionError("negative entropy production")
        self.records.append(rec)

    # -------------------------------------------------------------- output

    def residuals(self):
        return np.array([r.residual for r in self.records[1:]])

    def tolerances(self):
        return np.array([r.tolerance for r in self.records[1:]])

    def growth_flags(self):
        t = [r.t for r in self.records]
        return {k: superlinear_growth(t, [r.monitors[k] for r in self.records]) for k in MONITORS}

    def csv_text(self):
        return records_to_csv(self.records)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def records_to_csv(records):
    """CSV text with a header line; floats are written with full precision."""
    buf = io.StringIO()
    rows = [r.row() for r in records]
    if not rows:
        return ""
    writer = csv.writer(buf, lineterminator="\n")
    cols = list(rows[0])
    writer.writerow(cols)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in cols])
    return buf.getvalue()


def read_csv(path_or_text):
    """Parse a diagnostics CSV into a dict of float columns."""
    text = path_or_text
    if "\n" not in str(path_or_text):
        with open(path_or_text) as fh:
            text = fh.read()
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    cols = {h: [] for h in header}
    for row in reader:
        for h, v in zip(header, row):
            cols[h].append(float(v))
    return {h: np.array(v) for h, v in cols.items()}
