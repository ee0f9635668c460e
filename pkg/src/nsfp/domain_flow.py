"""Prescribed domain motion.

A velocity field V(t, x), compactly supported in the ball of radius R, moves
the fluid region. Points are carried by the flow map dX/dt = V(t, X); the
level set at time t is the initial signed distance composed with the inverse
map, then reinitialised by fast marching. Arrays of points use the layout
``(dim, ...)`` throughout.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import skfmm
from scipy.interpolate import RegularGridInterpolator

from .errors import ConfigError, InvariantViolation
from .grid import Grid

KINDS = ("static", "rigid_rotation", "pulsation", "tabulated")


# ------------------------------------------------------------------ cutoff


def cutoff(r, R, width):
    """Radial cutoff: 1 for r <= R - width, 0 for r >= R, cosine in between."""
    r = np.asarray(r, dtype=float)
    s = np.clip((r - (R - width)) / width, 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(math.pi * s))


def cutoff_derivative(r, R, width):
    r = np.asarray(r, dtype=float)
    s = (r - (R - width)) / width
    inside = (s > 0) & (s < 1)
    return np.where(inside, -0.5 * math.pi / width * np.sin(math.pi * np.clip(s, 0, 1)), 0.0)


# ----------------------------------------------------------- velocity fields


@dataclass(frozen=True)
class TabulatedField:
    """A steady velocity sampled on a regular grid, read from a text file.

    The file starts with three header lines ``dims n1 n2 [n3]``,
    ``spacing h1 h2 [h3]`` and ``origin o1 o2 [o3]`` followed by one velocity
    vector per line in row-major order.
    """

    dims: tuple
    spacing: tuple
    origin: tuple
    values: np.ndarray = field(compare=False)

    @classmethod
    def read(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"velocity table not found: {path}")
        header = {}
        body = []
        with path.open() as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                key, *rest = line.split()
                if key in ("dims", "spacing", "origin"):
                    header[key] = [float(v) for v in rest]
                    continue
                try:
                    body.append([float(v) for v in line.split()])
                except ValueError as exc:
                    raise ConfigError(f"{path}: bad number", line=lineno) from exc
        missing = {"dims", "spacing", "origin"} - header.keys()
        if missing:
            raise ConfigError(f"{path}: missing header lines {sorted(missing)}")
        dims = tuple(int(n) for n in header["dims"])
        d = len(dims)
        values = np.asarray(body, dtype=float)
        if values.shape != (int(np.prod(dims)), d):
            raise ConfigError(f"{path}: expected {int(np.prod(dims))} rows of {d} components")
        values = values.reshape(*dims, d)
        return cls(dims, tuple(header["spacing"]), tuple(header["origin"]), values)

    def write(self, path):
        d = len(self.dims)
        with open(path, "w") as fh:
            fh.write("dims " + " ".join(str(n) for n in self.dims) + "\n")
            fh.write("spacing " + " ".join(repr(h) for h in self.spacing) + "\n")
            fh.write("origin " + " ".join(repr(o) for o in self.origin) + "\n")
            for row in self.values.reshape(-1, d):
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")

    @property
    def axes(self):
        return tuple(o + h * np.arange(n) for o, h, n in zip(self.origin, self.spacing, self.dims))

    def _interpolators(self):
        d = len(self.dims)
        comps = [RegularGridInterpolator(self.axes, self.values[..., k], bounds_error=False, fill_value=0.0)
                 for k in range(d)]
        div = sum(np.gradient(self.values[..., k], self.spacing[k], axis=k) for k in range(d))
        return comps, RegularGridInterpolator(self.axes, div, bounds_error=False, fill_value=0.0)


@dataclass(frozen=True)
class VelocityFieldSpec:
    """Built-in or tabulated domain velocity.

    ``rigid_rotation`` turns about the origin (the z axis in 3D) at angular
    rate ``rate``; ``pulsation`` is the radial dilation
    ``amplitude * 2 pi f cos(2 pi f t) x``, under which a centred circle of
    radius r0 has radius ``r0 exp(amplitude sin(2 pi f t))``. Every field is
    multiplied by the radial cutoff so that it vanishes for ``|x| >= R``.
    """

    kind: str = "static"
    rate: float = 0.0
    amplitude: float = 0.0
    frequency: float = 0.0
    support_radius: float = 1.0
    cutoff_width: float = 0.2
    table: TabulatedField | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown velocity field kind {self.kind!r}; choose from {KINDS}")
        if not self.support_radius > 0:
            raise ConfigError("support radius must be positive")
        if not 0 < self.cutoff_width <= self.support_radius:
            raise ConfigError("cutoff width must lie in (0, R]")
        if self.kind == "tabulated" and self.table is None:
            raise ConfigError("tabulated velocity field needs a table")
        if self.table is not None:
            object.__setattr__(self, "_interp", self.table._interpolators())

    @property
    def autonomous(self):
        return self.kind in ("static", "rigid_rotation", "tabulated")

    def max_speed(self, t=0.0):
        """Upper bound of |V| over the box at time t."""
        R = self.support_radius
        if self.kind == "rigid_rotation":
            return abs(self.rate) * R
        if self.kind == "pulsation":
            return abs(self._pulse_rate(t)) * R
        if self.kind == "tabulated":
            return float(np.max(np.linalg.norm(self.table.values, axis=-1)))
        return 0.0

    def _pulse_rate(self, t):
        w = 2.0 * math.pi * self.frequency
        return self.amplitude * w * math.cos(w * t)

    def velocity(self, t, x):
        x = np.asarray(x, dtype=float)
        d = x.shape[0]
        r = np.sqrt(np.sum(x**2, axis=0))
        c = cutoff(r, self.support_radius, self.cutoff_width)
        if self.kind == "static":
            return np.zeros_like(x)
        if self.kind == "rigid_rotation":
            if d < 2:
                raise ConfigError("rotation needs at least two dimensions")
            v = np.zeros_like(x)
            v[0] = -self.rate * x[1] * c
            v[1] = self.rate * x[0] * c
            return v
        if self.kind == "pulsation":
            return self._pulse_rate(t) * x * c
        comps, _ = self._interp
        pts = np.moveaxis(x, 0, -1)
        return np.stack([f(pts) for f in comps]) * c

    def divergence(self, t, x):
        """Analytic divergence for built-ins, interpolated table divergence otherwise."""
        x = np.asarray(x, dtype=float)
        d = x.shape[0]
        r = np.sqrt(np.sum(x**2, axis=0))
        R, w = self.support_radius, self.cutoff_width
        if self.kind in ("static", "rigid_rotation"):
            # the cutoff is radial and the rotation tangential: exactly zero
            return np.zeros(x.shape[1:])
        if self.kind == "pulsation":
            return self._pulse_rate(t) * (d * cutoff(r, R, w) + r * cutoff_derivative(r, R, w))
        comps, div = self._interp
        pts = np.moveaxis(x, 0, -1)
        v = np.stack([f(pts) for f in comps])
        grad_c = cutoff_derivative(r, R, w) * np.divide(x, r, out=np.zeros_like(x), where=r > 0)
        return div(pts) * cutoff(r, R, w) + np.sum(v * grad_c, axis=0)


# ---------------------------------------------------------------- flow map


def advance_flow_map(spec: VelocityFieldSpec, t0, t1, seeds, dt_geom=1e-3):
    """Carry points from time ``t0`` to ``t1`` with classical RK4.

    ``t1 < t0`` integrates backwards, which gives the inverse map.
    """
    x = np.array(seeds, dtype=float)
    span = t1 - t0
    if span == 0 or spec.kind == "static":
        return x
    n = max(1, math.ceil(abs(span) / dt_geom - 1e-12))
    h = span / n
    t = t0
    for i in range(n):
        k1 = spec.velocity(t, x)
        k2 = spec.velocity(t + 0.5 * h, x + 0.5 * h * k1)
        k3 = spec.velocity(t + 0.5 * h, x + 0.5 * h * k2)
        k4 = spec.velocity(t + h, x + h * k3)
        x = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t0 + span * (i + 1) / n
    return x


def shoelace_area(points):
    """Area of the closed polygon with vertices ``points[:, i]`` (2D)."""
    x, y = points
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def reinitialize(phi, grid: Grid):
    """Signed distance with the same zero contour, by fast marching."""
    phi = np.asarray(phi, dtype=float)
    if np.all(phi < 0) or np.all(phi > 0):
        return phi
    return np.asarray(skfmm.distance(phi, dx=grid.spacing, order=2))


def rebuild_level_set(spec: VelocityFieldSpec, t, phi0, grid: Grid, dt_geom=1e-2, reinit=True):
    """Level set of the moved domain: ``phi(t, x) = phi0(X^-1(t, x))``.

    ``phi0`` is either a callable on coordinate arrays ``(dim, ...)`` or a grid
    array, which is interpolated linearly. Backward trajectories leaving the box
    are clamped to it; the field vanishes there, so this only matters for
    user-supplied tables. With ``reinit`` the result is redistanced, so every
    rebuild, including the one at ``t = 0``, yields a signed distance.
    """
    x = grid.centers
    if t == 0 or spec.kind == "static":
        foot = x
    else:
        foot = advance_flow_map(spec, t, 0.0, x, dt_geom)
        lo = np.array(grid.lower).reshape((-1,) + (1,) * grid.dim)
        hi = np.array(grid.upper).reshape((-1,) + (1,) * grid.dim)
        outside = np.any((foot < lo) | (foot > hi), axis=0)
        if np.any(outside):
            warnings.warn(f"{int(outside.sum())} backward trajectories left the box and were clamped")
            foot = np.clip(foot, lo, hi)
    if callable(phi0):
        phi = np.asarray(phi0(foot), dtype=float)
    else:
        interp = RegularGridInterpolator(grid.axes, np.asarray(phi0, dtype=float),
                                         bounds_error=False, fill_value=None)
        phi = interp(np.moveaxis(foot, 0, -1))
    return reinitialize(phi, grid) if reinit else phi


# ------------------------------------------------------- interface geometry


def smoothed_delta(phi, eps):
    """Cosine-smoothed Dirac delta of half-width ``eps``."""
    inside = np.abs(phi) < eps
    return np.where(inside, (1.0 + np.cos(math.pi * np.clip(phi / eps, -1, 1))) / (2.0 * eps), 0.0)


def smoothed_heaviside(phi, eps):
    """Smoothed step, 0 for phi <= -eps and 1 for phi >= eps; its derivative is
    :func:`smoothed_delta`."""
    s = np.clip(phi / eps, -1.0, 1.0)
    return 0.5 * (1.0 + s + np.sin(math.pi * s) / math.pi)


@dataclass
class InterfaceGeometry:
    normals: np.ndarray
    delta_weight: np.ndarray
    fluid: np.ndarray
    band: np.ndarray

    def perimeter(self, grid: Grid):
        return grid.integrate(self.delta_weight)


def interface_geometry(phi, grid: Grid, band_width=1.5):
    """Unit normals, surface-measure density and fluid indicator.

    ``band_width`` is the delta half-width in cells. The delta weight is the
    derivative of the smoothed step composed with phi, i.e. it carries the
    factor ``|grad phi|``.
    """
    eps = band_width * grid.dx
    grad = np.stack(np.gradient(phi, *grid.spacing, edge_order=2)) if grid.dim > 1 else \
        np.gradient(phi, grid.spacing[0], edge_order=2)[None]
    mag = np.sqrt(np.sum(grad**2, axis=0))
    band = np.abs(phi) < eps
    degenerate = band & (mag < 1e-8)
    if np.any(degenerate):
        warnings.warn(f"{int(degenerate.sum())} band cells with vanishing gradient excluded")
        band = band & ~degenerate
    normals = np.zeros_like(grad)
    normals[:, band] = grad[:, band] / mag[band]
    delta = np.where(band, smoothed_delta(phi, eps) * mag, 0.0)
    return InterfaceGeometry(normals, delta, phi < 0, band)


@dataclass
class DomainGeometry:
    t: float
    phi: np.ndarray
    normals: np.ndarray
    delta_weight: np.ndarray
    fluid: np.ndarray
    band: np.ndarray
    volume: float
    M0: float
    R: float

    @property
    def solid(self):
        return ~self.fluid


def fluid_volume(phi, grid: Grid, band_width=1.5):
    """Volume of ``{phi < 0}`` with a smoothed indicator (second order for distance fields)."""
    return grid.integrate(1.0 - smoothed_heaviside(phi, band_width * grid.dx))


def build_geometry(spec: VelocityFieldSpec, t, phi0, grid: Grid, M0=0.0, band_width=1.5,
                   dt_geom=1e-2, check_floor=True):
    phi = rebuild_level_set(spec, t, phi0, grid, dt_geom)
    geo = interface_geometry(phi, grid, band_width)
    volume = fluid_volume(phi, grid, band_width)
    if check_floor and volume < M0:
        raise InvariantViolation(f"fluid volume {volume:.6g} fell below the floor M0 = {M0:.6g} at t = {t:.6g}")
    return DomainGeometry(t, phi, geo.normals, geo.delta_weight, geo.fluid, geo.band, volume, M0,
                          spec.support_radius)


# -------------------------------------------------------------- validation


@dataclass
class VelocityReport:
    max_div_tube: float
    max_speed_outside: float
    min_volume: float
    volume_floor: float
    support_ok: bool
    warnings: list

    @property
    def volume_ok(self):
        return self.min_volume >= self.volume_floor

    @property
    def passed(self):
        return self.support_ok and self.volume_ok and self.max_speed_outside == 0.0

    def format(self):
        lines = [
            f"max |div V| in tube      {self.max_div_tube:.6e}",
            f"max |V| outside R        {self.max_speed_outside:.6e}",
            f"min fluid volume         {self.min_volume:.6e}  (floor {self.volume_floor:.6e})",
            f"support inside box       {'yes' if self.support_ok else 'NO'}",
        ]
        lines += [f"warning: {w}" for w in self.warnings]
        lines.append("overall: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


def validate_velocity(spec: VelocityFieldSpec, grid: Grid, levelsets, tube_width=None, M0=0.0):
    """Check the field against the domain-motion requirements.

    ``levelsets`` is a sequence of ``(t, phi)`` pairs. Reports the largest
    divergence in a tube of half-width ``tube_width`` (default three cells)
    around each interface, the largest speed outside the support ball and the
    smallest fluid volume. Nothing is raised; violations are report entries.
    """
    tube = 3.0 * grid.dx if tube_width is None else tube_width
    x = grid.centers
    r = np.sqrt(np.sum(x**2, axis=0))
    notes = []
    max_div, max_out, min_vol = 0.0, 0.0, math.inf
    for t, phi in levelsets:
        in_tube = np.abs(phi) <= tube
        if np.any(in_tube):
            max_div = max(max_div, float(np.max(np.abs(spec.divergence(t, x)[in_tube]))))
        outside = r >= spec.support_radius
        if np.any(outside):
            speed = np.sqrt(np.sum(spec.velocity(t, x) ** 2, axis=0))
            max_out = max(max_out, float(np.max(speed[outside])))
        min_vol = min(min_vol, fluid_volume(phi, grid))
    support_ok = spec.support_radius < grid.half_width()
    if max_div > 1e-10:
        notes.append(f"V is not divergence free near the interface (max {max_div:.3e})")
    if not support_ok:
        notes.append(f"support radius {spec.support_radius} is not inside the box half-width {grid.half_width()}")
    if min_vol < M0:
        notes.append(f"fluid volume {min_vol:.6g} below floor {M0:.6g}")
    return VelocityReport(max_div, max_out, min_vol, M0, support_ok, notes)
