"""Uniform cell-centred Cartesian grids and the small stencil helpers shared by
the solver, the Poisson module and the diagnostics."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class Grid:
    shape: tuple
    lower: tuple
    upper: tuple

    def __post_init__(self):
        if len(self.shape) not in (1, 2, 3):
            raise ConfigError(f"dimension must be 1, 2 or 3, got {len(self.shape)}")
        if len(self.lower) != len(self.shape) or len(self.upper) != len(self.shape):
            raise ConfigError("lower/upper must match the grid dimension")
        if any(n < 3 for n in self.shape):
            raise ConfigError("need at least 3 cells per direction")
        if any(not hi > lo for lo, hi in zip(self.lower, self.upper)):
            raise ConfigError("upper must exceed lower on every axis")

    @classmethod
    def box(cls, dim, cells, half_width):
        """The centred box ``[-half_width, half_width]^dim``."""
        return cls((int(cells),) * dim, (-float(half_width),) * dim, (float(half_width),) * dim)

    @property
    def dim(self):
        return len(self.shape)

    @cached_property
    def spacing(self):
        return tuple((hi - lo) / n for lo, hi, n in zip(self.lower, self.upper, self.shape))

    @property
    def dx(self):
        """Smallest spacing, used by CFL limits and band widths."""
        return min(self.spacing)

    @cached_property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def size(self):
        return int(np.prod(self.shape))

    @cached_property
    def axes(self):
        return tuple(lo + (np.arange(n) + 0.5) * h
                     for lo, n, h in zip(self.lower, self.shape, self.spacing))

    @cached_property
    def centers(self):
        """Cell-centre coordinates, shape ``(dim, *shape)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def boundary_ring(self):
        """Boolean mask of cells touching the outer wall."""
        ring = np.zeros(self.shape, dtype=bool)
        for k in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[k] = 0
            ring[tuple(idx)] = True
            idx[k] = -1
            ring[tuple(idx)] = True
        return ring

    def integrate(self, field):
        return float(np.sum(field) * self.cell_volume)

    def mean(self, field):
        return float(np.mean(field))

    def refine(self, factor=2):
        return Grid(tuple(n * factor for n in self.shape), self.lower, self.upper)

    def half_width(self):
        return min((hi - lo) / 2 for lo, hi in zip(self.lower, self.upper))


def shift(field, axis, offset, fill=0.0):
    """``out[i] = field[i + offset]`` along ``axis``, ``fill`` outside the grid."""
    out = np.full_like(field, fill)
    n = field.shape[axis]
    src = [slice(None)] * field.ndim
    dst = [slice(None)] * field.ndim
    if offset > 0:
        src[axis] = slice(offset, n)
        dst[axis] = slice(0, n - offset)
    else:
        src[axis] = slice(0, n + offset)
        dst[axis] = slice(-offset, n)
    out[tuple(dst)] = field[tuple(src)]
    return out


def shift_reflect(field, axis, offset):
    """Shift by one cell with ghost values mirrored from the boundary cell."""
    out = shift(field, axis, offset)
    idx = [slice(None)] * field.ndim
    idx[axis] = -1 if offset > 0 else 0
    out[tuple(idx)] = field[tuple(idx)]
    return out


def face_slices(ndim, axis):
    """Slices selecting the left and right cell of every interior face normal to ``axis``."""
    left = [slice(None)] * ndim
    right = [slice(None)] * ndim
    left[axis] = slice(0, -1)
    right[axis] = slice(1, None)
    return tuple(left), tuple(right)


def central_gradient(field, grid: Grid, reflect=True):
    """Cell-centred central differences; ghost cells mirror the wall value when
    ``reflect`` is set (zero normal derivative), else they are zero."""
    grads = []
    for k, h in enumerate(grid.spacing):
        if reflect:
            plus, minus = shift_reflect(field, k, 1), shift_reflect(field, k, -1)
        else:
            plus, minus = shift(field, k, 1), shift(field, k, -1)
        grads.append((plus - minus) / (2.0 * h))
    return np.stack(grads)


def central_divergence(vec, grid: Grid):
    """Divergence matching :func:`central_gradient` with zero ghosts, so that
    ``sum(u . grad p) = -sum(p div u)`` holds exactly for wall-bounded u."""
    div = np.zeros(vec.shape[1:])
    for k, h in enumerate(grid.spacing):
        div += (shift(vec[k], k, 1) - shift(vec[k], k, -1)) / (2.0 * h)
    return div
