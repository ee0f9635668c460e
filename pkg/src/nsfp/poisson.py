"""Self-gravity: ``-Laplace Psi = 4 pi g (rho - mean rho)`` on the box with zero
normal derivative on the walls and zero mean.

The cell-centred five-point (seven in 3D) Neumann Laplacian is diagonalised by
the type-II discrete cosine transform, which gives a direct solver; a
conjugate-gradient path with a recorded residual history is available for
cross-checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft, sparse
from scipy.sparse import linalg as splinalg

from .errors import DomainError, NumericalError
from .grid import Grid, face_slices, shift_reflect

METHODS = ("dct", "cg")


@dataclass(frozen=True)
class GravityParams:
    g: float = 1.0
    tol: float = 1e-10
    max_iter: int = 2000
    method: str = "dct"

    def __post_init__(self):
        if not self.g > 0:
            raise DomainError(f"gravity constant must be > 0, got {self.g}")
        if not 0 < self.tol <= 1e-4:
            raise DomainError(f"solver tolerance must lie in (0, 1e-4], got {self.tol}")
        if self.max_iter < 1:
            raise DomainError("max_iter must be positive")
        if self.method not in METHODS:
            raise DomainError(f"unknown Poisson method {self.method!r}")


def neumann_laplacian(field, grid: Grid):
    """Cell-centred Laplacian with mirrored ghost cells."""
    out = np.zeros_like(field)
    for k, h in enumerate(grid.spacing):
        out += (shift_reflect(field, k, 1) - 2.0 * field + shift_reflect(field, k, -1)) / h**2
    return out


def laplacian_matrix(grid: Grid):
    """Sparse form of :func:`neumann_laplacian` (row-major cell ordering)."""
    mats = []
    for k, (n, h) in enumerate(zip(grid.shape, grid.spacing)):
        main = -2.0 * np.ones(n)
        main[0] = main[-1] = -1.0
        d1 = sparse.diags([np.ones(n - 1), main, np.ones(n - 1)], [-1, 0, 1]) / h**2
        eyes = [sparse.identity(m) for m in grid.shape]
        eyes[k] = d1
        term = eyes[0]
        for e in eyes[1:]:
            term = sparse.kron(term, e)
        mats.append(term)
    return sparse.csr_matrix(sum(mats))


def _eigenvalues(grid: Grid):
    lam = np.zeros(grid.shape)
    for k, (n, h) in enumerate(zip(grid.shape, grid.spacing)):
        wk = (2.0 - 2.0 * np.cos(math.pi * np.arange(n) / n)) / h**2
        shape = [1] * grid.dim
        shape[k] = n
        lam = lam + wk.reshape(shape)
    return lam


def gravity_source(rho, p: GravityParams):
    rho = np.asarray(rho, dtype=float)
    return 4.0 * math.pi * p.g * (rho - rho.mean())


def relative_residual(Psi, source, grid: Grid):
    r = neumann_laplacian(Psi, grid) + source
    scale = np.linalg.norm(source)
    return float(np.linalg.norm(r) / scale) if scale > 0 else float(np.linalg.norm(r))


def solve_gravity(rho, grid: Grid, p: GravityParams = GravityParams(), history=None):
    """Potential with ``-Laplace Psi = 4 pi g (rho - mean rho)`` and zero mean.

    ``history``, if a list, receives the relative residual after each
    iteration (one entry for the direct solver).
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise DomainError("density must be nonnegative")
    f = gravity_source(rho, p)
    hist = [] if history is None else history
    if not np.any(f):
        hist.append(0.0)
        return np.zeros_like(rho)
    if p.method == "dct":
        fh = fft.dctn(f, type=2, norm="ortho")
        lam = _eigenvalues(grid)
        lam.flat[0] = 1.0
        ph = fh / lam
        ph.flat[0] = 0.0
        Psi = fft.idctn(ph, type=2, norm="ortho")
        hist.append(relative_residual(Psi, f, grid))
    else:
        A = -laplacian_matrix(grid)
        b = f.ravel()

        def record(xk):
            hist.append(float(np.linalg.norm(b - A @ xk) / np.linalg.norm(b)))

        x, info = splinalg.cg(A, b, rtol=p.tol, atol=0.0, maxiter=p.max_iter, callback=record)
        Psi = x.reshape(rho.shape)
        if info != 0:
            raise NumericalError(f"Poisson CG did not converge in {p.max_iter} iterations", hist)
    Psi = Psi - Psi.mean()
    res = relative_residual(Psi, f, grid)
    if res > max(p.tol, 1e-12) * 10:
        raise NumericalError(f"Poisson residual {res:.3e} above tolerance {p.tol:.1e}", hist)
    return Psi


def potential_gradient(Psi, grid: Grid):
    """Central differences; at the walls the ghost mirrors the boundary cell,
    which is the zero-normal-derivative condition."""
    grads = []
    for k, h in enumerate(grid.spacing):
        grads.append((shift_reflect(Psi, k, 1) - shift_reflect(Psi, k, -1)) / (2.0 * h))
    return np.stack(grads)


def face_gradient_energy(Psi, grid: Grid):
    """``sum |grad Psi|^2 dV`` with compact face differences, the quadratic form
    of the discrete Laplacian."""
    total = 0.0
    for k, h in enumerate(grid.spacing):
        left, right = face_slices(grid.dim, k)
        total += float(np.sum(((Psi[right] - Psi[left]) / h) ** 2))
    return total * grid.cell_volume


def energy_identity_residual(Psi, rho, grid: Grid, p: GravityParams):
    """Relative defect of ``sum |grad Psi|^2 = 4 pi g sum (rho - mean) Psi``."""
    lhs = face_gradient_energy(Psi, grid)
    rhs = grid.integrate(gravity_source(rho, p) * Psi)
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)


def lebesgue_norm(field, q, grid: Grid):
    return float((np.sum(np.abs(field) ** q) * grid.cell_volume) ** (1.0 / q))


def sobolev_norm(Psi, grid: Grid):
    """Discrete ``W^{1,2}`` norm."""
    return math.sqrt(grid.integrate(Psi**2) + face_gradient_energy(Psi, grid))


def poisson_bound_ratio(Psi, rho, grid: Grid):
    """``||Psi||_{W^{1,2}} / ||rho||_{L^{6/5}}``; zero for vacuum."""
    den = lebesgue_norm(rho, 1.2, grid)
    return sobolev_norm(Psi, grid) / den if den > 0 else 0.0
