"""Sparse discrete operators on the cell-centred grid.

The viscous operator is assembled from its dissipation: on every interior face
the velocity gradient is formed with a compact difference across the face and
averaged central differences along it, and the dissipation density
``2 mu |dev G|^2 + ((2/d - 2/3) mu + eta) (tr G)^2`` is a weighted sum of
squares of linear forms. The force is minus the gradient of that quadratic
form, so the kinetic energy it removes equals the heat it deposits to
rounding, and the heating is nonnegative cell by cell.

Velocities are flattened component-major: entry ``c * ncells + cell``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .grid import Grid, face_slices


def _cell_index(grid: Grid):
    return np.arange(grid.size).reshape(grid.shape)


def face_difference_matrices(grid: Grid):
    """For each axis, the matrix mapping cell values to ``right - left`` on the
    interior faces normal to that axis."""
    idx = _cell_index(grid)
    mats = []
    for k in range(grid.dim):
        left, right = face_slices(grid.dim, k)
        il, ir = idx[left].ravel(), idx[right].ravel()
        nf = il.size
        rows = np.concatenate([np.arange(nf), np.arange(nf)])
        cols = np.concatenate([ir, il])
        vals = np.concatenate([np.ones(nf), -np.ones(nf)])
        mats.append(sparse.csr_matrix((vals, (rows, cols)), shape=(nf, grid.size)))
    return mats


def face_average_matrices(grid: Grid):
    idx = _cell_index(grid)
    mats = []
    for k in range(grid.dim):
        left, right = face_slices(grid.dim, k)
        il, ir = idx[left].ravel(), idx[right].ravel()
        nf = il.size
        rows = np.concatenate([np.arange(nf), np.arange(nf)])
        mats.append(sparse.csr_matrix((np.full(2 * nf, 0.5), (rows, np.concatenate([il, ir]))),
                                      shape=(nf, grid.size)))
    return mats


def _central_matrix(grid: Grid, axis):
    """Cell-centred central difference along ``axis`` with zero ghost values."""
    n = grid.shape[axis]
    h = grid.spacing[axis]
    d1 = sparse.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1]) / (2.0 * h)
    eyes = [sparse.identity(m, format="csr") for m in grid.shape]
    eyes[axis] = d1
    out = eyes[0]
    for e in eyes[1:]:
        out = sparse.kron(out, e)
    return sparse.csr_matrix(out)


@dataclass
class _FaceGradients:
    # grad[i][j] maps one velocity component (cells) to d_j of that component on faces
    grad: list
    average: sparse.csr_matrix
    left: np.ndarray
    right: np.ndarray


class ViscousOperator:
    """Quadratic-form viscous operator on a fixed grid."""

    def __init__(self, grid: Grid):
        self.grid = grid
        d = grid.dim
        self.ncell = grid.size
        diffs = face_difference_matrices(grid)
        avgs = face_average_matrices(grid)
        centrals = [_central_matrix(grid, j) for j in range(d)]
        idx = _cell_index(grid)
        self.faces = []
        for k in range(d):
            left, right = face_slices(d, k)
            grads = []
            for j in range(d):
                if j == k:
                    grads.append(diffs[k] / grid.spacing[k])
                else:
                    grads.append(sparse.csr_matrix(avgs[k] @ centrals[j]))
            self.faces.append(_FaceGradients(grads, avgs[k], idx[left].ravel(), idx[right].ravel()))
        self._forms = [self._linear_forms(fg) for fg in self.faces]

    def _linear_forms(self, fg: _FaceGradients):
        """Linear forms on the stacked velocity, grouped by weight type."""
        d = self.grid.dim
        n = self.ncell

        def entry(i, j):
            # G_ij = d_j u_i as a row block acting on the full velocity vector
            blocks = [None] * d
            nf = fg.grad[0].shape[0]
            for c in range(d):
                blocks[c] = fg.grad[j] if c == i else sparse.csr_matrix((nf, n))
            return sparse.hstack(blocks, format="csr")

        G = [[entry(i, j) for j in range(d)] for i in range(d)]
        trace = sum(G[i][i] for i in range(d))
        sym = [0.5 * (G[i][j] + G[j][i]) for i in range(d) for j in range(i + 1, d)]
        dev = [G[i][i] - trace / d for i in range(d)]
        return {"sym": [sparse.csr_matrix(m) for m in sym],
                "dev": [sparse.csr_matrix(m) for m in dev],
                "trace": sparse.csr_matrix(trace)}

    def face_weights(self, mu, eta):
        """Per-orientation face values of ``(mu, eta)`` by arithmetic averaging."""
        out = []
        for fg in self.faces:
            out.append((fg.average @ mu.ravel(), fg.average @ eta.ravel()))
        return out

    def _weighted_forms(self, mu, eta):
        """Per face orientation: the face-gradient bundle and its ``(form, weight)`` list."""
        d = self.grid.dim
        for fg, (mu_f, eta_f), forms in zip(self.faces, self.face_weights(mu, eta), self._forms):
            pairs = [(m, 4.0 * mu_f) for m in forms["sym"]]
            pairs += [(m, 2.0 * mu_f) for m in forms["dev"]]
            pairs.append((forms["trace"], (2.0 / d - 2.0 / 3.0) * mu_f + eta_f))
            yield fg, pairs

    def stiffness(self, mu, eta):
        """Symmetric positive semidefinite ``K`` with ``u.K u = sum Q dV``."""
        scale = self.grid.cell_volume / self.grid.dim
        K = sparse.csr_matrix((self.grid.dim * self.ncell,) * 2)
        for _, pairs in self._weighted_forms(mu, eta):
            for m, w in pairs:
                K = K + m.T @ sparse.diags(w * scale) @ m
        return sparse.csr_matrix(K)

    def heating(self, u, mu, eta):
        """Dissipation ``S:grad u`` per unit volume, cellwise, as a sum of squares.

        Each face's dissipation is split evenly between its two cells, so the
        cell sum equals ``u.K u / dV``.
        """
        d = self.grid.dim
        flat = u.reshape(d * self.ncell)
        q = np.zeros(self.ncell)
        for fg, pairs in self._weighted_forms(mu, eta):
            per_face = sum(w * (m @ flat) ** 2 for m, w in pairs)
            np.add.at(q, fg.left, 0.5 * per_face / d)
            np.add.at(q, fg.right, 0.5 * per_face / d)
        return q.reshape(self.grid.shape)

    def force(self, u, mu, eta):
        """Viscous force density ``div S`` consistent with :meth:`stiffness`."""
        d = self.grid.dim
        K = self.stiffness(mu, eta)
        return -(K @ u.reshape(d * self.ncell)).reshape(u.shape) / self.grid.cell_volume


def stress_tensor(u, mu, eta, grid: Grid):
    """Cell-centred ``S = mu (G + G^T - 2/3 tr G I) + eta tr G I`` from central
    differences with zero ghosts (wall velocity)."""
    d = grid.dim
    G = np.empty((d, d) + grid.shape)
    for i in range(d):
        for j in range(d):
            G[i, j] = (_central_matrix(grid, j) @ u[i].ravel()).reshape(grid.shape)
    tr = sum(G[i, i] for i in range(d))
    S = mu * (G + np.swapaxes(G, 0, 1))
    for i in range(d):
        S[i, i] += (eta - 2.0 / 3.0 * mu) * tr
    return S


# -------------------------------------------------------------- conduction


class ConductionOperator:
    """``div(kappa grad theta)`` with harmonic-mean face conductivities and no
    flux through the outer walls."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.diffs = face_difference_matrices(grid)
        idx = _cell_index(grid)
        self.pairs = []
        for k in range(grid.dim):
            left, right = face_slices(grid.dim, k)
            self.pairs.append((idx[left].ravel(), idx[right].ravel()))

    def face_conductivity(self, kappa):
        flat = kappa.ravel()
        out = []
        for il, ir in self.pairs:
            a, b = flat[il], flat[ir]
            out.append(np.where(a + b > 0, 2.0 * a * b / np.where(a + b > 0, a + b, 1.0), 0.0))
        return out

    def matrix(self, kappa_faces):
        """Sparse ``L`` with ``(L theta)_i = div(kappa grad theta)_i``."""
        L = None
        for D, kf, h in zip(self.diffs, kappa_faces, self.grid.spacing):
            term = -(D.T @ sparse.diags(kf / h**2) @ D)
            L = term if L is None else L + term
        return sparse.csr_matrix(L)

    def face_terms(self, theta, kappa_faces, theta_tilde):
        """Face-consistent dissipation and cross terms per unit volume, summed.

        Returns ``(sum kappa_f avg(theta_tilde) (dtheta)^2 / (h^2 theta_L theta_R),
        sum kappa_f avg(theta) dtheta dtheta_tilde / (h^2 theta_L theta_R))``;
        the first is the conductive dissipation, the second the work against
        a nonuniform ``theta_tilde``.
        """
        th = theta.ravel()
        tt = theta_tilde.ravel()
        diss = 0.0
        cross = 0.0
        for (il, ir), kf, h in zip(self.pairs, kappa_faces, self.grid.spacing):
            dth = th[ir] - th[il]
            dtt = tt[ir] - tt[il]
            den = th[il] * th[ir] * h**2
            diss += float(np.sum(kf * 0.5 * (tt[il] + tt[ir]) * dth**2 / den))
            cross += float(np.sum(kf * 0.5 * (th[il] + th[ir]) * dth * dtt / den))
        return diss, cross

    def cell_dissipation(self, theta, kappa_faces):
        """``kappa |grad theta|^2 / theta^2`` per cell, faces split evenly."""
        th = theta.ravel()
        out = np.zeros(th.size)
        d = self.grid.dim
        for (il, ir), kf, h in zip(self.pairs, kappa_faces, self.grid.spacing):
            val = kf * (th[ir] - th[il]) ** 2 / (th[il] * th[ir] * h**2)
            np.add.at(out, il, 0.5 * val)
            np.add.at(out, ir, 0.5 * val)
        return out.reshape(theta.shape)


# ------------------------------------------------------------------ upwind


def face_velocities(u, grid: Grid):
    """Normal velocity on interior faces, arithmetic mean of the two cells."""
    out = []
    for k in range(grid.dim):
        left, right = face_slices(grid.dim, k)
        out.append(0.5 * (u[k][left] + u[k][right]))
    return out


def upwind_divergence(q, uf, grid: Grid):
    """``div(q u)`` with donor-cell face values; outer walls carry no flux.

    ``q`` may carry leading component axes; the flux is applied to each.
    """
    out = np.zeros_like(q)
    nd = grid.dim
    for k, (vel, h) in enumerate(zip(uf, grid.spacing)):
        left, right = face_slices(nd, k)
        L = (Ellipsis,) + left
        R = (Ellipsis,) + right
        flux = np.where(vel >= 0, vel * q[L], vel * q[R])
        out[L] += flux / h
        out[R] -= flux / h
    return out


def outflow_fraction(uf, grid: Grid, dt):
    """Fraction of each cell's content leaving it in one step of donor-cell transport."""
    out = np.zeros(grid.shape)
    for k, (vel, h) in enumerate(zip(uf, grid.spacing)):
        left, right = face_slices(grid.dim, k)
        out[left] += np.maximum(vel, 0.0) * dt / h
        out[right] += np.maximum(-vel, 0.0) * dt / h
    return out
