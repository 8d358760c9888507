"""Q1 finite elements on Cartesian grids (periodic or not), interpolation and norms.

Sparse operators are plain ``scipy.sparse`` CSR matrices.  Assembly builds COO
triplets in canonical cell order, so results are bitwise reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .coeff import DimensionError
from .mesh import MeshHierarchy, grid_points, ravel


class Variant(str, Enum):
    QUASI = "quasi"
    NODAL1D = "nodal1d"


def _k1(h: float) -> np.ndarray:
    return np.array([[1.0, -1.0], [-1.0, 1.0]]) / h


def _m1(h: float) -> np.ndarray:
    return np.array([[2.0, 1.0], [1.0, 2.0]]) * (h / 6.0)


def local_stiffness(d: int, h: float) -> np.ndarray:
    """Q1 element stiffness for unit coefficient on a cube of side ``h`` (local nodes x fastest)."""
    if d == 1:
        return _k1(h)
    return np.kron(_m1(h), _k1(h)) + np.kron(_k1(h), _m1(h))


def local_mass(d: int, h: float) -> np.ndarray:
    if d == 1:
        return _m1(h)
    return np.kron(_m1(h), _m1(h))


@dataclass(frozen=True)
class Grid:
    """Uniform Cartesian grid with ``n`` cells of size ``h`` per axis."""

    n: int
    d: int
    h: float
    periodic: bool

    @property
    def nodes_axis(self) -> int:
        return self.n if self.periodic else self.n + 1

    @property
    def n_nodes(self) -> int:
        return self.nodes_axis ** self.d

    @property
    def n_cells(self) -> int:
        return self.n ** self.d

    @cached_property
    def cell_nodes(self) -> np.ndarray:
        cells = grid_points(self.n, self.d)
        corners = grid_points(2, self.d)
        c = cells[:, None, :] + corners[None, :, :]
        if self.periodic:
            c = c % self.n
        return ravel(c, self.nodes_axis)

    @cached_property
    def _coo_index(self):
        cn = self.cell_nodes
        nl = cn.shape[1]
        rows = np.repeat(cn, nl, axis=1).ravel()
        cols = np.tile(cn, (1, nl)).ravel()
        return rows, cols

    def assemble(self, local: np.ndarray, cell_values=None) -> sp.csr_matrix:
        rows, cols = self._coo_index
        if cell_values is None:
            data = np.tile(local.ravel(), self.n_cells)
        else:
            data = (np.asarray(cell_values, dtype=float)[:, None] * local.ravel()[None, :]).ravel()
        A = sp.coo_matrix((data, (rows, cols)), shape=(self.n_nodes, self.n_nodes)).tocsr()
        A.sum_duplicates()
        return A

    def stiffness(self, cell_values=None) -> sp.csr_matrix:
        return self.assemble(local_stiffness(self.d, self.h), cell_values)

    def mass(self) -> sp.csr_matrix:
        return self.assemble(local_mass(self.d, self.h))


def _kron_d(m1d: sp.spmatrix, d: int) -> sp.csr_matrix:
    return sp.csr_matrix(m1d) if d == 1 else sp.kron(m1d, m1d, format="csr")


def prolongation_1d(n: int, r: int, periodic: bool) -> sp.csr_matrix:
    """Exact Q1 embedding from ``n`` coarse cells to ``n*r`` fine cells on one axis."""
    nf = n * r if periodic else n * r + 1
    nc = n if periodic else n + 1
    i = np.arange(nf)
    j = i // r
    t = (i % r) / r
    rows = np.concatenate([i, i[t > 0]])
    cols = np.concatenate([j % nc, (j[t > 0] + 1) % nc])
    vals = np.concatenate([1.0 - t, t[t > 0]])
    return sp.coo_matrix((vals, (rows, cols)), shape=(nf, nc)).tocsr()


def prolongation(n: int, r: int, d: int, periodic: bool) -> sp.csr_matrix:
    return _kron_d(prolongation_1d(n, r, periodic), d)


def element_projection_1d(r: int, H: float) -> np.ndarray:
    """Local L2 projection onto P1 of one coarse cell, acting on its r+1 fine nodal values."""
    h = H / r
    Mh = np.zeros((r + 1, r + 1))
    for c in range(r):
        Mh[c:c + 2, c:c + 2] += _m1(h)
    t = np.arange(r + 1) / r
    Ploc = np.column_stack([1.0 - t, t])
    B = Ploc.T @ Mh
    return np.linalg.solve(Ploc.T @ Mh @ Ploc, B)


def interpolation_1d(n: int, r: int, H: float, periodic: bool, variant: Variant = Variant.QUASI,
                     card: int = 2) -> sp.csr_matrix:
    """1D quasi-interpolation ``E_H o Pi_H`` (or nodal interpolation) on ``n`` coarse cells.

    ``card`` is the number of coarse cells sharing a vertex in the *global*
    mesh; on a non-periodic patch grid the boundary vertices still use it.
    """
    nc = n if periodic else n + 1
    nf = n * r if periodic else n * r + 1
    variant = Variant(variant)
    if variant is Variant.NODAL1D:
        z = np.arange(nc)
        return sp.coo_matrix((np.ones(nc), (z, z * r)), shape=(nc, nf)).tocsr()
    Pi = element_projection_1d(r, H)
    rows, cols, vals = [], [], []
    fine_local = np.arange(r + 1)
    for e in range(n):
        fnodes = (e * r + fine_local) % nf
        for a in range(2):
            rows.append(np.full(r + 1, (e + a) % nc))
            cols.append(fnodes)
            vals.append(Pi[a] / card)
    I = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(nc, nf)).tocsr()
    I.sum_duplicates()
    return I


def interpolation(n: int, r: int, H: float, d: int, periodic: bool,
                  variant: Variant = Variant.QUASI) -> sp.csr_matrix:
    variant = Variant(variant)
    if variant is Variant.NODAL1D and d != 1:
        raise DimensionError("nodal interpolation variant is only available for d = 1")
    return _kron_d(interpolation_1d(n, r, H, periodic, variant), d)


# Global operators on a mesh hierarchy.

def fine_grid(mesh: MeshHierarchy) -> Grid:
    return Grid(mesh.nh, mesh.d, mesh.h, True)


def coarse_grid(mesh: MeshHierarchy) -> Grid:
    return Grid(mesh.nH, mesh.d, mesh.H, True)


def assemble_stiffness(values, mesh: MeshHierarchy, level: str = "fine") -> sp.csr_matrix:
    """Stiffness matrix for a coefficient that is constant per cell of ``level``."""
    grid = fine_grid(mesh) if level == "fine" else coarse_grid(mesh)
    if np.isscalar(values):
        values = np.full(grid.n_cells, float(values))
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.n_cells,):
        raise ValueError(f"expected {grid.n_cells} cell values, got {values.shape}")
    return grid.stiffness(values)


def assemble_mass(mesh: MeshHierarchy, level: str = "fine") -> sp.csr_matrix:
    grid = fine_grid(mesh) if level == "fine" else coarse_grid(mesh)
    return grid.mass()


def prolongation_matrix(mesh: MeshHierarchy) -> sp.csr_matrix:
    return prolongation(mesh.nH, mesh.r, mesh.d, True)


def build_interpolation(mesh: MeshHierarchy, variant: Variant | str = Variant.QUASI) -> sp.csr_matrix:
    return interpolation(mesh.nH, mesh.r, mesh.H, mesh.d, True, Variant(variant))


def prolong(mesh: MeshHierarchy, v: np.ndarray) -> np.ndarray:
    return prolongation_matrix(mesh) @ np.asarray(v)


def energy_norm(v: np.ndarray, K: sp.spmatrix) -> float:
    """sqrt(v^T K v) for a stiffness matrix ``K``; tiny negative roundoff is clipped."""
    return float(np.sqrt(max(float(v @ (K @ v)), 0.0)))


def l2_norm(v: np.ndarray, M: sp.spmatrix) -> float:
    return float(np.sqrt(max(float(v @ (M @ v)), 0.0)))
