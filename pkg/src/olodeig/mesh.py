"""Periodic Cartesian mesh hierarchy on the unit torus and k-layer patches.

All multi-dimensional index arrays are flattened lexicographically with the
x-coordinate running fastest, i.e. ``idx = ix + n * iy`` in 2D.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np


class MeshError(ValueError):
    pass


class NonNested(MeshError):
    pass


class BadDimension(MeshError):
    pass


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def ravel(coords: np.ndarray, n) -> np.ndarray:
    """Flatten integer coordinates of shape (..., d) on a grid with ``n`` points per axis."""
    coords = np.asarray(coords)
    n = np.broadcast_to(np.asarray(n), (coords.shape[-1],))
    idx = np.zeros(coords.shape[:-1], dtype=np.int64)
    stride = 1
    for a in range(coords.shape[-1]):
        idx = idx + coords[..., a] * stride
        stride *= int(n[a])
    return idx


def unravel(idx, n, d: int) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    n = np.broadcast_to(np.asarray(n), (d,))
    out = np.empty(idx.shape + (d,), dtype=np.int64)
    rem = idx.copy()
    for a in range(d):
        out[..., a] = rem % int(n[a])
        rem = rem // int(n[a])
    return out


def grid_points(n_per_axis: int, d: int) -> np.ndarray:
    """All integer coordinates of an ``n^d`` grid in lexicographic order, shape (n^d, d)."""
    return unravel(np.arange(n_per_axis ** d), n_per_axis, d)


@dataclass(frozen=True)
class MeshHierarchy:
    d: int
    nH: int
    nEps: int
    nh: int

    @property
    def H(self) -> float:
        return 1.0 / self.nH

    @property
    def eps(self) -> float:
        return 1.0 / self.nEps

    @property
    def h(self) -> float:
        return 1.0 / self.nh

    @property
    def r(self) -> int:
        """Fine cells per coarse element per axis."""
        return self.nh // self.nH

    @property
    def eps_per_H(self) -> int:
        return self.nEps // self.nH

    @property
    def h_per_eps(self) -> int:
        return self.nh // self.nEps

    @property
    def n_coarse(self) -> int:
        return self.nH ** self.d

    @property
    def n_fine(self) -> int:
        return self.nh ** self.d

    @property
    def n_eps(self) -> int:
        return self.nEps ** self.d

    def coarse_element_coords(self, T) -> np.ndarray:
        return unravel(T, self.nH, self.d)

    def eps_cell_of_fine_cell(self) -> np.ndarray:
        """Map from every fine cell to the epsilon cell containing it."""
        c = grid_points(self.nh, self.d) // self.h_per_eps
        return ravel(c, self.nEps)

    def coarse_element_of_fine_cell(self) -> np.ndarray:
        c = grid_points(self.nh, self.d) // self.r
        return ravel(c, self.nH)

    def fine_node_coords(self) -> np.ndarray:
        return grid_points(self.nh, self.d) * self.h

    def coarse_node_coords(self) -> np.ndarray:
        return grid_points(self.nH, self.d) * self.H

    def patch(self, T: int, k: int) -> "PatchRef":
        return patch(self, T, k)

    def __str__(self) -> str:
        return f"MeshHierarchy(d={self.d}, H=1/{self.nH}, eps=1/{self.nEps}, h=1/{self.nh})"


def build_hierarchy(d: int, nH: int, nEps: int, nh: int) -> MeshHierarchy:
    if d not in (1, 2):
        raise BadDimension(f"d must be 1 or 2, got {d}")
    for name, n in (("nH", nH), ("nEps", nEps), ("nh", nh)):
        if not isinstance(n, (int, np.integer)) or n < 1:
            raise NonNested(f"{name} must be a positive integer, got {n!r}")
    if nH < 2:
        raise NonNested(f"nH must be >= 2, got {nH}")
    if nEps % nH or nh % nEps:
        raise NonNested(f"need nH | nEps | nh, got nH={nH}, nEps={nEps}, nh={nh}")
    for name, n in (("nH", nH), ("nEps", nEps), ("nh", nh)):
        if not _is_pow2(n):
            raise NonNested(f"{name}={n} is not a power of two")
    return MeshHierarchy(int(d), int(nH), int(nEps), int(nh))


@dataclass(frozen=True, eq=False)
class PatchRef:
    """k-layer patch around coarse element ``element``.

    The patch is stored as a block of ``n_elem`` coarse elements per axis whose
    local element (0, ..., 0) sits at global coarse coordinates ``origin``.  A
    full-domain patch is itself periodic and has no boundary.
    """

    mesh: MeshHierarchy
    element: int
    k: int
    origin: tuple
    n_elem: int
    is_full_domain: bool
    elements: np.ndarray = field(repr=False)

    @property
    def d(self) -> int:
        return self.mesh.d

    @property
    def local_element(self) -> tuple:
        """Local coordinates of the center element inside the patch block."""
        return tuple(int(v) for v in (np.asarray(self.mesh.coarse_element_coords(self.element)) -
                                      np.asarray(self.origin)) % self.mesh.nH)

    @property
    def n_fine_cells_axis(self) -> int:
        return self.n_elem * self.mesh.r

    @property
    def n_fine_nodes_axis(self) -> int:
        return self.n_fine_cells_axis + (0 if self.is_full_domain else 1)

    @property
    def n_coarse_nodes_axis(self) -> int:
        return self.n_elem + (0 if self.is_full_domain else 1)

    @property
    def n_eps_axis(self) -> int:
        return self.n_elem * self.mesh.eps_per_H

    def _global(self, n_local_axis: int, per_elem: int, n_global: int) -> np.ndarray:
        loc = grid_points(n_local_axis, self.d)
        g = (loc + np.asarray(self.origin) * per_elem) % n_global
        return ravel(g, n_global)

    def _boundary(self, n_local_axis: int) -> np.ndarray:
        loc = grid_points(n_local_axis, self.d)
        if self.is_full_domain:
            return np.zeros(len(loc), dtype=bool)
        return np.any((loc == 0) | (loc == n_local_axis - 1), axis=1)

    @cached_property
    def fine_cells(self) -> np.ndarray:
        return self._global(self.n_fine_cells_axis, self.mesh.r, self.mesh.nh)

    @cached_property
    def eps_cells(self) -> np.ndarray:
        return self._global(self.n_eps_axis, self.mesh.eps_per_H, self.mesh.nEps)

    @cached_property
    def fine_nodes(self) -> np.ndarray:
        return self._global(self.n_fine_nodes_axis, self.mesh.r, self.mesh.nh)

    @cached_property
    def coarse_nodes(self) -> np.ndarray:
        return self._global(self.n_coarse_nodes_axis, 1, self.mesh.nH)

    @cached_property
    def fine_boundary(self) -> np.ndarray:
        return self._boundary(self.n_fine_nodes_axis)

    @cached_property
    def coarse_boundary(self) -> np.ndarray:
        return self._boundary(self.n_coarse_nodes_axis)

    @cached_property
    def trial_nodes_local(self) -> np.ndarray:
        """Local coarse-node indices of the 2^d vertices of the center element (x fastest)."""
        corners = grid_points(2, self.d)
        loc = (corners + np.asarray(self.local_element)) % self.n_coarse_nodes_axis
        return ravel(loc, self.n_coarse_nodes_axis)


@lru_cache(maxsize=16384)
def patch(mesh: MeshHierarchy, T: int, k: int) -> PatchRef:
    # cached: PatchRef is immutable and its index arrays are reused across realizations
    if k < 0:
        raise ValueError("k must be >= 0")
    if not 0 <= T < mesh.n_coarse:
        raise IndexError(f"coarse element {T} out of range")
    full = 2 * k + 1 >= mesh.nH
    n_elem = mesh.nH if full else 2 * k + 1
    origin = tuple(int(v) for v in (mesh.coarse_element_coords(T) - k) % mesh.nH)
    loc = grid_points(n_elem, mesh.d)
    elements = ravel((loc + np.asarray(origin)) % mesh.nH, mesh.nH)
    return PatchRef(mesh, int(T), int(k), origin, n_elem, full, elements)


def fine_nodes_of(p: PatchRef):
    """Global fine-node indices of the patch and a mask flagging patch-boundary nodes."""
    return p.fine_nodes, p.fine_boundary


def coarse_nodes_of(p: PatchRef):
    return p.coarse_nodes, p.coarse_boundary


def cells_eps_of(p: PatchRef) -> np.ndarray:
    return p.eps_cells


@dataclass(frozen=True)
class Translation:
    """Periodic shift of the torus by whole coarse elements, as index permutations.

    Each array maps a global index (fine node, fine cell, epsilon cell, coarse
    node/element) to its image under the shift.
    """

    shift: tuple
    fine: np.ndarray
    eps: np.ndarray
    coarse: np.ndarray

    def compose(self, other: "Translation") -> "Translation":
        """Apply ``self`` first, then ``other``."""
        shift = tuple(a + b for a, b in zip(self.shift, other.shift))
        return Translation(shift, other.fine[self.fine], other.eps[self.eps], other.coarse[self.coarse])


def _shift_perm(n: int, d: int, s: np.ndarray) -> np.ndarray:
    return ravel((grid_points(n, d) + s) % n, n)


def translate_patch(mesh: MeshHierarchy, fromT: int, toT: int) -> Translation:
    s = (mesh.coarse_element_coords(toT) - mesh.coarse_element_coords(fromT)) % mesh.nH
    return Translation(
        tuple(int(v) for v in s),
        _shift_perm(mesh.nh, mesh.d, s * mesh.r),
        _shift_perm(mesh.nEps, mesh.d, s * mesh.eps_per_H),
        _shift_perm(mesh.nH, mesh.d, s),
    )
