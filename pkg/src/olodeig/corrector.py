"""Element correctors on k-layer patches and the corrected coarse forms.

A corrector for coarse basis function ``phi_j`` of element T is the function q
in the interpolation kernel, supported on the patch, with
``a_U(q, w) = a_T(phi_j, w)`` for all kernel functions w on the patch.  It is
computed from the saddle-point system ``[K C^T; C 0] [q; mu] = [r_j; 0]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .fem import Grid, Variant
from .mesh import MeshHierarchy, PatchRef, grid_points, patch, ravel

_REG = 1e-12


class SingularSystem(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class PatchWorkspace:
    """Coefficient-independent local operators of the reference patch shape."""

    mesh: MeshHierarchy
    k: int
    variant: Variant
    ref: PatchRef
    grid: Grid
    P: sp.csr_matrix = field(repr=False)        # patch coarse nodes -> patch fine nodes
    C: sp.csr_matrix = field(repr=False)        # kernel constraints on free fine nodes
    free: np.ndarray = field(repr=False)        # free local fine nodes
    t_mask: np.ndarray = field(repr=False)      # local fine cells inside the center element
    trial: np.ndarray = field(repr=False)       # local coarse nodes of the center element

    @property
    def m_f(self) -> int:
        return self.grid.n_nodes

    @property
    def m_c(self) -> int:
        return self.P.shape[1]

    @property
    def n_slots(self) -> int:
        return self.ref.n_eps_axis ** self.mesh.d

    def local_cells_of_slots(self) -> np.ndarray:
        """Local fine cells lying in each patch epsilon cell, shape (n_slots, (h_per_eps)^d)."""
        m = self.mesh
        cells = grid_points(self.grid.n, m.d)
        slot = ravel(cells // m.h_per_eps, self.ref.n_eps_axis)
        return np.argsort(slot, kind="stable").reshape(self.n_slots, -1)


@lru_cache(maxsize=32)
def workspace(mesh: MeshHierarchy, k: int, variant: Variant | str = Variant.QUASI) -> PatchWorkspace:
    variant = Variant(variant)
    ref = patch(mesh, 0, k)
    full = ref.is_full_domain
    grid = Grid(ref.n_fine_cells_axis, mesh.d, mesh.h, full)
    P = fem.prolongation(ref.n_elem, mesh.r, mesh.d, full)
    I = fem.interpolation(ref.n_elem, mesh.r, mesh.H, mesh.d, full, variant)
    free = np.flatnonzero(~ref.fine_boundary)
    C = I[:, free].tocsr()
    C.eliminate_zeros()
    C = C[np.diff(C.indptr) > 0]
    loc_cells = grid_points(grid.n, mesh.d)
    t_mask = np.all(loc_cells // mesh.r == np.asarray(ref.local_element), axis=1).astype(float)
    return PatchWorkspace(mesh, k, variant, ref, grid, P, C, free, t_mask, ref.trial_nodes_local)


@dataclass(frozen=True, eq=False)
class ElementCorrectorSet:
    """Correctors of the 2^d coarse basis functions of one element.

    ``vectors`` has shape (2^d, m_f) over the patch fine nodes (local order);
    ``block`` has shape (2^d, m_c): row j holds the Petrov-Galerkin entries
    ``a((chi_T - C_T) phi_j, phi_c)`` for the patch coarse nodes c.
    """

    element: int
    k: int
    patch: PatchRef
    vectors: np.ndarray = field(repr=False)
    block: np.ndarray = field(repr=False)
    factor: object = field(default=None, repr=False)


class _LocalPattern:
    """Fixed sparsity of the local stiffness and saddle matrices of one workspace.

    Matrix values are linear in the cell coefficient, so each solve fills
    preallocated index arrays instead of assembling and converting COO triplets.
    The saddle matrix is stored in a fill-reducing order computed once.
    """

    def __init__(self, ws: "PatchWorkspace"):
        grid = ws.grid
        n, nl = grid.n_nodes, 2 ** grid.d
        rows, cols = grid._coo_index
        key, inv = np.unique(rows.astype(np.int64) * n + cols, return_inverse=True)
        kr, kc = np.divmod(key, n)
        loc = np.tile(fem.local_stiffness(grid.d, grid.h).ravel(), grid.n_cells)
        cell = np.repeat(np.arange(grid.n_cells), nl * nl)
        self.G = sp.csr_matrix((loc, (inv.ravel(), cell)), shape=(len(key), grid.n_cells))
        self.n = n
        self.indices = kc.astype(np.int32)
        self.indptr = np.searchsorted(kr, np.arange(n + 1)).astype(np.int32)
        self.P_trial = ws.P[:, ws.trial].tocsc()

        free = ws.free
        nf, nc = len(free), ws.C.shape[0]
        self.nf, self.N = nf, nf + nc
        pos = np.full(n, -1)
        pos[free] = np.arange(nf)
        self.kf = np.flatnonzero((pos[kr] >= 0) & (pos[kc] >= 0))
        Cc = ws.C.tocoo()
        diag = np.arange(nf, nf + nc)
        r = np.concatenate([pos[kr[self.kf]], nf + Cc.row, Cc.col, diag])
        c = np.concatenate([pos[kc[self.kf]], Cc.col, nf + Cc.row, diag])
        self._const = np.concatenate([Cc.data, Cc.data])
        self._r, self._c = r, c
        self.order = np.arange(self.N)
        self._build_csc()
        probe = self._matrix(self.G @ np.ones(grid.n_cells), 0.0)
        # ordering of a generic coefficient; the pattern does not depend on values
        self.order = spla.splu(probe, permc_spec="MMD_AT_PLUS_A").perm_c
        self._build_csc()

    def _build_csc(self):
        r, c = self.order[self._r], self.order[self._c]
        self._sort = np.lexsort((r, c))
        self.s_indices = r[self._sort].astype(np.int32)
        self.s_indptr = np.searchsorted(c[self._sort], np.arange(self.N + 1)).astype(np.int32)

    def _matrix(self, kdata: np.ndarray, reg: float) -> sp.csc_matrix:
        nd = self.N - self.nf
        data = np.concatenate([kdata[self.kf], self._const, np.full(nd, -reg)])[self._sort]
        return sp.csc_matrix((data, self.s_indices, self.s_indptr), shape=(self.N, self.N))

    def stiffness(self, a: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((self.G @ a, self.indices, self.indptr), shape=(self.n, self.n))


class _OrderedFactor:
    """LU factor of the reordered saddle matrix, solving in the original order."""

    def __init__(self, lu, order):
        self.lu, self.order = lu, order

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        b = np.empty_like(rhs)
        b[self.order] = rhs
        return self.lu.solve(b)[self.order]


def _local_pattern(ws: PatchWorkspace) -> _LocalPattern:
    pat = ws.__dict__.get("_pattern")
    if pat is None:
        pat = ws.__dict__["_pattern"] = _LocalPattern(ws)
    return pat


def solve_local(ws: PatchWorkspace, a_loc: np.ndarray, keep_factor: bool = False):
    """Correctors and PG block for a coefficient given on the local patch fine cells.

    Returns ``(vectors (2^d, m_f), block (2^d, m_c), factor)``.
    """
    a_loc = np.asarray(a_loc, dtype=float)
    pat = _local_pattern(ws)
    K = pat.stiffness(a_loc)
    R = (pat.stiffness(a_loc * ws.t_mask) @ pat.P_trial).toarray()
    kdata = K.data
    nf = pat.nf

    def factor(reg):
        S = pat._matrix(kdata, reg)
        return spla.splu(S, permc_spec="NATURAL", diag_pivot_thresh=0.1,
                         options=dict(SymmetricMode=True))

    try:
        lu = factor(0.0)
    except RuntimeError:
        try:
            lu = factor(_REG * abs(K.diagonal()).max())
        except RuntimeError as exc:
            raise SingularSystem(f"corrector saddle system is singular: {exc}") from exc
    lu = _OrderedFactor(lu, pat.order)
    rhs = np.zeros((pat.N, R.shape[1]))
    rhs[:nf] = R[ws.free]
    sol = lu.solve(rhs)
    if not np.all(np.isfinite(sol)):
        raise SingularSystem("corrector solve produced non-finite values")
    Q = np.zeros((ws.m_f, R.shape[1]))
    Q[ws.free] = sol[:nf]
    block = ((R - K @ Q).T @ ws.P).astype(float)
    return Q.T.copy(), np.asarray(block), (lu if keep_factor else None)


def local_coefficient(values: np.ndarray, p: PatchRef) -> np.ndarray:
    return np.asarray(values)[p.fine_cells]


def solve_element_correctors(values: np.ndarray, mesh: MeshHierarchy, T: int, k: int,
                             variant: Variant | str = Variant.QUASI,
                             keep_factor: bool = False) -> ElementCorrectorSet:
    ws = workspace(mesh, k, Variant(variant))
    p = patch(mesh, T, k)
    Q, block, lu = solve_local(ws, local_coefficient(values, p), keep_factor)
    return ElementCorrectorSet(T, k, p, Q, block, lu)


def compute_correctors(values: np.ndarray, mesh: MeshHierarchy, k: int,
                       variant: Variant | str = Variant.QUASI) -> list[ElementCorrectorSet]:
    """Correctors for every coarse element.

    Patches with bitwise-identical local coefficients share one solve: the
    local problem depends on nothing else.
    """
    ws = workspace(mesh, k, Variant(variant))
    cache: dict[bytes, tuple] = {}
    out = []
    for T in range(mesh.n_coarse):
        p = patch(mesh, T, k)
        a_loc = local_coefficient(values, p)
        key = a_loc.tobytes()
        if key not in cache:
            cache[key] = solve_local(ws, a_loc)[:2]
        Q, block = cache[key]
        out.append(ElementCorrectorSet(T, k, p, Q, block))
    return out


@dataclass(frozen=True, eq=False)
class CoarseForm:
    """Square coarse matrix with ``matrix[test, trial]``, so that ``K u = lambda M u``."""

    matrix: sp.csr_matrix = field(repr=False)
    kind: str
    correctors: list | None = field(default=None, repr=False)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def scatter_blocks(mesh: MeshHierarchy, patches, blocks) -> sp.csr_matrix:
    """Sum element blocks (2^d trial x m_c test) into the global ``[test, trial]`` matrix."""
    rows, cols, vals = [], [], []
    for p, B in zip(patches, blocks):
        trial = p.coarse_nodes[p.trial_nodes_local]
        test = p.coarse_nodes
        rows.append(np.tile(test, len(trial)))
        cols.append(np.repeat(trial, len(test)))
        vals.append(np.asarray(B).ravel())
    n = mesh.n_coarse
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


def assemble_pg_mlod(values: np.ndarray, mesh: MeshHierarchy, k: int,
                     variant: Variant | str = Variant.QUASI,
                     correctors: list[ElementCorrectorSet] | None = None) -> CoarseForm:
    if correctors is None:
        correctors = compute_correctors(values, mesh, k, variant)
    K = scatter_blocks(mesh, [c.patch for c in correctors], [c.block for c in correctors])
    return CoarseForm(K, "PG-MLOD", correctors)


def corrector_matrix(mesh: MeshHierarchy, sets: list[ElementCorrectorSet]) -> sp.csr_matrix:
    """Global fine x coarse matrix whose column z is the corrector of coarse basis function z."""
    rows, cols, vals = [], [], []
    for c in sets:
        trial = c.patch.coarse_nodes[c.patch.trial_nodes_local]
        fine = c.patch.fine_nodes
        for j, z in enumerate(trial):
            nz = np.flatnonzero(c.vectors[j])
            rows.append(fine[nz])
            cols.append(np.full(len(nz), z))
            vals.append(c.vectors[j][nz])
    Cm = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(mesh.n_fine, mesh.n_coarse)).tocsr()
    Cm.sum_duplicates()
    return Cm


def multiscale_basis(mesh: MeshHierarchy, sets: list[ElementCorrectorSet]) -> sp.csr_matrix:
    return (fem.prolongation_matrix(mesh) - corrector_matrix(mesh, sets)).tocsr()


def reconstruct(v: np.ndarray, sets: list[ElementCorrectorSet], mesh: MeshHierarchy) -> np.ndarray:
    """Fine representation ``P v - sum_T sum_j v_j C_{T,j}`` of a coarse vector."""
    return multiscale_basis(mesh, sets) @ np.asarray(v)


def assemble_galerkin_lod(values: np.ndarray, mesh: MeshHierarchy, k: int,
                          variant: Variant | str = Variant.QUASI,
                          correctors: list[ElementCorrectorSet] | None = None) -> CoarseForm:
    if correctors is None:
        correctors = compute_correctors(values, mesh, k, variant)
    B = multiscale_basis(mesh, correctors)
    Kh = fem.assemble_stiffness(values, mesh)
    K = (B.T @ Kh @ B).tocsr()
    K = ((K + K.T) * 0.5).tocsr()
    return CoarseForm(K, "Galerkin-LOD", correctors)


def lod_mass(values: np.ndarray, mesh: MeshHierarchy, k: int,
             variant: Variant | str = Variant.QUASI,
             correctors: list[ElementCorrectorSet] | None = None) -> CoarseForm:
    if correctors is None:
        correctors = compute_correctors(values, mesh, k, variant)
    B = multiscale_basis(mesh, correctors)
    M = (B.T @ fem.assemble_mass(mesh) @ B).tocsr()
    M = ((M + M.T) * 0.5).tocsr()
    return CoarseForm(M, "LOD-mass", correctors)


def kernel_residual(sets: list[ElementCorrectorSet], mesh: MeshHierarchy,
                    variant: Variant | str = Variant.QUASI) -> float:
    """max over T, j of ||I_H C_{T,j}||_inf, evaluated with the global interpolation."""
    I = fem.build_interpolation(mesh, variant)
    worst = 0.0
    for c in sets:
        for q in c.vectors:
            g = np.zeros(mesh.n_fine)
            g[c.patch.fine_nodes] = q
            worst = max(worst, float(np.abs(I @ g).max()))
    return worst


def corrector_decay(values: np.ndarray, mesh: MeshHierarchy, z: int, ks,
                    variant: Variant | str = Variant.QUASI) -> np.ndarray:
    """Energy-norm errors ``||(C_full - C_k) phi_z||_A`` for each k in ``ks``.

    The reference uses the smallest k whose patches cover the torus.
    """
    Kh = fem.assemble_stiffness(values, mesh)
    k_full = (mesh.nH + 1) // 2

    def col(k):
        return corrector_matrix(mesh, compute_correctors(values, mesh, k, variant))[:, [z]].toarray().ravel()

    ref = col(k_full)
    return np.array([fem.energy_norm(ref - col(k), Kh) for k in ks])
