"""Online recombination of offline blocks for one defect realization.

For each element T the patch coefficient is written as ``sum_i mu_i A_i`` over the
offline coefficients, and the PG block of T is approximated by
``sum_i mu_i B_i``.  Weights are kept sparse: ``mu0`` for the defect-free slot,
explicit weights for the defect slots, and one shared weight ``mu_rest`` for all
remaining single-defect slots (zero for the sum-one strategy).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import fem
from .coeff import DefectRealization, Model, PeriodicPattern, defects_in_patch
from .corrector import CoarseForm, scatter_blocks
from .mesh import MeshHierarchy, PatchRef, patch
from .offline import OfflineDatabase, offline_coefficients


class StrategyModelMismatch(ValueError):
    pass


class NotSPD(np.linalg.LinAlgError):
    pass


class DegenerateElement(RuntimeError):
    pass


@dataclass(frozen=True)
class Strategy:
    kind: str = "sum-one"
    s: float = 1.0

    def __post_init__(self):
        if self.kind not in ("sum-one", "alternate"):
            raise ValueError(f"unknown strategy {self.kind!r}")

    @property
    def label(self) -> str:
        return self.kind


SUM_ONE = Strategy()


def alternate(s: float) -> Strategy:
    return Strategy("alternate", float(s))


@dataclass(frozen=True)
class SValue:
    s: float
    provenance: tuple


def compute_s_general(L: float, M: float, alpha: float, beta: float) -> SValue:
    """Sum constraint making the 1D harmonic-mean consistency error vanish as eps -> 0.

    ``L`` and ``M`` are the limits of the harmonic and arithmetic means of the
    cell values.
    """
    if not alpha < beta:
        raise ValueError("need alpha < beta")
    return SValue((beta * L - alpha * M) / (alpha * (beta - alpha)), ("L,M", L, M))


def bernoulli_means(p: float, alpha: float, beta: float) -> tuple[float, float]:
    L = alpha * beta / (beta + p * (alpha - beta))
    M = alpha * (1.0 - p) + beta * p
    return L, M


def compute_s_bernoulli(p: float, alpha: float, beta: float) -> SValue:
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if not 0 < alpha < beta:
        raise ValueError("need 0 < alpha < beta")
    s = 1.0 + p * p * (beta - alpha) / (beta + p * (alpha - beta))
    return SValue(s, ("bernoulli", p, alpha, beta))


@dataclass(frozen=True)
class MuDecomposition:
    n_slots: int
    defect_indices: np.ndarray          # 1-based slot indices
    mu_values: np.ndarray
    mu0: float
    mu_rest: float
    strategy: Strategy

    def dense(self) -> np.ndarray:
        """All N+1 weights, index 0 being the defect-free slot."""
        mu = np.full(self.n_slots + 1, self.mu_rest)
        mu[0] = self.mu0
        mu[self.defect_indices] = self.mu_values
        return mu

    @property
    def total(self) -> float:
        return float(self.mu0 + self.mu_values.sum()
                     + self.mu_rest * (self.n_slots - len(self.defect_indices)))


def decompose(realization: DefectRealization, p: PatchRef, strategy: Strategy,
              pattern: PeriodicPattern) -> MuDecomposition:
    defects = defects_in_patch(realization, p, pattern) + 1
    n = p.n_eps_axis ** p.d
    nd = len(defects)
    if strategy.kind == "sum-one":
        return MuDecomposition(n, defects, np.ones(nd), 1.0 - nd, 0.0, strategy)
    if pattern.model is not Model.CHECKERBOARD:
        raise StrategyModelMismatch("the alternate strategy needs full-cell checkerboard defects")
    a, b, s = pattern.alpha, pattern.beta, strategy.s
    mu_def = (b - a * s) / (b - a)
    mu_rest = (a - a * s) / (b - a)
    mu0 = (s * (b - a) - nd * (b - a * s) - (n - nd) * (a - a * s)) / (b - a)
    return MuDecomposition(n, defects, np.full(nd, mu_def), mu0, mu_rest, strategy)


def _combine(mu: MuDecomposition, blocks: np.ndarray, slot_sum: np.ndarray) -> np.ndarray:
    out = mu.mu0 * blocks[0]
    if mu.mu_rest != 0.0:
        out = out + mu.mu_rest * slot_sum
    for i, w in zip(mu.defect_indices, mu.mu_values):
        out = out + (w - mu.mu_rest) * blocks[i]
    return out


def assemble_olod(db: OfflineDatabase, realization: DefectRealization, mesh: MeshHierarchy,
                  strategy: Strategy = SUM_ONE) -> CoarseForm:
    db.check_mesh(mesh)
    pattern = db.pattern
    patches, blocks = [], []
    for T in range(mesh.n_coarse):
        pT = patch(mesh, T, db.k)
        mu = decompose(realization, pT, strategy, pattern)
        patches.append(pT)
        blocks.append(_combine(mu, db.stiffness, db.stiffness_slot_sum))
    return CoarseForm(scatter_blocks(mesh, patches, blocks), f"OLOD/{strategy.kind}")


def olod_corrector_matrix(db: OfflineDatabase, realization: DefectRealization, mesh: MeshHierarchy,
                          strategy: Strategy = SUM_ONE) -> sp.csr_matrix:
    db.check_mesh(mesh)
    pattern = db.pattern
    rows, cols, vals = [], [], []
    for T in range(mesh.n_coarse):
        pT = patch(mesh, T, db.k)
        mu = decompose(realization, pT, strategy, pattern)
        Q = _combine(mu, db.correctors, db.corrector_slot_sum)
        trial = pT.coarse_nodes[pT.trial_nodes_local]
        for j, z in enumerate(trial):
            nz = np.flatnonzero(Q[j])
            rows.append(pT.fine_nodes[nz])
            cols.append(np.full(len(nz), z))
            vals.append(Q[j][nz])
    Cm = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(mesh.n_fine, mesh.n_coarse)).tocsr()
    Cm.sum_duplicates()
    return Cm


def reconstruct_olod(v: np.ndarray, db: OfflineDatabase, realization: DefectRealization,
                     mesh: MeshHierarchy, strategy: Strategy = SUM_ONE) -> np.ndarray:
    """Multiscale fine function ``P v - C_hat v`` from the stored correctors."""
    v = np.asarray(v, dtype=float)
    Cm = olod_corrector_matrix(db, realization, mesh, strategy)
    return fem.prolong(mesh, v) - Cm @ v


def _mean_free_basis(n: int) -> np.ndarray:
    Q, _ = np.linalg.qr(np.column_stack([np.ones(n), np.eye(n)[:, : n - 1]]))
    return Q[:, 1:]


def energy_gram(values: np.ndarray, mesh: MeshHierarchy) -> np.ndarray:
    """Coarse Gram matrix of the energy norm, ``P^T K_h P``."""
    P = fem.prolongation_matrix(mesh)
    return (P.T @ fem.assemble_stiffness(values, mesh) @ P).toarray()


def consistency_error(mlod, olod, gram: np.ndarray) -> float:
    """eta_k = sup |(a_tilde - a_hat)(v1, v2)| / (||v1||_A ||v2||_A) over coarse v1, v2.

    Both forms annihilate constants, so the supremum is taken over mean-free
    coarse functions, where the energy Gram matrix is SPD.
    """
    Km = mlod.toarray() if hasattr(mlod, "toarray") else np.asarray(mlod)
    Ko = olod.toarray() if hasattr(olod, "toarray") else np.asarray(olod)
    Qb = _mean_free_basis(Km.shape[0])
    G = Qb.T @ gram @ Qb
    try:
        L = np.linalg.cholesky(0.5 * (G + G.T))
    except np.linalg.LinAlgError as exc:
        raise NotSPD("energy Gram matrix is not SPD on mean-free functions") from exc
    D = Qb.T @ (Km - Ko) @ Qb
    X = sla.solve_triangular(L, D, lower=True)
    X = sla.solve_triangular(L, X.T, lower=True).T
    return float(np.linalg.norm(X, 2))


def coercivity_constant(K, values: np.ndarray, mesh: MeshHierarchy) -> float:
    """Smallest eigenvalue of the symmetric part of K relative to the energy Gram, off constants."""
    Kd = K.toarray() if hasattr(K, "toarray") else np.asarray(K)
    Qb = _mean_free_basis(Kd.shape[0])
    G = Qb.T @ energy_gram(values, mesh) @ Qb
    S = Qb.T @ (0.5 * (Kd + Kd.T)) @ Qb
    return float(sla.eigh(S, G, eigvals_only=True)[0])


def error_indicator_ET(db: OfflineDatabase, realization: DefectRealization, T: int,
                       strategy: Strategy = SUM_ONE) -> float:
    """A posteriori consistency indicator E_T of one element.

    With ``f_i = mu_i (A - A_i) / sqrt(A)`` and ``g = (A - Abar)/sqrt(A)`` on the
    patch fine cells, the residual of v is ``g chi_T grad v - sum_i f_i grad C_i v``;
    E_T^2 is its largest L2(U)-norm-squared over ``||v||_{A,T}^2``.
    """
    mesh = db.mesh
    ws = db.ws
    pT = patch(mesh, T, db.k)
    pattern = db.pattern
    mu = decompose(realization, pT, strategy, pattern)
    a = realization_local(pattern, realization, pT, ws)
    w = mu.dense()
    active = np.flatnonzero(w != 0.0)
    coeffs = offline_coeffs_for(db, active)
    abar = sum(w[i] * coeffs[i] for i in active)
    sqa = np.sqrt(a)
    cn = ws.grid.cell_nodes                           # (cells, 2^d)
    nloc = cn.shape[1]
    # per-cell local nodal values of the residual, one column per local basis function of T
    PT = ws.P[:, ws.trial].toarray()                  # (m_f, 2^d)
    R = ((a - abar) / sqa * ws.t_mask)[:, None, None] * PT[cn]
    for i in active:
        f = w[i] * (a - coeffs[i]) / sqa
        if not np.any(f):
            continue
        R = R - f[:, None, None] * db.correctors[i].T[cn]
    Kloc = fem.local_stiffness(mesh.d, mesh.h)
    N = np.einsum("cav,ab,cbw->vw", R, Kloc, R)
    KT = ws.grid.stiffness(a * ws.t_mask)
    D = PT.T @ (KT @ PT)
    Qb = _mean_free_basis(nloc)
    Dq = Qb.T @ D @ Qb
    if np.linalg.matrix_rank(Dq) < nloc - 1:
        raise DegenerateElement(f"element {T} has a degenerate energy Gram matrix")
    val = sla.eigh(Qb.T @ N @ Qb, Dq, eigvals_only=True)[-1]
    return float(np.sqrt(max(val, 0.0)))


def realization_local(pattern: PeriodicPattern, realization: DefectRealization, pT: PatchRef, ws) -> np.ndarray:
    """True coefficient on the local fine cells of patch ``pT``."""
    vals = pattern.values(pT.n_eps_axis, np.asarray(pT.origin) * pT.mesh.eps_per_H,
                          realization.bits[pT.eps_cells])
    out = np.empty(ws.grid.n_cells)
    for s, cells in enumerate(ws.local_cells_of_slots()):
        out[cells] = vals[s]
    return out


def offline_coeffs_for(db: OfflineDatabase, indices) -> dict:
    idx = list(indices)
    return dict(zip(idx, offline_coefficients(db.pattern, db.ws, idx)))
