"""Generalized eigensolvers for the periodic problem, with the constant mode deflated."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class EigenError(RuntimeError):
    pass


class NoConvergence(EigenError):
    def __init__(self, msg, residuals=None):
        super().__init__(msg)
        self.residuals = residuals


class ComplexSpectrum(EigenError):
    pass


class InsufficientPairs(EigenError):
    pass


@dataclass(frozen=True)
class EigenResult:
    lambdas: np.ndarray
    vectors: np.ndarray = field(repr=False)
    residuals: np.ndarray
    trivial_deflated: bool = True
    max_imag: float = 0.0


def _residuals(K, M, lambdas, vectors) -> np.ndarray:
    out = []
    for lam, u in zip(lambdas, vectors.T):
        Mu = M @ u
        out.append(float(np.linalg.norm(K @ u - lam * Mu) / max(abs(lam) * np.linalg.norm(Mu), 1e-300)))
    return np.array(out)


def default_shift(K, M) -> float:
    """Small positive shift: 1e-6 of a Gershgorin bound on the pencil's largest eigenvalue."""
    Kabs = abs(sp.csr_matrix(K)).sum(axis=1).A.ravel()
    Md = sp.csr_matrix(M).diagonal()
    return 1e-6 * float(Kabs.max() / Md.min())


def solve_symmetric(K, M, count: int = 2, tol: float = 1e-9, shift: float | None = None,
                    maxiter: int | None = None) -> EigenResult:
    """Smallest ``count`` non-trivial eigenpairs of ``K u = lambda M u``.

    Shift-invert Lanczos around ``-shift`` with the constant vector projected out
    (M-orthogonally) after every application of ``(K + shift M)^{-1}``.
    """
    K = sp.csc_matrix(K)
    M = sp.csc_matrix(M)
    n = K.shape[0]
    if shift is None:
        shift = default_shift(K, M)
    lu = spla.splu((K + shift * M).tocsc())
    one = np.ones(n)
    M1 = M @ one
    c = float(one @ M1)

    def deflate(x):
        return x - one * (M1 @ x) / c

    def opinv(x):
        y = lu.solve(np.asarray(x, dtype=float).ravel())
        return deflate(y)

    OPinv = spla.LinearOperator((n, n), matvec=opinv, dtype=float)
    v0 = deflate(np.cos(np.arange(n) * (2.0 * np.pi / n)) + np.linspace(0.0, 1.0, n))
    try:
        vals, vecs = spla.eigsh(K, k=count, M=M, sigma=-shift, which="LM", OPinv=OPinv,
                                v0=v0, tol=tol * 1e-3, maxiter=maxiter)
    except spla.ArpackNoConvergence as exc:
        raise NoConvergence(f"ARPACK did not converge: {exc}",
                            _residuals(K, M, exc.eigenvalues, exc.eigenvectors)) from exc
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    for j in range(vecs.shape[1]):
        vecs[:, j] = deflate(vecs[:, j])
        vecs[:, j] /= np.sqrt(vecs[:, j] @ (M @ vecs[:, j]))
    res = _residuals(K, M, vals, vecs)
    if np.any(res > tol):
        raise NoConvergence(f"residuals {res} exceed tolerance {tol}", res)
    return EigenResult(vals, vecs, res, True)


def _dense_eig(K, M):
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return sla.eig(K, M)
    A = sla.solve_triangular(L, sla.solve_triangular(L, K, lower=True).T, lower=True).T
    w, W = sla.eig(A)
    return w, sla.solve_triangular(L.T, W, lower=False)


def solve_pg(K, M, count: int = 2, imag_tol: float = 1e-8, tol: float = 1e-9) -> EigenResult:
    """Smallest-magnitude non-trivial eigenpairs of a (mildly) nonsymmetric coarse pencil.

    The SPD mass is factored and the pencil reduced to a standard dense
    problem (QZ if the factorization fails). The trivial eigenvalue
    (constant mode) is the one of smallest modulus and is dropped.
    """
    Kd = K.toarray() if sp.issparse(K) else np.asarray(K, dtype=float)
    Md = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
    n = Kd.shape[0]
    if count + 1 > n:
        raise InsufficientPairs(f"coarse dimension {n} too small for {count} non-trivial pairs")
    w, V = _dense_eig(Kd, Md)
    order = np.argsort(np.abs(w))
    trivial = order[0]
    v0 = V[:, trivial]
    align = abs(np.sum(v0)) / (np.sqrt(n) * np.linalg.norm(v0))
    if align < 1.0 - 1e-6:
        raise EigenError(f"smallest eigenvalue {w[trivial]} does not belong to the constant mode")
    rest = order[1:]
    rest = rest[np.argsort(w[rest].real, kind="stable")][:count]
    lam = w[rest]
    imag = np.abs(lam.imag)
    rel_imag = float(np.max(imag / np.abs(lam.real)))
    if rel_imag > imag_tol:
        raise ComplexSpectrum(f"eigenvalues {lam} have relative imaginary part {rel_imag:.3e}")
    # certify the (possibly complex) pairs themselves, then report real parts
    res = _residuals(Kd, Md, lam, V[:, rest])
    vecs = V[:, rest].real
    for j in range(vecs.shape[1]):
        vecs[:, j] /= np.sqrt(vecs[:, j] @ Md @ vecs[:, j])
    if np.any(res > tol):
        raise NoConvergence(f"residuals {res} exceed tolerance {tol}", res)
    return EigenResult(lam.real.copy(), vecs, res, True, rel_imag)


def lowest_nontrivial_average(result: EigenResult) -> float:
    if len(result.lambdas) < 2:
        raise InsufficientPairs("need at least two non-trivial eigenvalues")
    return float(0.5 * (result.lambdas[0] + result.lambdas[1]))
