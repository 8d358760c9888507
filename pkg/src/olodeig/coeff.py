"""Two-phase periodic coefficients with Bernoulli defects on epsilon cells."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .mesh import MeshHierarchy, PatchRef, grid_points


class DimensionError(ValueError):
    pass


class Model(str, Enum):
    CHECKERBOARD = "checkerboard"
    ERASURE = "erasure"


@dataclass(frozen=True)
class PeriodicPattern:
    """Background and defect values per epsilon cell of one period.

    ``period`` is the size (in epsilon cells per axis) of the repeating block.
    Arrays are indexed lexicographically over ``period**d`` cells.  The
    inclusion B is ``perturbed - background``; defect cells take the stored
    ``perturbed`` value so that fields hit alpha and beta exactly.
    """

    alpha: float
    beta: float
    model: Model
    d: int
    period: int
    background: np.ndarray = field(repr=False)
    perturbed: np.ndarray = field(repr=False)

    @property
    def inclusion(self) -> np.ndarray:
        return self.perturbed - self.background

    def _index(self, n_axis: int, offset) -> np.ndarray:
        c = (grid_points(n_axis, self.d) + np.asarray(offset)) % self.period
        return c[:, 0] if self.d == 1 else c[:, 0] + self.period * c[:, 1]

    def tile(self, n_axis: int, offset=0) -> tuple[np.ndarray, np.ndarray]:
        """(background, inclusion) for an ``n_axis^d`` block of epsilon cells starting at ``offset``."""
        idx = self._index(n_axis, offset)
        return self.background[idx], self.inclusion[idx]

    def values(self, n_axis: int, offset, bits) -> np.ndarray:
        """Coefficient on an ``n_axis^d`` block of epsilon cells with the given defect flags."""
        idx = self._index(n_axis, offset)
        return np.where(np.asarray(bits, dtype=bool), self.perturbed[idx], self.background[idx])

    @property
    def active(self) -> np.ndarray:
        """Mask over one period: True where a defect changes the value."""
        return self.perturbed != self.background


def checkerboard(d: int, alpha: float = 0.1, beta: float = 1.0) -> PeriodicPattern:
    if not 0 < alpha < beta:
        raise ValueError("need 0 < alpha < beta")
    return PeriodicPattern(alpha, beta, Model.CHECKERBOARD, d, 1,
                           np.array([float(alpha)]), np.array([float(beta)]))


def erasure(d: int, alpha: float = 0.1, beta: float = 1.0, period: int = 2) -> PeriodicPattern:
    """Inclusions of value ``beta`` at the first cell of every ``period^d`` block of epsilon cells.

    A defect erases the inclusion, setting the cell back to ``alpha``.
    """
    if not 0 < alpha < beta:
        raise ValueError("need 0 < alpha < beta")
    if period < 1:
        raise ValueError("period must be >= 1")
    n = period ** d
    bg = np.full(n, float(alpha))
    bg[0] = beta
    return PeriodicPattern(alpha, beta, Model.ERASURE, d, period, bg, np.full(n, float(alpha)))


def make_pattern(model: str | Model, d: int, alpha: float = 0.1, beta: float = 1.0, **kw) -> PeriodicPattern:
    model = Model(model)
    if model is Model.CHECKERBOARD:
        return checkerboard(d, alpha, beta)
    return erasure(d, alpha, beta, **kw)


def check_compatible(pattern: PeriodicPattern, mesh: MeshHierarchy) -> None:
    if pattern.d != mesh.d:
        raise DimensionError(f"pattern is {pattern.d}D but mesh is {mesh.d}D")
    if mesh.eps_per_H % pattern.period:
        raise ValueError(f"pattern period {pattern.period} must divide H/eps = {mesh.eps_per_H}")


@dataclass(frozen=True)
class DefectRealization:
    bits: np.ndarray = field(repr=False)
    p: float
    seed: int
    sample_index: int

    @property
    def n_defects(self) -> int:
        return int(self.bits.sum())


def uniforms(n: int, seed: int, sample_index: int) -> np.ndarray:
    """Counter-based uniforms: value ``i`` depends only on (seed, sample_index, i)."""
    bitgen = np.random.Philox(key=np.uint64(seed % 2**64), counter=[0, 0, 0, int(sample_index) % 2**64])
    return np.random.Generator(bitgen).random(n)


def sample_realization(mesh: MeshHierarchy, p: float, seed: int, sample_index: int) -> DefectRealization:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"defect probability must lie in [0, 1], got {p}")
    bits = (uniforms(mesh.n_eps, seed, sample_index) < p).astype(np.uint8)
    return DefectRealization(bits, float(p), int(seed), int(sample_index))


def realization_from_bits(bits, p: float = float("nan"), seed: int = -1, sample_index: int = -1) -> DefectRealization:
    return DefectRealization(np.asarray(bits, dtype=np.uint8), p, seed, sample_index)


@dataclass(frozen=True)
class CoefficientField:
    values: np.ndarray = field(repr=False)
    mesh: MeshHierarchy
    pattern: PeriodicPattern | None = None
    realization: DefectRealization | None = None

    @property
    def eps_values(self) -> np.ndarray:
        """Value per epsilon cell (fields are constant on epsilon cells)."""
        m = self.mesh
        out = np.empty(m.n_eps)
        out[m.eps_cell_of_fine_cell()] = self.values
        return out


def eps_values(pattern: PeriodicPattern, realization: DefectRealization, mesh: MeshHierarchy) -> np.ndarray:
    return pattern.values(mesh.nEps, 0, realization.bits)


def realize(pattern: PeriodicPattern, realization: DefectRealization, mesh: MeshHierarchy) -> CoefficientField:
    check_compatible(pattern, mesh)
    if len(realization.bits) != mesh.n_eps:
        raise ValueError("realization does not match the mesh")
    vals = eps_values(pattern, realization, mesh)[mesh.eps_cell_of_fine_cell()]
    return CoefficientField(vals, mesh, pattern, realization)


def constant_field(mesh: MeshHierarchy, c: float) -> CoefficientField:
    return CoefficientField(np.full(mesh.n_fine, float(c)), mesh)


def defects_in_patch(realization: DefectRealization, patch: PatchRef,
                     pattern: PeriodicPattern | None = None) -> np.ndarray:
    """Local (0-based) slot indices of the patch epsilon cells carrying a defect.

    With ``pattern`` given, defects at cells where the inclusion vanishes are
    dropped since they do not change the coefficient.
    """
    bits = realization.bits[patch.eps_cells].astype(bool)
    if pattern is not None:
        bg, inc = pattern.tile(patch.n_eps_axis, np.asarray(patch.origin) * patch.mesh.eps_per_H)
        bits &= inc != 0.0
    return np.flatnonzero(bits)


def harmonic_mean_field_1d(values: np.ndarray, mesh: MeshHierarchy) -> np.ndarray:
    """Harmonic mean of a per-fine-cell field over each coarse element (1D only)."""
    if mesh.d != 1:
        raise DimensionError("harmonic mean coefficient is only defined for d = 1")
    v = np.asarray(values, dtype=float).reshape(mesh.nH, mesh.r)
    return mesh.r / np.sum(1.0 / v, axis=1)
