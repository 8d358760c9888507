import numpy as np
import pytest
import scipy.sparse as sp

from olodeig import fem
from olodeig.coeff import DimensionError
from olodeig.mesh import build_hierarchy


def _gauss(n=2):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1), 0.5 * w


def test_local_matrices_1d():
    h = 0.125
    assert np.allclose(fem.local_stiffness(1, h), (1 / h) * np.array([[1, -1], [-1, 1]]))
    assert np.allclose(fem.local_mass(1, h), (h / 6) * np.array([[2, 1], [1, 2]]))


def test_local_stiffness_2d_quadrature():
    """Element matrix on [0,h]^2 by 2x2 Gauss quadrature of grad phi_a . grad phi_b."""
    h = 0.25
    x, w = _gauss(2)
    X, Y = np.meshgrid(x * h, x * h, indexing="ij")
    W = np.outer(w, w) * h * h
    # local nodes (x fastest): (0,0), (h,0), (0,h), (h,h)
    corners = [(0, 0), (1, 0), (0, 1), (1, 1)]

    def grad(a):
        cx, cy = corners[a]
        fx = (X / h) if cx else (1 - X / h)
        fy = (Y / h) if cy else (1 - Y / h)
        dfx = (1 / h) if cx else (-1 / h)
        dfy = (1 / h) if cy else (-1 / h)
        return dfx * fy, fx * dfy

    def val(a):
        cx, cy = corners[a]
        return ((X / h) if cx else (1 - X / h)) * ((Y / h) if cy else (1 - Y / h))

    K = np.array([[np.sum(W * (grad(a)[0] * grad(b)[0] + grad(a)[1] * grad(b)[1])) for b in range(4)]
                  for a in range(4)])
    M = np.array([[np.sum(W * val(a) * val(b)) for b in range(4)] for a in range(4)])
    assert np.abs(fem.local_stiffness(2, h) - K).max() < 1e-14
    x3, w3 = _gauss(3)
    assert np.abs(fem.local_mass(2, h) - M).max() < 1e-2 * h * h  # 2-point rule is inexact for mass
    X, Y = np.meshgrid(x3 * h, x3 * h, indexing="ij")
    W = np.outer(w3, w3) * h * h
    M = np.array([[np.sum(W * val(a) * val(b)) for b in range(4)] for a in range(4)])
    assert np.abs(fem.local_mass(2, h) - M).max() < 1e-15


@pytest.mark.parametrize("d", [1, 2])
def test_stiffness_kernel_and_mass_total(d):
    m = build_hierarchy(d, 4, 8, 16)
    rng = np.random.default_rng(0)
    K = fem.assemble_stiffness(rng.uniform(0.1, 1, m.n_fine), m)
    assert np.abs(K @ np.ones(m.n_fine)).max() < 1e-12
    assert abs(K - K.T).max() < 1e-14
    assert abs(fem.assemble_mass(m).sum() - 1.0) < 1e-13
    assert abs(fem.assemble_mass(m, "coarse").sum() - 1.0) < 1e-13


@pytest.mark.parametrize("d", [1, 2])
def test_mass_nesting(d):
    m = build_hierarchy(d, 4, 8, 16)
    P = fem.prolongation_matrix(m)
    v = np.random.default_rng(1).standard_normal(m.n_coarse)
    MH = fem.assemble_mass(m, "coarse")
    Mh = fem.assemble_mass(m)
    w = P @ v
    assert abs(v @ MH @ v - w @ Mh @ w) < 1e-13


def test_interpolation_hand_assembled():
    """nH=2, nh=4: per-element L2 projection of each fine hat, then vertex averaging by 1/2."""
    m = build_hierarchy(1, 2, 2, 4)
    H, h = 0.5, 0.25
    x, w = _gauss(3)

    def hat(i, t):
        # periodic fine hat of node i at t in [0, 1)
        dist = np.abs(((t - i * h) + 0.5) % 1.0 - 0.5)
        return np.clip(1 - dist / h, 0, None)

    Mloc = H / 6 * np.array([[2.0, 1.0], [1.0, 2.0]])
    ref = np.zeros((2, 4))
    for e in range(2):
        pts = np.concatenate([e * H + c * h + x * h for c in range(2)])
        wts = np.concatenate([w * h] * 2)
        psi = np.array([1 - (pts - e * H) / H, (pts - e * H) / H])
        for i in range(4):
            b = psi @ (wts * hat(i, pts))
            c = np.linalg.solve(Mloc, b)
            for a in range(2):
                ref[(e + a) % 2, i] += 0.5 * c[a]
    I = fem.build_interpolation(m).toarray()
    assert np.abs(I - ref).max() < 1e-14


@pytest.mark.parametrize("d", [1, 2])
def test_interpolation_projection(d):
    m = build_hierarchy(d, 4, 8, 32)
    I = fem.build_interpolation(m)
    P = fem.prolongation_matrix(m)
    assert abs(I @ P - sp.identity(m.n_coarse)).max() < 1e-13
    assert np.allclose(I @ np.ones(m.n_fine), 1.0)


def test_nodal_variant():
    m = build_hierarchy(1, 4, 8, 16)
    I = fem.build_interpolation(m, "nodal1d")
    P = fem.prolongation_matrix(m)
    assert abs(I @ P - sp.identity(4)).max() == 0
    with pytest.raises(DimensionError):
        fem.build_interpolation(build_hierarchy(2, 4, 8, 16), "nodal1d")


def test_energy_norm():
    m = build_hierarchy(1, 4, 8, 256)
    K = fem.assemble_stiffness(1.0, m)
    assert fem.energy_norm(np.ones(m.n_fine), K) == 0.0
    x = np.arange(m.n_fine) * m.h
    e = fem.energy_norm(np.sin(2 * np.pi * x), K)
    assert abs(e / (np.pi * np.sqrt(2)) - 1) < 1e-3
    assert abs(fem.l2_norm(np.ones(m.n_fine), fem.assemble_mass(m)) - 1) < 1e-14
