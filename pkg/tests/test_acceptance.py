"""Acceptance criteria, one test per criterion, each reporting a single pass/fail line."""
import math
import time

import numpy as np
import pytest
import scipy.linalg as sla

from olodeig import coeff, corrector, eig, fem, harness, offline, online
from olodeig.coeff import harmonic_mean_field_1d
from olodeig.mesh import build_hierarchy, patch

FOUR_PI2 = 4 * np.pi ** 2
P_LOW = [0.01, 0.02, 0.03, 0.04, 0.05]
SECONDS = 10.0  # budget for criteria whose stated runtime is "seconds"


def _isolated_realizations(mesh, k, p, count, seed=0):
    """Rejection sampling: at least one defect, and no patch holding two or more."""
    out, i = [], 0
    while len(out) < count:
        r = coeff.sample_realization(mesh, p, seed, i)
        i += 1
        if r.n_defects == 0:
            continue
        if all(len(coeff.defects_in_patch(r, patch(mesh, T, k))) <= 1 for T in range(mesh.n_coarse)):
            out.append(r)
    return out, i


def _avg(K, M):
    return eig.lowest_nontrivial_average(eig.solve_pg(K, M, imag_tol=1e-2))


@pytest.mark.parametrize("d", [1, 2])
def test_c01_exact_recombination(criterion, d):
    t0 = time.perf_counter()
    cfg = harness.preset("full-1d", nH=[32]) if d == 1 else harness.preset("desk-2d")
    mesh = cfg.mesh(cfg.nH[0])
    pat = cfg.pattern()
    db = offline.build_offline_db(pat, mesh, cfg.k)
    MH = fem.assemble_mass(mesh, "coarse")
    p = 2.0 / mesh.n_eps
    reals, tried = _isolated_realizations(mesh, cfg.k, p, 100)
    worst_k = worst_l = 0.0
    for r in reals:
        Ko = online.assemble_olod(db, r, mesh).toarray()
        Km = corrector.assemble_pg_mlod(coeff.realize(pat, r, mesh).values, mesh, cfg.k).toarray()
        worst_k = max(worst_k, np.abs(Ko - Km).max())
        lo, lm = _avg(Ko, MH), _avg(Km, MH)
        worst_l = max(worst_l, abs(lo - lm) / abs(lm))
    dt = time.perf_counter() - t0
    limit = SECONDS if d == 1 else 120.0
    ok = worst_k <= 1e-12 and worst_l <= 1e-10 and dt < limit
    criterion(1, ok, f"d={d}: 100 isolated-defect realizations ({tried} drawn), max |K_olod-K_mlod|="
                     f"{worst_k:.2e}, max eig rel diff={worst_l:.2e}, runtime limit {limit:.0f}s", dt)


def test_c02_p0_identity(criterion):
    t0 = time.perf_counter()
    worst = 0.0
    for cfg in (harness.preset("full-1d", nH=[32]), harness.preset("desk-2d")):
        mesh = cfg.mesh(cfg.nH[0])
        real = coeff.sample_realization(mesh, 0.0, 0, 0)
        Km = corrector.assemble_pg_mlod(coeff.realize(cfg.pattern(), real, mesh).values, mesh, cfg.k).toarray()
        db = offline.build_offline_db(cfg.pattern(), mesh, cfg.k)
        for strat in (online.SUM_ONE, online.alternate(online.compute_s_bernoulli(0.0, cfg.alpha, cfg.beta).s)):
            worst = max(worst, np.abs(online.assemble_olod(db, real, mesh, strat).toarray() - Km).max())
    dt = time.perf_counter() - t0
    criterion(2, worst <= 1e-12 and dt < SECONDS, f"p=0, sum-one and alternate(s(0)=1), d=1 and d=2: "
                                                  f"max entry diff {worst:.2e}", dt)


def test_c03_constant_anchor(criterion):
    t0 = time.perf_counter()
    exact = 0.1 * FOUR_PI2
    nHs = [8, 16, 32, 64]
    m0 = build_hierarchy(1, 8, 128, 256)
    fine = eig.solve_symmetric(fem.assemble_stiffness(0.1, m0), fem.assemble_mass(m0))
    lam_f = fine.lambdas[0]
    errs = []
    pat = coeff.make_pattern("checkerboard", 1)
    for nH in nHs:
        mesh = build_hierarchy(1, nH, 128, 256)
        db = offline.build_offline_db(pat, mesh, 3)
        real = coeff.sample_realization(mesh, 0.0, 0, 0)
        res = eig.solve_pg(online.assemble_olod(db, real, mesh).matrix, fem.assemble_mass(mesh, "coarse"))
        errs.append(abs(res.lambdas[0] - lam_f) / lam_f)
    slope = np.polyfit(np.log2(1.0 / np.array(nHs)), np.log2(errs), 1)[0]
    dt = time.perf_counter() - t0
    ok = abs(lam_f / exact - 1) <= 0.01 and slope >= 1.7 and dt < 60
    criterion(3, ok, f"fine lambda1/(0.1*4pi^2)-1={lam_f / exact - 1:.2e}, OLOD errors "
                     f"{', '.join(f'{e:.2e}' for e in errs)}, fitted EOC={slope:.2f}", dt)


def test_c04_h_convergence_1d(criterion):
    t0 = time.perf_counter()
    cfg = harness.preset("full-1d", nH=[8, 16, 32, 64], p=[0.02], samples=20)
    rec = harness.conv_h(cfg)
    eocs = rec.eocs(0.02, "sum-one")
    rmse = [rec.rmse(0.02, 1.0 / n, "sum-one") for n in cfg.nH]
    dt = time.perf_counter() - t0
    ok = float(np.mean(eocs)) >= 1.7 and dt < 600
    criterion(4, ok, f"p=0.02, N=20, RMSE {', '.join(f'{e:.2e}' for e in rmse)}, EOC "
                     f"{', '.join(f'{e:.2f}' for e in eocs)}, mean EOC={np.mean(eocs):.2f} (need >= 1.7)", dt)


def test_c05_p_sweep_1d(criterion):
    t0 = time.perf_counter()
    ps = P_LOW + [0.075, 0.10]
    cfg = harness.preset("full-1d", nH=[64], p=ps, samples=50, reference="mlod")
    rec = harness.sweep_p(cfg)
    r = {p: rec.rmse(p, 1.0 / 64, "sum-one") for p in ps}
    low = [r[p] for p in P_LOW]
    ratio = max(low) / min(low)
    dt = time.perf_counter() - t0
    ok = max(r.values()) <= 0.03 and ratio <= 2.0 and dt < 900
    criterion(5, ok, f"H=2^-6, N=50, RMSE% {', '.join(f'{p:g}:{100 * v:.3f}' for p, v in r.items())}; "
                     f"max/min over p<=0.05 = {ratio:.2f} (need <= 2)", dt)


def test_c06_2d_desk(criterion):
    t0 = time.perf_counter()
    ps = [0.01, 0.02, 0.05, 0.10]
    res = {}
    for model in ("erasure", "checkerboard"):
        cfg = harness.preset("desk-2d", model=model, p=ps, reference="mlod")
        rec = harness.sweep_p(cfg)
        res[model] = [rec.rmse(p, 1.0 / 16, "sum-one") for p in ps]
    er, cb = np.array(res["erasure"]), np.array(res["checkerboard"])
    dt = time.perf_counter() - t0
    ok = er.max() <= 0.05 and cb.max() <= 0.12 and np.all(er <= cb) and dt < 2700
    criterion(6, ok, "nEps=32 nh=128 nH=16 k=3 N=20, RMSE% erasure "
                     f"{', '.join(f'{100 * v:.3f}' for v in er)} / checkerboard "
                     f"{', '.join(f'{100 * v:.3f}' for v in cb)} at p={ps}", dt)


def test_c07_alternate_superiority(criterion):
    t0 = time.perf_counter()
    ps = [0.15, 0.2, 0.3]
    lines, ok = [], True
    for nH in (32, 64):
        cfg = harness.preset("full-1d", nH=[nH], p=ps, samples=50)
        rec = harness.compare_strategies(cfg)
        for p in ps:
            a, s = rec.rmse(p, 1.0 / nH, "alternate"), rec.rmse(p, 1.0 / nH, "sum-one")
            ok &= a <= s
            lines.append(f"H=1/{nH} p={p}: alt {100 * a:.3f}% vs one {100 * s:.3f}%")
    dt = time.perf_counter() - t0
    criterion(7, ok and dt < 900, "N=50 paired seeds; " + "; ".join(lines), dt)


def test_c08_s_formula(criterion):
    a, b = 0.1, 1.0
    e0 = abs(online.compute_s_bernoulli(0.0, a, b).s - 1.0)
    e1 = abs(online.compute_s_bernoulli(1.0, a, b).s - b / a)
    gap = 0.0
    for p in np.linspace(0.0, 1.0, 11):
        L, M = online.bernoulli_means(p, a, b)
        gap = max(gap, abs(online.compute_s_general(L, M, a, b).s - online.compute_s_bernoulli(p, a, b).s))
    criterion(8, e0 <= 1e-14 and e1 <= 1e-14 and gap <= 1e-12,
              f"|s(0)-1|={e0:.1e}, |s(1)-beta/alpha|={e1:.1e}, general vs Bernoulli max gap {gap:.1e}")


def test_c09_harmonic_mean(criterion):
    t0 = time.perf_counter()
    m = build_hierarchy(1, 16, 128, 256)
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(50):
        v = rng.uniform(0.1, 1.0, m.n_eps)[m.eps_cell_of_fine_cell()]
        K = corrector.assemble_pg_mlod(v, m, 0, "nodal1d").toarray()
        Kh = fem.assemble_stiffness(harmonic_mean_field_1d(v, m), m, "coarse").toarray()
        worst = max(worst, np.abs(K - Kh).max())
    dt = time.perf_counter() - t0
    criterion(9, worst <= 1e-10 and dt < SECONDS,
              f"50 random fields, nodal interpolation, k=0: max entry diff {worst:.2e}", dt)


def test_c10_corrector_decay(criterion):
    t0 = time.perf_counter()
    m = build_hierarchy(1, 16, 128, 256)
    pat = coeff.make_pattern("checkerboard", 1, 0.1, 1.0)
    ks = list(range(1, (m.nH + 1) // 2 + 1))
    ok, slopes = True, []
    for i in range(10):
        v = coeff.realize(pat, coeff.sample_realization(m, 0.5, 77, i), m).values
        e = corrector.corrector_decay(v, m, int(i % m.nH), ks)
        keep = e > 1e-12 * e[0]
        ev, kv = e[keep], np.array(ks)[keep]
        ok &= bool(np.all(np.diff(ev) <= 0))
        slopes.append(np.polyfit(kv, np.log(ev), 1)[0])
    ok &= max(slopes) < -0.3
    dt = time.perf_counter() - t0
    criterion(10, ok and dt < SECONDS, f"10 fields, k=1..{ks[-1]}: monotone={ok}, fitted slopes in "
                                       f"[{min(slopes):.2f}, {max(slopes):.2f}] (need < -0.3)", dt)


def _mass_ratio(mesh, values):
    """sup over mean-free v in V_h and w in ker(I_H) of |m(v, w)| / (|v|_A |w|_A)."""
    K = fem.assemble_stiffness(values, mesh).toarray()
    M = fem.assemble_mass(mesh).toarray()
    I = fem.build_interpolation(mesh).toarray()
    n = mesh.n_fine
    Qv = online._mean_free_basis(n)
    Z = sla.null_space(I)
    Lv = np.linalg.cholesky(Qv.T @ K @ Qv)
    Lw = np.linalg.cholesky(Z.T @ K @ Z)
    B = sla.solve_triangular(Lv, Qv.T @ M @ Z, lower=True)
    B = sla.solve_triangular(Lw, B.T, lower=True).T
    return float(np.linalg.norm(B, 2))


def test_c11_kernel_and_mass(criterion):
    t0 = time.perf_counter()
    kern = 0.0
    for cfg in (harness.preset("full-1d", nH=[16]), harness.preset("desk-2d")):
        mesh = cfg.mesh(cfg.nH[0])
        v = coeff.realize(cfg.pattern(), coeff.sample_realization(mesh, 0.2, 5, 0), mesh).values
        kern = max(kern, corrector.kernel_residual(corrector.compute_correctors(v, mesh, cfg.k), mesh))
    nHs = [4, 8, 16, 32]
    ratios = []
    for nH in nHs:
        mesh = build_hierarchy(1, nH, 128, 256)
        v = coeff.realize(coeff.make_pattern("checkerboard", 1), coeff.sample_realization(mesh, 0.3, 5, 0), mesh).values
        ratios.append(_mass_ratio(mesh, v))
    slope = np.polyfit(np.log(1.0 / np.array(nHs)), np.log(ratios), 1)[0]
    dt = time.perf_counter() - t0
    ok = kern <= 1e-10 and slope >= 1.8 and dt < 120
    criterion(11, ok, f"max |I_H C phi|_inf={kern:.1e}; mass ratio "
                      f"{', '.join(f'{r:.2e}' for r in ratios)} over H=1/4..1/32, slope {slope:.2f}", dt)
