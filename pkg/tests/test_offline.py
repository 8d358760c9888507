import json

import numpy as np
import pytest

from olodeig import coeff, corrector, offline
from olodeig.mesh import build_hierarchy, patch, translate_patch


@pytest.fixture(scope="module")
def db1():
    m = build_hierarchy(1, 8, 32, 64)
    return offline.build_offline_db(coeff.make_pattern("checkerboard", 1), m, 1)


def test_slot_counts(db1):
    assert db1.n_slots == 12 and db1.stiffness.shape == (13, 2, 4) and db1.correctors.shape == (13, 2, 25)
    m2 = build_hierarchy(2, 16, 64, 128)
    assert corrector.workspace(m2, 3).n_slots == 784


def test_size_estimate(db1):
    m = db1.mesh
    assert offline.db_size_estimate(m, 1) == 13 * 2 * (4 + 25) * 8
    assert offline.db_size_estimate(m, 1) == db1.stiffness.nbytes + db1.correctors.nbytes
    m2 = build_hierarchy(1, 8, 64, 64)
    ws1, ws2 = corrector.workspace(m, 1), corrector.workspace(m2, 1)
    assert ws2.n_slots == 2 * ws1.n_slots


def test_block0_is_constant_alpha(db1):
    m = db1.mesh
    c = corrector.solve_element_correctors(np.full(m.n_fine, 0.1), m, 0, 1)
    assert np.abs(db1.stiffness[0] - c.block).max() < 1e-14


def test_single_defect_slots_exact(db1):
    m = db1.mesh
    pat = db1.pattern
    rng = np.random.default_rng(0)
    for i in rng.choice(np.arange(1, db1.n_slots + 1), 4, replace=False):
        for T in (0, 3, 6):
            pT = patch(m, T, 1)
            bits = np.zeros(m.n_eps)
            bits[pT.eps_cells[i - 1]] = 1
            v = coeff.realize(pat, coeff.realization_from_bits(bits), m).values
            c = corrector.solve_element_correctors(v, m, T, 1)
            assert np.abs(c.block - db1.stiffness[i]).max() < 1e-12
            assert not np.array_equal(db1.correctors[i], db1.correctors[0])
    # translation maps the reference patch onto the patch of T
    tr = translate_patch(m, 0, 5)
    assert np.array_equal(tr.eps[patch(m, 0, 1).eps_cells], patch(m, 5, 1).eps_cells)


def test_roundtrip(db1, tmp_path):
    offline.save(db1, tmp_path / "db")
    back = offline.load(tmp_path / "db", db1.mesh, 1)
    assert back.stiffness.tobytes() == db1.stiffness.tobytes()
    assert back.correctors.tobytes() == db1.correctors.tobytes()
    man = json.loads((tmp_path / "db" / offline.MANIFEST).read_text())
    for key in ("format_version", "d", "nH", "nEps", "nh", "k", "model", "sigma_order", "arrays"):
        assert key in man
    assert (tmp_path / "db" / offline.BLOCKS).stat().st_size == offline.db_size_estimate(db1.mesh, 1)


def test_corrupted_byte(db1, tmp_path):
    path = offline.save(db1, tmp_path / "db")
    raw = bytearray((path / offline.BLOCKS).read_bytes())
    raw[100] ^= 0x01
    (path / offline.BLOCKS).write_bytes(bytes(raw))
    with pytest.raises(offline.ChecksumMismatch):
        offline.load(path)


def test_version_mismatch(db1, tmp_path):
    path = offline.save(db1, tmp_path / "db")
    man = json.loads((path / offline.MANIFEST).read_text())
    man["format_version"] = 99
    (path / offline.MANIFEST).write_text(json.dumps(man))
    with pytest.raises(offline.VersionMismatch):
        offline.load(path)


def test_mesh_mismatch(db1, tmp_path):
    path = offline.save(db1, tmp_path / "db")
    with pytest.raises(offline.ManifestMeshMismatch):
        offline.load(path, build_hierarchy(2, 8, 32, 64))
    with pytest.raises(offline.ManifestMeshMismatch):
        offline.load(path, db1.mesh, k=2)


def test_erasure_db_reuses_solves():
    m = build_hierarchy(1, 8, 32, 64)
    db = offline.build_offline_db(coeff.make_pattern("erasure", 1), m, 1)
    # defects at inactive cells leave the coefficient unchanged: identical to slot 0
    inactive = [i for i in range(1, db.n_slots + 1) if (i - 1) % 2 == 1]
    for i in inactive:
        assert np.array_equal(db.stiffness[i], db.stiffness[0])
