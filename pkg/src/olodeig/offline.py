"""Offline database of single-defect Petrov-Galerkin contributions for one reference element.

On disk a database is a directory with ``manifest.json`` and ``blocks.bin``.
``blocks.bin`` holds little-endian float64 data: the stiffness blocks
(N+1, 2^d, m_c) followed by the corrector blocks (N+1, 2^d, m_f), both
row-major.  Each array carries a CRC-64/XZ checksum in the manifest.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from fastcrc import crc64

from .coeff import Model, PeriodicPattern, check_compatible, make_pattern
from .corrector import PatchWorkspace, SingularSystem, solve_local, workspace
from .fem import Variant
from .mesh import MeshHierarchy, build_hierarchy

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
SIGMA_ORDER = "patch-local epsilon cells, lexicographic with x fastest, from the patch origin"
MANIFEST = "manifest.json"
BLOCKS = "blocks.bin"


class DatabaseError(RuntimeError):
    pass


class VersionMismatch(DatabaseError):
    pass


class ChecksumMismatch(DatabaseError):
    pass


class ManifestMeshMismatch(DatabaseError):
    pass


@dataclass(eq=False)
class OfflineDatabase:
    manifest: dict
    stiffness: np.ndarray = field(repr=False)
    correctors: np.ndarray = field(repr=False)

    @property
    def mesh(self) -> MeshHierarchy:
        m = self.manifest
        return build_hierarchy(m["d"], m["nH"], m["nEps"], m["nh"])

    @property
    def k(self) -> int:
        return int(self.manifest["k"])

    @property
    def variant(self) -> Variant:
        return Variant(self.manifest["variant"])

    @property
    def n_slots(self) -> int:
        return int(self.manifest["n_slots"])

    @property
    def pattern(self) -> PeriodicPattern:
        m = self.manifest
        kw = {"period": m["period"]} if m["model"] == Model.ERASURE.value else {}
        return make_pattern(m["model"], m["d"], m["alpha"], m["beta"], **kw)

    @property
    def ws(self) -> PatchWorkspace:
        return workspace(self.mesh, self.k, self.variant)

    @cached_property
    def stiffness_slot_sum(self) -> np.ndarray:
        """Sum of the single-defect blocks i = 1..N (used by the alternate strategy)."""
        return self.stiffness[1:].sum(axis=0)

    @cached_property
    def corrector_slot_sum(self) -> np.ndarray:
        return self.correctors[1:].sum(axis=0)

    def check_mesh(self, mesh: MeshHierarchy, k: int | None = None) -> None:
        m = self.manifest
        got = (m["d"], m["nH"], m["nEps"], m["nh"])
        want = (mesh.d, mesh.nH, mesh.nEps, mesh.nh)
        if got != want:
            raise ManifestMeshMismatch(f"database built for (d, nH, nEps, nh)={got}, used with {want}")
        if k is not None and k != self.k:
            raise ManifestMeshMismatch(f"database built for k={self.k}, used with k={k}")

    def slot_coefficient(self, i: int) -> np.ndarray:
        """Coefficient A_i on the local patch fine cells."""
        return offline_coefficients(self.pattern, self.ws, [i])[0]


def offline_coefficients(pattern: PeriodicPattern, ws: PatchWorkspace, indices=None) -> list[np.ndarray]:
    """Local patch coefficients A_0 (defect free) and A_i (single defect in slot i)."""
    ref = ws.ref
    offset = np.asarray(ref.origin) * ws.mesh.eps_per_H
    bg = pattern.values(ref.n_eps_axis, offset, np.zeros(ws.n_slots))
    hit = pattern.values(ref.n_eps_axis, offset, np.ones(ws.n_slots))
    slot_cells = ws.local_cells_of_slots()
    base = np.empty(ws.grid.n_cells)
    for s, cells in enumerate(slot_cells):
        base[cells] = bg[s]
    if indices is None:
        indices = range(ws.n_slots + 1)
    out = []
    for i in indices:
        a = base.copy()
        if i > 0:
            a[slot_cells[i - 1]] = hit[i - 1]
        out.append(a)
    return out


def build_offline_db(pattern: PeriodicPattern, mesh: MeshHierarchy, k: int,
                     variant: Variant | str = Variant.QUASI) -> OfflineDatabase:
    check_compatible(pattern, mesh)
    variant = Variant(variant)
    ws = workspace(mesh, k, variant)
    n = ws.n_slots
    nloc = 2 ** mesh.d
    stiff = np.empty((n + 1, nloc, ws.m_c))
    corr = np.empty((n + 1, nloc, ws.m_f))
    done: dict[bytes, int] = {}
    for i, a in enumerate(offline_coefficients(pattern, ws)):
        key = a.tobytes()
        if key in done:
            stiff[i], corr[i] = stiff[done[key]], corr[done[key]]
            continue
        try:
            Q, block, _ = solve_local(ws, a)
        except SingularSystem as exc:
            raise SingularSystem(f"offline configuration {i}: {exc}") from exc
        stiff[i], corr[i] = block, Q
        done[key] = i
    log.info("offline database: %d configurations, %d distinct solves", n + 1, len(done))
    manifest = {
        "format_version": FORMAT_VERSION,
        "d": mesh.d, "nH": mesh.nH, "nEps": mesh.nEps, "nh": mesh.nh, "k": int(k),
        "model": pattern.model.value, "alpha": float(pattern.alpha), "beta": float(pattern.beta),
        "period": int(pattern.period), "variant": variant.value,
        "n_slots": n, "n_local": nloc, "m_c": ws.m_c, "m_f": ws.m_f,
        "reference_element": 0, "patch_origin": list(ws.ref.origin),
        "is_full_domain": bool(ws.ref.is_full_domain), "sigma_order": SIGMA_ORDER,
    }
    return OfflineDatabase(manifest, stiff, corr)


def _crc(a: np.ndarray) -> str:
    return f"{crc64.xz(np.ascontiguousarray(a, dtype='<f8').tobytes()):016x}"


def save(db: OfflineDatabase, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    s = np.ascontiguousarray(db.stiffness, dtype="<f8")
    c = np.ascontiguousarray(db.correctors, dtype="<f8")
    manifest = dict(db.manifest)
    manifest["arrays"] = {
        "stiffness": {"offset": 0, "shape": list(s.shape), "crc64": _crc(s)},
        "correctors": {"offset": s.nbytes, "shape": list(c.shape), "crc64": _crc(c)},
    }
    with open(path / BLOCKS, "wb") as fh:
        fh.write(s.tobytes())
        fh.write(c.tobytes())
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return path


def load(path, mesh: MeshHierarchy | None = None, k: int | None = None) -> OfflineDatabase:
    path = Path(path)
    manifest = json.loads((path / MANIFEST).read_text(encoding="utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(f"format version {manifest.get('format_version')} != {FORMAT_VERSION}")
    raw = (path / BLOCKS).read_bytes()
    arrays = {}
    for name in ("stiffness", "correctors"):
        spec = manifest["arrays"][name]
        count = int(np.prod(spec["shape"]))
        a = np.frombuffer(raw, dtype="<f8", count=count, offset=spec["offset"]).reshape(spec["shape"])
        if _crc(a) != spec["crc64"]:
            raise ChecksumMismatch(f"{name} block checksum mismatch in {path / BLOCKS}")
        arrays[name] = a.astype(np.float64)
    manifest = {key: v for key, v in manifest.items() if key != "arrays"}
    db = OfflineDatabase(manifest, arrays["stiffness"], arrays["correctors"])
    if mesh is not None:
        db.check_mesh(mesh, k)
    return db


def db_size_estimate(mesh: MeshHierarchy, k: int) -> int:
    """Size in bytes of ``blocks.bin``: (N+1) * 2^d * (m_c + m_f) * 8."""
    n_elem = mesh.nH if 2 * k + 1 >= mesh.nH else 2 * k + 1
    full = n_elem == mesh.nH
    n_slots = (n_elem * mesh.eps_per_H) ** mesh.d
    m_c = (n_elem + (0 if full else 1)) ** mesh.d
    m_f = (n_elem * mesh.r + (0 if full else 1)) ** mesh.d
    return (n_slots + 1) * 2 ** mesh.d * (m_c + m_f) * 8
