"""Monte Carlo experiments: p-sweeps, H-convergence and strategy comparisons.

Errors are relative, ``(lambda_method - lambda_ref) / lambda_ref``, on the average
of the two smallest non-trivial eigenvalues; RMSE aggregates them over samples.
"""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import coeff, corrector, eig, fem, offline, online
from .mesh import MeshHierarchy, build_hierarchy

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class SampleFailure(RuntimeError):
    def __init__(self, sample_index: int, cause: Exception):
        super().__init__(f"sample {sample_index}: {cause}")
        self.sample_index = sample_index
        self.cause = cause


REFERENCE_ALIASES = {"FineFEM": "fine", "MLOD": "mlod"}


@dataclass
class ExperimentConfig:
    d: int = 1
    nH: list = field(default_factory=lambda: [64])
    nEps: int = 128
    nh: int = 256
    k: int = 3
    model: str = "checkerboard"
    alpha: float = 0.1
    beta: float = 1.0
    p: list = field(default_factory=lambda: [0.02])
    samples: int = 200
    seed: int = 0
    strategies: list = field(default_factory=lambda: ["sum-one"])
    reference: str = "fine"
    output: str = "results"
    period: int = 2
    db_dir: str | None = None
    workers: int = 1
    eig_tol: float = 1e-9
    imag_tol: float = 1e-2  # near-degenerate PG pairs may split into complex pairs

    def validate(self) -> "ExperimentConfig":
        self.reference = REFERENCE_ALIASES.get(self.reference, self.reference)
        if self.d not in (1, 2):
            raise ConfigError("d must be 1 or 2")
        if self.reference not in ("fine", "mlod"):
            raise ConfigError("reference must be 'fine' or 'mlod'")
        if self.model not in ("checkerboard", "erasure"):
            raise ConfigError("model must be 'checkerboard' or 'erasure'")
        for s in self.strategies:
            if s not in ("sum-one", "alternate"):
                raise ConfigError(f"unknown strategy {s!r}")
        if "alternate" in self.strategies and self.model != "checkerboard":
            raise ConfigError("the alternate strategy is only defined for the checkerboard model")
        if self.samples < 1:
            raise ConfigError("samples must be >= 1")
        if any(not 0.0 <= p <= 1.0 for p in self.p):
            raise ConfigError("probabilities must lie in [0, 1]")
        try:
            for nH in self.nH:
                mesh = build_hierarchy(self.d, nH, self.nEps, self.nh)
                coeff.check_compatible(self.pattern(), mesh)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def pattern(self) -> coeff.PeriodicPattern:
        kw = {"period": self.period} if self.model == "erasure" else {}
        return coeff.make_pattern(self.model, self.d, self.alpha, self.beta, **kw)

    def mesh(self, nH: int) -> MeshHierarchy:
        return build_hierarchy(self.d, nH, self.nEps, self.nh)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        for key in ("nH", "p", "strategies"):
            if key in data and not isinstance(data[key], list):
                data[key] = [data[key]]
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "full-1d": dict(d=1, nH=[8, 16, 32, 64], nEps=128, nh=256, k=3, alpha=0.1, beta=1.0, samples=200),
    "full-2d": dict(d=2, nH=[64], nEps=128, nh=256, k=3, alpha=0.1, beta=1.0, samples=200),
    "desk-2d": dict(d=2, nH=[16], nEps=32, nh=128, k=3, alpha=0.1, beta=1.0, samples=20),
}


def preset(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ExperimentConfig(**{**PRESETS[name], **overrides})


@dataclass
class SampleRow:
    experiment: str
    strategy: str
    model: str
    d: int
    H: float
    eps: float
    h: float
    k: int
    p: float
    sample: int
    lambda_ref: float
    lambda_method: float
    rel_err: float
    wall_ms: float
    phase_ms: dict = field(default_factory=dict)


@dataclass
class AggregateRow:
    experiment: str
    strategy: str
    model: str
    d: int
    H: float
    eps: float
    h: float
    k: int
    p: float
    rmse: float = float("nan")
    eoc: float = float("nan")


@dataclass
class ExperimentRecord:
    rows: list = field(default_factory=list)
    aggregates: list = field(default_factory=list)

    def rmse(self, p: float, H: float, strategy: str) -> float:
        for a in self.aggregates:
            if a.p == p and a.H == H and a.strategy == strategy and not math.isnan(a.rmse):
                return a.rmse
        raise KeyError((p, H, strategy))

    def eocs(self, p: float, strategy: str) -> list[float]:
        return [a.eoc for a in self.aggregates
                if a.p == p and a.strategy == strategy and not math.isnan(a.eoc)]


def rmse_of(rel_errs) -> float:
    e = np.asarray(list(rel_errs), dtype=float)
    return float(np.sqrt(np.mean(e * e)))


def strategy_for(name: str, p: float, alpha: float, beta: float) -> online.Strategy:
    if name == "sum-one":
        return online.SUM_ONE
    return online.alternate(online.compute_s_bernoulli(p, alpha, beta).s)


class Context:
    """Per-process cache of meshes, offline databases and mass matrices."""

    def __init__(self, config: ExperimentConfig, databases: dict | None = None):
        self.config = config
        self.pattern = config.pattern()
        self._db = dict(databases or {})
        self._mh = {}
        self._fine = {}

    def db(self, nH: int) -> offline.OfflineDatabase:
        if nH not in self._db:
            cfg = self.config
            mesh = cfg.mesh(nH)
            path = Path(cfg.db_dir) / f"{cfg.model}-d{cfg.d}-nH{nH}-k{cfg.k}" if cfg.db_dir else None
            if path is not None and (path / offline.MANIFEST).exists():
                db = offline.load(path, mesh, cfg.k)
            else:
                db = offline.build_offline_db(self.pattern, mesh, cfg.k)
                if path is not None:
                    offline.save(db, path)
            self._db[nH] = db
        return self._db[nH]

    def coarse_mass(self, nH: int):
        if nH not in self._mh:
            self._mh[nH] = fem.assemble_mass(self.config.mesh(nH), "coarse")
        return self._mh[nH]

    def fine_mass(self):
        if "M" not in self._fine:
            self._fine["M"] = fem.assemble_mass(self.config.mesh(self.config.nH[0]))
        return self._fine["M"]


def fine_reference(values: np.ndarray, mesh: MeshHierarchy, M=None, tol: float = 1e-9) -> float:
    if M is None:
        M = fem.assemble_mass(mesh)
    res = eig.solve_symmetric(fem.assemble_stiffness(values, mesh), M, count=2, tol=tol)
    return eig.lowest_nontrivial_average(res)


def run_sample(config: ExperimentConfig, sample_index: int, p: float | None = None,
               nH_list=None, strategies=None, experiment: str = "sample",
               context: Context | None = None) -> list[SampleRow]:
    """One realization: reference solve, then the method for each (nH, strategy)."""
    cfg = config
    ctx = context or Context(cfg)
    p = cfg.p[0] if p is None else p
    nH_list = cfg.nH if nH_list is None else nH_list
    strategies = cfg.strategies if strategies is None else strategies
    rows = []
    try:
        fine_mesh = cfg.mesh(nH_list[0])
        real = coeff.sample_realization(fine_mesh, p, cfg.seed, sample_index)
        field_ = coeff.realize(ctx.pattern, real, fine_mesh)
        t0 = time.perf_counter()
        lam_fine = None
        if cfg.reference == "fine":
            lam_fine = fine_reference(field_.values, fine_mesh, ctx.fine_mass(), cfg.eig_tol)
        t_ref = (time.perf_counter() - t0) * 1e3
        for nH in nH_list:
            mesh = cfg.mesh(nH)
            MH = ctx.coarse_mass(nH)
            lam_ref, t_mlod = lam_fine, 0.0
            if cfg.reference == "mlod":
                t0 = time.perf_counter()
                K = corrector.assemble_pg_mlod(field_.values, mesh, cfg.k)
                lam_ref = eig.lowest_nontrivial_average(
                    eig.solve_pg(K.matrix, MH, imag_tol=cfg.imag_tol, tol=cfg.eig_tol))
                t_mlod = (time.perf_counter() - t0) * 1e3
            db = ctx.db(nH)
            for name in strategies:
                strat = strategy_for(name, p, cfg.alpha, cfg.beta)
                t0 = time.perf_counter()
                K = online.assemble_olod(db, real, mesh, strat)
                t1 = time.perf_counter()
                lam = eig.lowest_nontrivial_average(
                    eig.solve_pg(K.matrix, MH, imag_tol=cfg.imag_tol, tol=cfg.eig_tol))
                t2 = time.perf_counter()
                wall = (t2 - t0) * 1e3
                rows.append(SampleRow(
                    experiment, name, cfg.model, cfg.d, mesh.H, mesh.eps, mesh.h, cfg.k, p, sample_index,
                    lam_ref, lam, (lam - lam_ref) / lam_ref, wall,
                    {"reference": t_ref if cfg.reference == "fine" else t_mlod,
                     "assemble": (t1 - t0) * 1e3, "eigensolve": (t2 - t1) * 1e3}))
    except Exception as exc:
        raise SampleFailure(sample_index, exc) from exc
    return rows


_worker_ctx: Context | None = None


def _init_worker(config: ExperimentConfig):
    global _worker_ctx
    _worker_ctx = Context(config)


def _worker_task(args):
    config, index, p, nH_list, strategies, experiment = args
    return run_sample(config, index, p, nH_list, strategies, experiment, _worker_ctx)


def _run_many(config: ExperimentConfig, p: float, nH_list, strategies, experiment: str,
              ctx: Context) -> list[SampleRow]:
    tasks = [(config, i, p, nH_list, strategies, experiment) for i in range(config.samples)]
    if config.workers <= 1:
        out = [run_sample(*t[:5], experiment, ctx) for t in tasks]
    else:
        if config.db_dir:
            for nH in nH_list:
                ctx.db(nH)
        with ProcessPoolExecutor(config.workers, initializer=_init_worker, initargs=(config,)) as pool:
            out = list(pool.map(_worker_task, tasks))
    rows = [r for chunk in out for r in chunk]
    rows.sort(key=lambda r: (r.sample, r.H, r.strategy))
    return rows


def aggregate(rows: list[SampleRow], experiment: str, with_eoc: bool = False) -> list[AggregateRow]:
    """RMSE per (p, H, strategy) from the stored rows; optionally EOC between consecutive H."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.p, r.H, r.strategy), []).append(r)
    out = []
    for (p, H, strat), rs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][2], -kv[0][1])):
        r0 = rs[0]
        out.append(AggregateRow(experiment, strat, r0.model, r0.d, H, r0.eps, r0.h, r0.k, p,
                                rmse=rmse_of(r.rel_err for r in rs)))
    if with_eoc:
        eocs = []
        by = {}
        for a in out:
            by.setdefault((a.p, a.strategy), []).append(a)
        for (p, strat), aa in by.items():
            aa = sorted(aa, key=lambda a: -a.H)
            for coarse, fine in zip(aa, aa[1:]):
                e = math.log2(coarse.rmse / fine.rmse) if coarse.rmse > 0 and fine.rmse > 0 else float("nan")
                eocs.append(replace(fine, rmse=float("nan"), eoc=e))
        out.extend(eocs)
    return out


def sweep_p(config: ExperimentConfig, context: Context | None = None) -> ExperimentRecord:
    """Fixed mesh (first nH), all probabilities in ``config.p``."""
    cfg = config.validate()
    ctx = context or Context(cfg)
    rows = []
    for p in cfg.p:
        rows += _run_many(cfg, p, cfg.nH[:1], cfg.strategies, "sweep_p", ctx)
    return ExperimentRecord(rows, aggregate(rows, "sweep_p"))


def conv_h(config: ExperimentConfig, context: Context | None = None) -> ExperimentRecord:
    """All coarse meshes for each probability; EOC = log2(err(H) / err(H/2))."""
    cfg = config.validate()
    ctx = context or Context(cfg)
    nH_list = sorted(cfg.nH)
    rows = []
    for p in cfg.p:
        rows += _run_many(cfg, p, nH_list, cfg.strategies, "conv_h", ctx)
    return ExperimentRecord(rows, aggregate(rows, "conv_h", with_eoc=True))


def compare_strategies(config: ExperimentConfig, context: Context | None = None) -> ExperimentRecord:
    """Sum-one and alternate strategies on identical realizations."""
    cfg = replace(config, strategies=["sum-one", "alternate"]).validate()
    ctx = context or Context(cfg)
    rows = []
    for p in cfg.p:
        rows += _run_many(cfg, p, cfg.nH[:1], cfg.strategies, "compare_s", ctx)
    return ExperimentRecord(rows, aggregate(rows, "compare_s"))
