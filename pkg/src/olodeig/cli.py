"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import coeff, corrector, eig, fem, harness, offline, online, report
from .mesh import MeshError

log = logging.getLogger("olodeig")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3

# flag name -> ExperimentConfig field
_OVERRIDES = {
    "d": "d", "nH": "nH", "nEps": "nEps", "nh": "nh", "k": "k", "model": "model",
    "alpha": "alpha", "beta": "beta", "p": "p", "samples": "samples", "seed": "seed",
    "strategy": "strategies", "reference": "reference", "output": "output",
    "db_dir": "db_dir", "workers": "workers", "period": "period", "imag_tol": "imag_tol",
}


def _common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="JSON file with ExperimentConfig fields")
    sp.add_argument("--preset", choices=sorted(harness.PRESETS))
    sp.add_argument("--d", type=int)
    sp.add_argument("--nH", type=int, nargs="+")
    sp.add_argument("--nEps", type=int)
    sp.add_argument("--nh", type=int)
    sp.add_argument("--k", type=int)
    sp.add_argument("--model", choices=["checkerboard", "erasure"])
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--beta", type=float)
    sp.add_argument("--period", type=int)
    sp.add_argument("--p", type=float, nargs="+")
    sp.add_argument("--samples", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--strategy", nargs="+", choices=["sum-one", "alternate"])
    sp.add_argument("--reference", choices=["fine", "mlod", "FineFEM", "MLOD"])
    sp.add_argument("--output", help="output directory")
    sp.add_argument("--db-dir", "--db", dest="db_dir", help="offline database directory (read or written)")
    sp.add_argument("--workers", type=int)
    sp.add_argument("--imag-tol", dest="imag_tol", type=float,
                    help="largest accepted relative imaginary part of coarse eigenvalues")
    sp.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="olodeig", description="Offline-online LOD eigenvalue experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("offline-build", help="build and store offline databases")
    _common(sp)
    sp = sub.add_parser("solve", help="eigenvalues for one realization")
    _common(sp)
    sp.add_argument("--sample", type=int, default=0)
    sp.add_argument("--count", type=int, default=2)
    sp.add_argument("--s", type=float, help="sum constraint for the alternate strategy")
    for name, helptext in (("sweep-p", "RMSE against p at fixed H"),
                           ("conv-h", "RMSE and EOC against H"),
                           ("compare-s", "sum-one against alternate on paired seeds")):
        sp = sub.add_parser(name, help=helptext)
        _common(sp)
        sp.add_argument("--no-chart", action="store_true")
    sp = sub.add_parser("diagnose", help="corrector decay, consistency error and E_T map")
    _common(sp)
    sp.add_argument("--sample", type=int, default=0)
    sp.add_argument("--node", type=int, default=0, help="coarse node for the decay curve")
    return ap


def load_config(args) -> harness.ExperimentConfig:
    cfg = harness.preset(args.preset) if args.preset else harness.ExperimentConfig()
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise harness.ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise harness.ConfigError("config file must hold a JSON object")
        base = cfg.to_dict()
        base.update(data)
        cfg = harness.ExperimentConfig.from_dict(base)
    over = {f: getattr(args, a) for a, f in _OVERRIDES.items() if getattr(args, a, None) is not None}
    try:
        cfg = replace(cfg, **over)
    except TypeError as exc:
        raise harness.ConfigError(str(exc)) from exc
    return cfg.validate()


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_offline_build(cfg, args) -> int:
    out = Path(cfg.db_dir or Path(cfg.output) / "db")
    cfg = replace(cfg, db_dir=str(out))
    ctx = harness.Context(cfg)
    summary = []
    for nH in cfg.nH:
        db = ctx.db(nH)
        summary.append({"nH": nH, "n_slots": db.n_slots,
                        "bytes": offline.db_size_estimate(cfg.mesh(nH), cfg.k),
                        "path": str(out / f"{cfg.model}-d{cfg.d}-nH{nH}-k{cfg.k}")})
    _print(summary)
    return EXIT_OK


def cmd_solve(cfg, args) -> int:
    nH = cfg.nH[0]
    p = cfg.p[0]
    mesh = cfg.mesh(nH)
    ctx = harness.Context(cfg)
    real = coeff.sample_realization(mesh, p, cfg.seed, args.sample)
    field_ = coeff.realize(ctx.pattern, real, mesh)
    MH = ctx.coarse_mass(nH)
    out = {"p": p, "sample": args.sample, "nH": nH, "n_defects": real.n_defects}
    for name in cfg.strategies:
        strat = harness.strategy_for(name, p, cfg.alpha, cfg.beta)
        if args.s is not None and name == "alternate":
            strat = online.alternate(args.s)
        K = online.assemble_olod(ctx.db(nH), real, mesh, strat)
        res = eig.solve_pg(K.matrix, MH, count=args.count, imag_tol=cfg.imag_tol)
        out[name] = {"lambdas": res.lambdas.tolist(), "s": strat.s, "max_imag": res.max_imag}
    if cfg.reference == "fine":
        res = eig.solve_symmetric(fem.assemble_stiffness(field_.values, mesh), fem.assemble_mass(mesh),
                                  count=args.count)
    else:
        K = corrector.assemble_pg_mlod(field_.values, mesh, cfg.k)
        res = eig.solve_pg(K.matrix, MH, count=args.count, imag_tol=cfg.imag_tol)
    out["reference"] = {"mode": cfg.reference, "lambdas": res.lambdas.tolist()}
    _print(out)
    return EXIT_OK


def _experiment(fn, name):
    def run(cfg, args) -> int:
        rec = fn(cfg)
        outdir = Path(cfg.output)
        path = report.emit_csv(rec, outdir / f"{name}.csv")
        if not args.no_chart:
            report.emit_chart(rec, outdir / f"{name}.svg", title=name)
        for a in rec.aggregates:
            val = f"rmse={a.rmse:.4e}" if a.eoc != a.eoc else f"eoc={a.eoc:.3f}"
            print(f"{a.strategy:9s} p={a.p:<6g} H={a.H:<10g} {val}")
        print(f"wrote {path}")
        return EXIT_OK
    return run


def cmd_diagnose(cfg, args) -> int:
    nH = cfg.nH[0]
    p = cfg.p[0]
    mesh = cfg.mesh(nH)
    ctx = harness.Context(cfg)
    real = coeff.sample_realization(mesh, p, cfg.seed, args.sample)
    values = coeff.realize(ctx.pattern, real, mesh).values
    k_full = (nH + 1) // 2
    ks = list(range(1, k_full + 1))
    decay = corrector.corrector_decay(values, mesh, args.node, ks)
    db = ctx.db(nH)
    mlod = corrector.assemble_pg_mlod(values, mesh, cfg.k)
    gram = online.energy_gram(values, mesh)
    eta = {}
    et = {}
    for name in cfg.strategies:
        strat = harness.strategy_for(name, p, cfg.alpha, cfg.beta)
        eta[name] = online.consistency_error(mlod.matrix, online.assemble_olod(db, real, mesh, strat).matrix, gram)
        et[name] = [online.error_indicator_ET(db, real, T, strat) for T in range(mesh.n_coarse)]
    result = {"p": p, "sample": args.sample, "nH": nH, "k": cfg.k, "n_defects": real.n_defects,
              "decay": {"node": args.node, "k": ks, "error": decay.tolist()},
              "eta_k": eta, "E_T": et}
    outdir = Path(cfg.output)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "diagnose.json").write_text(json.dumps(result, indent=2), encoding="utf-8")
    _print({"decay": result["decay"], "eta_k": eta,
            "E_T_max": {n: float(np.max(v)) for n, v in et.items()}})
    return EXIT_OK


COMMANDS = {
    "offline-build": cmd_offline_build,
    "solve": cmd_solve,
    "sweep-p": _experiment(harness.sweep_p, "sweep_p"),
    "conv-h": _experiment(harness.conv_h, "conv_h"),
    "compare-s": _experiment(harness.compare_strategies, "compare_s"),
    "diagnose": cmd_diagnose,
}

_CONFIG_ERRORS = (harness.ConfigError, MeshError, coeff.DimensionError,
                  online.StrategyModelMismatch, offline.ManifestMeshMismatch)
_SOLVER_ERRORS = (harness.SampleFailure, eig.EigenError, corrector.SingularSystem,
                  online.NotSPD, online.DegenerateElement, offline.DatabaseError,
                  np.linalg.LinAlgError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.command == "compare-s" and cfg.model != "checkerboard":
            raise harness.ConfigError("compare-s needs the checkerboard model")
        return COMMANDS[args.command](cfg, args)
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
