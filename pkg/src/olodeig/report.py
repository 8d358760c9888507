"""CSV and SVG output of experiment records."""
from __future__ import annotations

import csv
import math
from pathlib import Path

from .harness import AggregateRow, ExperimentRecord, SampleRow

COLUMNS = ["experiment", "strategy", "model", "d", "H", "eps", "h", "k", "p", "sample",
           "lambda_ref", "lambda_method", "rel_err", "rmse", "eoc", "wall_ms"]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _sample_cells(r: SampleRow) -> list[str]:
    return [_fmt(v) for v in (r.experiment, r.strategy, r.model, r.d, r.H, r.eps, r.h, r.k, r.p,
                              r.sample, r.lambda_ref, r.lambda_method, r.rel_err, None, None,
                              round(r.wall_ms, 3))]


def _aggregate_cells(a: AggregateRow) -> list[str]:
    return [_fmt(v) for v in (a.experiment, a.strategy, a.model, a.d, a.H, a.eps, a.h, a.k, a.p,
                              None, None, None, None, a.rmse, a.eoc, None)]


def emit_csv(record: ExperimentRecord | None, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        if record is not None:
            for r in record.rows:
                w.writerow(_sample_cells(r))
            for a in record.aggregates:
                w.writerow(_aggregate_cells(a))
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def emit_chart(record: ExperimentRecord, path, title: str = "") -> Path:
    """Static SVG line plot of RMSE: against H (log-log) for conv_h, against p otherwise."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    aggs = [a for a in record.aggregates if not math.isnan(a.rmse)]
    conv = bool(aggs) and aggs[0].experiment == "conv_h"
    curves: dict = {}
    for a in aggs:
        key = (a.strategy, a.p) if conv else (a.strategy, a.H)
        curves.setdefault(key, []).append((a.H if conv else a.p, a.rmse))
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for (strat, par), pts in sorted(curves.items()):
        pts.sort()
        xs, ys = zip(*pts)
        label = f"{strat}, p={par:g}" if conv else f"{strat}, H={par:g}"
        ax.plot(xs, ys, marker="o", label=label)
    if conv:
        ax.set_xscale("log", base=2)
        ax.set_yscale("log")
        ax.set_xlabel("H")
    else:
        ax.set_xlabel("p")
    ax.set_ylabel("relative RMSE")
    if title:
        ax.set_title(title)
    if curves:
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
