"""Tables, CSV export and SVG learning-curve plots for run records."""

from __future__ import annotations

import csv
import io
import os
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence
from xml.sax.saxutils import escape

from .metrics import AggregationError, LearningCurve, aggregate_runs, mean_std

CSV_COLUMNS = ["run_id", "strategy", "mc_variant", "iteration", "labeled_tokens", "f1",
               "precision", "recall", "train_seconds", "query_seconds",
               "model", "labeled_fraction", "config_hash"]


def group_records(records: Sequence) -> dict[str, list]:
    groups: dict[str, list] = defaultdict(list)
    for r in sorted(records, key=lambda r: (r.config_hash, r.run_seed)):
        groups[r.config_hash].append(r)
    return dict(groups)


def curves_from_records(records: Sequence) -> list[LearningCurve]:
    """One aggregated curve per configuration; raises ``AggregationError``
    naming the runs when a configuration has mixed iteration counts."""
    curves = []
    for recs in group_records(records).values():
        curves.append(aggregate_runs(recs, label=recs[0].label))
    return sorted(curves, key=lambda c: c.label)


def _model_name(config: dict) -> str:
    acq, succ = config["acquisition_model"], config["successor_model"]
    return acq["kind"] if acq == succ else f"{acq['kind']}->{succ['kind']}"


def record_rows(records: Sequence) -> list[dict]:
    rows = []
    for r in sorted(records, key=lambda r: (r.label, r.run_seed)):
        for e in r.entries:
            rows.append({
                "run_id": f"{r.config_hash}/{r.run_seed}",
                "strategy": r.strategy,
                "mc_variant": r.mc_variant,
                "iteration": e.iteration,
                "labeled_tokens": e.labeled_token_count,
                "f1": repr(e.successor.f1),
                "precision": repr(e.successor.precision),
                "recall": repr(e.successor.recall),
                "train_seconds": f"{e.train_seconds:.6f}",
                "query_seconds": f"{e.query_seconds:.6f}",
                "model": _model_name(r.config),
                "labeled_fraction": repr(e.labeled_token_count / r.total_tokens),
                "config_hash": r.config_hash,
            })
    return rows


def write_rows_csv(rows: Iterable[dict], fh) -> None:
    w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)


def read_rows_csv(path: str | os.PathLike) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"CSV lacks columns {sorted(missing)}")
        return list(reader)


@dataclass
class Series:
    label: str
    x: list[float]
    y: list[float]
    std: list[float]


def series_from_rows(rows: Sequence[dict]) -> list[Series]:
    """Mean/std curve per (model, strategy, MC variant) from CSV-style rows."""
    by_label: dict[str, dict[int, list[dict]]] = defaultdict(lambda: defaultdict(list))
    runs_per_label: dict[str, set] = defaultdict(set)
    for row in rows:
        label = f"{row['model']} {row['strategy']}"
        if row["mc_variant"] != "NONE":
            label += f" ({row['mc_variant']})"
        by_label[label][int(row["iteration"])].append(row)
        runs_per_label[label].add(row["run_id"])
    out = []
    for label in sorted(by_label):
        its = by_label[label]
        n_runs = len(runs_per_label[label])
        bad = sorted(k for k, v in its.items() if len(v) != n_runs)
        if bad:
            raise AggregationError(f"{label}: runs have different iteration counts (iterations {bad[:5]})")
        xs, ys, ss = [], [], []
        for k in sorted(its):
            xs.append(mean_std([float(r["labeled_fraction"]) for r in its[k]])[0])
            m, s = mean_std([float(r["f1"]) for r in its[k]])
            ys.append(m)
            ss.append(s)
        out.append(Series(label, xs, ys, ss))
    return out


# -- text tables ---------------------------------------------------------------

def f1_table(curves: Sequence[LearningCurve]) -> str:
    """Rows per configuration, columns per iteration, cells "mean ± std" in F1 points."""
    iterations = sorted({p.iteration for c in curves for p in c.points})
    header = ["model / strategy"] + [str(i) for i in iterations]
    rows = []
    for c in curves:
        cells = {p.iteration: f"{100 * p.f1_mean:.1f} ± {100 * p.f1_std:.1f}" for p in c.points}
        rows.append([c.label] + [cells.get(i, "") for i in iterations])
    return _render(header, rows)


def timing_table(curves: Sequence[LearningCurve]) -> str:
    """Mean seconds per iteration for acquisition-model training and querying."""
    header = ["model / strategy", "iteration", "acq. model training", "querying inst.", "total"]
    rows = []
    for c in curves:
        for p in c.points:
            rows.append([c.label, str(p.iteration), f"{p.train_seconds:.3f}",
                         f"{p.query_seconds:.3f}", f"{p.train_seconds + p.query_seconds:.3f}"])
    return _render(header, rows)


def _render(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    fmt = lambda r: " | ".join(cell.ljust(w) for cell, w in zip(r, widths))  # noqa: E731
    lines = [fmt(header), "-+-".join("-" * w for w in widths)]
    lines += [fmt(r) for r in rows]
    return "\n".join(lines)


# -- SVG -----------------------------------------------------------------------

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
            "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


def render_svg(series: Sequence[Series], title: str = "") -> str:
    """Learning curves with +-1 std bands. Output depends only on the input."""
    if not series:
        raise ValueError("nothing to plot")
    W, H = 720, 440
    left, right, top, bottom = 60, 200, 30, 50
    pw, ph = W - left - right, H - top - bottom
    xs = [x for s in series for x in s.x]
    lo_y = min(y - d for s in series for y, d in zip(s.y, s.std))
    hi_y = max(y + d for s in series for y, d in zip(s.y, s.std))
    x0, x1 = 0.0, max(xs) * 1.05 if max(xs) > 0 else 1.0
    y0, y1 = max(0.0, lo_y - 0.02), min(1.0, hi_y + 0.02)
    if y1 <= y0:
        y0, y1 = max(0.0, y0 - 0.05), min(1.0, y1 + 0.05)
        if y1 <= y0:
            y0, y1 = 0.0, 1.0

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (1 - (y - y0) / (y1 - y0)) * ph

    out = io.StringIO()
    out.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
              f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">\n')
    out.write(f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>\n')
    if title:
        out.write(f'<text x="{left}" y="18" font-size="13">{escape(title)}</text>\n')
    # axes and ticks
    out.write(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>\n')
    out.write(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>\n')
    for i in range(6):
        xv = x0 + (x1 - x0) * i / 5
        out.write(f'<line x1="{px(xv):.2f}" y1="{top + ph}" x2="{px(xv):.2f}" y2="{top + ph + 4}" stroke="black"/>\n')
        out.write(f'<text x="{px(xv):.2f}" y="{top + ph + 16}" text-anchor="middle">{100 * xv:.0f}%</text>\n')
        yv = y0 + (y1 - y0) * i / 5
        out.write(f'<line x1="{left - 4}" y1="{py(yv):.2f}" x2="{left}" y2="{py(yv):.2f}" stroke="black"/>\n')
        out.write(f'<text x="{left - 6}" y="{py(yv) + 4:.2f}" text-anchor="end">{100 * yv:.1f}</text>\n')
    out.write(f'<text x="{left + pw / 2:.2f}" y="{H - 10}" text-anchor="middle">labeled tokens (fraction of training set)</text>\n')
    out.write(f'<text x="15" y="{top + ph / 2:.2f}" text-anchor="middle" '
              f'transform="rotate(-90 15 {top + ph / 2:.2f})">span F1</text>\n')

    for k, s in enumerate(series):
        color = _PALETTE[k % len(_PALETTE)]
        upper = [f"{px(x):.2f},{py(y + d):.2f}" for x, y, d in zip(s.x, s.y, s.std)]
        lower = [f"{px(x):.2f},{py(y - d):.2f}" for x, y, d in zip(s.x, s.y, s.std)]
        out.write(f'<polygon class="band" points="{" ".join(upper + lower[::-1])}" '
                  f'fill="{color}" fill-opacity="0.2" stroke="none"/>\n')
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(s.x, s.y))
        out.write(f'<polyline class="curve" points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>\n')
        ly = top + 14 + 18 * k
        lx = left + pw + 15
        out.write(f'<g class="legend-entry"><line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" '
                  f'stroke="{color}" stroke-width="2"/>'
                  f'<text x="{lx + 26}" y="{ly}">{escape(s.label)}</text></g>\n')
    out.write("</svg>\n")
    return out.getvalue()
