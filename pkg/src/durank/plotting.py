"""Static report figures.

Figures are written with the non-interactive Agg/SVG backends. SVG output is
byte-stable for identical input: the id salt is fixed and no date metadata
is written.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "svg.hashsalt": "durank",
    "svg.fonttype": "path",
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.4,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def figsize(scale=1.0):
    golden = (math.sqrt(5.0) - 1.0) / 2.0
    width = 6.0 * scale
    return (width, width * golden)


def _float(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return math.nan


def read_series_csv(path):
    """First column is x; every other column with at least one number is a series.

    Returns ``(x_label, x_values, {name: y_values})``. Non-numeric x values
    are returned as strings.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return "", [], {}
    header, body = rows[0], [r for r in rows[1:] if r]
    xs = [r[0] for r in body]
    if xs and all(not math.isnan(_float(x)) for x in xs):
        xs = [_float(x) for x in xs]
    series = {}
    for j, name in enumerate(header[1:], start=1):
        ys = [_float(r[j]) if j < len(r) else math.nan for r in body]
        if any(not math.isnan(y) for y in ys):
            series[name] = ys
    return header[0], xs, series


def line_chart(x, series, path, xlabel="", ylabel="", title=""):
    """Write one polyline per series, legend from the series names."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        categorical = bool(x) and isinstance(x[0], str)
        xpos = list(range(len(x))) if categorical else x
        for name, ys in series.items():
            ax.plot(xpos, ys, marker="o", markersize=3, label=name)
        if categorical:
            ax.set_xticks(xpos)
            ax.set_xticklabels(x)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if series:
            ax.legend(frameon=False)
        fig.tight_layout()
        fmt = Path(path).suffix.lstrip(".") or "svg"
        fig.savefig(path, format=fmt, metadata={"Date": None} if fmt == "svg" else None)
        plt.close(fig)
    return path


def summary_rows(series):
    out = []
    for name, ys in series.items():
        vals = [y for y in ys if not math.isnan(y)]
        out.append((name, len(vals), min(vals), max(vals), vals[-1]))
    return out


def render_report(csv_paths, out_dir, fmt="svg"):
    """Chart every CSV and write ``summary.csv``; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written, summary = [], []
    for p in csv_paths:
        p = Path(p)
        xlabel, x, series = read_series_csv(p)
        target = out_dir / f"{p.stem}.{fmt}"
        line_chart(x, series, target, xlabel=xlabel, title=p.stem)
        written.append(target)
        summary.extend((p.stem, *row) for row in summary_rows(series))
    table = out_dir / "summary.csv"
    with open(table, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "series", "points", "min", "max", "last"])
        for row in summary:
            w.writerow([row[0], row[1], row[2], repr(row[3]), repr(row[4]), repr(row[5])])
    written.append(table)
    return written
