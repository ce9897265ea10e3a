"""Result serialization: CSV tables and standalone SVG line plots.

All output is deterministic: floats are written in shortest round-trip
form, rows keep their sorted order, and files land atomically (written
to a temp name, then renamed) so a crash never leaves a partial table.
Parsing a results CSV reconstructs the exact in-memory result, which
makes write -> parse -> write a byte-identical fixed point.
"""

from __future__ import annotations

import csv
import io
import os

import numpy as np

from .errors import InvalidInputError
from .metrics import linear_fit_r2
from .sweep import AggregateRow, ExperimentResult, ResultRow, aggregate_rows

RESULT_COLUMNS = (
    "condition",
    "family",
    "run",
    "seed",
    "v_info_nats",
    "split",
    "auc",
    "accuracy",
    "ssim",
    "psnr",
    "wall_time_s",
)

_METRICS = ("v_info_nats", "auc", "accuracy", "ssim", "psnr")
_FIT_TARGETS = ("auc", "accuracy")

_CONDITION_COLORS = {
    "low_field": "#c44536",
    "restored": "#2a6f97",
    "high_field": "#3a7d44",
}


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv_text(header, data_rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in data_rows:
        writer.writerow([_fmt(cell) for cell in row])
    return buf.getvalue()


def results_csv_text(result):
    rows = [
        (
            r.condition,
            r.family,
            r.run,
            r.seed,
            r.v_info_nats,
            r.split,
            r.auc,
            r.accuracy,
            r.ssim,
            r.psnr,
            r.wall_time_s,
        )
        for r in result.rows
    ]
    return _csv_text(RESULT_COLUMNS, rows)


def summary_csv_text(result):
    header = ["condition", "family"]
    for name in _METRICS:
        header += [f"{name}_mean", f"{name}_std"]
    rows = []
    for agg in result.aggregates:
        row = [agg.condition, agg.family]
        for name in _METRICS:
            row += [agg.means[name], agg.stds[name]]
        rows.append(row)
    return _csv_text(header, rows)


def information_fits(result):
    """Linear fits of task metrics against the information estimate.

    One fit per (condition, target metric) over all per-run points in
    that condition.  Cells whose points cannot support a fit (fewer
    than three, a constant x, or non-finite values) are left out.
    """
    fits = []
    for condition in result.conditions():
        rows = [r for r in result.rows if r.condition == condition]
        for target in _FIT_TARGETS:
            points = [
                (r.v_info_nats, getattr(r, target))
                for r in rows
                if getattr(r, target) is not None
            ]
            points = [
                (x, y) for x, y in points if np.isfinite(x) and np.isfinite(y)
            ]
            if len(points) < 3:
                continue
            xs = [p[0] for p in points]
            ys = [p[1] for p in points]
            if max(xs) == min(xs):
                continue
            fit = linear_fit_r2(xs, ys)
            fits.append((condition, target, fit, len(points)))
    return fits


def fits_csv_text(result):
    header = (
        "condition",
        "x_metric",
        "y_metric",
        "slope",
        "intercept",
        "r_squared",
        "n_points",
    )
    rows = [
        (condition, "v_info_nats", target, fit.slope, fit.intercept, fit.r_squared, n)
        for condition, target, fit, n in information_fits(result)
    ]
    return _csv_text(header, rows)


def _parse_float(token, column, lineno):
    if token == "":
        return None
    try:
        return float(token)
    except ValueError:
        raise InvalidInputError(
            f"line {lineno}: bad {column} value {token!r}"
        ) from None


def _parse_int(token, column, lineno):
    try:
        return int(token)
    except ValueError:
        raise InvalidInputError(
            f"line {lineno}: bad {column} value {token!r}"
        ) from None


def parse_results_csv(text):
    """Rebuild an ExperimentResult from its results CSV."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise InvalidInputError("empty results file") from None
    if tuple(header) != RESULT_COLUMNS:
        raise InvalidInputError(f"unexpected header {header!r}")
    rows = []
    for lineno, record in enumerate(reader, start=2):
        if not record:
            continue
        if len(record) != len(RESULT_COLUMNS):
            raise InvalidInputError(
                f"line {lineno}: expected {len(RESULT_COLUMNS)} fields, got {len(record)}"
            )
        (cond, family, run, seed, vi, split, auc_s, acc, ssim_s, psnr_s, wall) = record
        vi_f = _parse_float(vi, "v_info_nats", lineno)
        acc_f = _parse_float(acc, "accuracy", lineno)
        ssim_f = _parse_float(ssim_s, "ssim", lineno)
        psnr_f = _parse_float(psnr_s, "psnr", lineno)
        if None in (vi_f, acc_f, ssim_f, psnr_f):
            raise InvalidInputError(f"line {lineno}: missing required metric")
        rows.append(
            ResultRow(
                condition=cond,
                family=family,
                run=_parse_int(run, "run", lineno),
                seed=_parse_int(seed, "seed", lineno),
                v_info_nats=vi_f,
                split=split,
                auc=_parse_float(auc_s, "auc", lineno),
                accuracy=acc_f,
                ssim=ssim_f,
                psnr=psnr_f,
                wall_time_s=_parse_float(wall, "wall_time_s", lineno),
            )
        )
    if not rows:
        raise InvalidInputError("results file has no data rows")
    counts = {}
    for row in rows:
        key = (row.condition, row.family)
        counts[key] = counts.get(key, 0) + 1
    runs = max(counts.values())
    return ExperimentResult(rows, aggregate_rows(rows, runs), runs)


def load_results(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return parse_results_csv(fh.read())


def _nice(value):
    return f"{value:.6g}"


def _svg_plot(title, x_labels, series):
    """One metric against grid position, a polyline per condition.

    series: list of (name, means, stds) with one value per x label;
    non-finite points are dropped from the polyline.
    """
    width, height = 640, 420
    left, right, top, bottom = 70, 20, 46, 78
    plot_w = width - left - right
    plot_h = height - top - bottom

    finite = []
    for _, means, stds in series:
        for m, s in zip(means, stds):
            if m is not None and np.isfinite(m):
                spread = s if (s is not None and np.isfinite(s)) else 0.0
                finite.extend([m - spread, m + spread])
    if finite:
        lo, hi = min(finite), max(finite)
    else:
        lo, hi = 0.0, 1.0
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad

    n = len(x_labels)

    def x_pos(i):
        if n == 1:
            return left + plot_w / 2.0
        return left + plot_w * i / (n - 1)

    def y_pos(v):
        return top + plot_h * (1.0 - (v - lo) / (hi - lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="15">{title}</text>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="black"/>',
    ]
    for tick in np.linspace(lo, hi, 5):
        y = y_pos(tick)
        parts.append(
            f'<line x1="{left - 4}" y1="{y:.1f}" x2="{left}" y2="{y:.1f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{left - 8}" y="{y + 4:.1f}" text-anchor="end">{_nice(tick)}</text>'
        )
    for i, label in enumerate(x_labels):
        x = x_pos(i)
        y = top + plot_h
        parts.append(
            f'<line x1="{x:.1f}" y1="{y}" x2="{x:.1f}" y2="{y + 4}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{x:.1f}" y="{y + 18}" text-anchor="middle">{label}</text>'
        )

    for si, (name, means, stds) in enumerate(series):
        color = _CONDITION_COLORS.get(name, "#666666")
        points = []
        for i, (m, s) in enumerate(zip(means, stds)):
            if m is None or not np.isfinite(m):
                continue
            x, y = x_pos(i), y_pos(m)
            points.append(f"{x:.1f},{y:.1f}")
            if s is not None and np.isfinite(s) and s > 0:
                y_hi, y_lo = y_pos(m + s), y_pos(m - s)
                parts.append(
                    f'<line x1="{x:.1f}" y1="{y_hi:.1f}" x2="{x:.1f}" y2="{y_lo:.1f}" '
                    f'stroke="{color}"/>'
                )
                for yy in (y_hi, y_lo):
                    parts.append(
                        f'<line x1="{x - 4:.1f}" y1="{yy:.1f}" x2="{x + 4:.1f}" y2="{yy:.1f}" '
                        f'stroke="{color}"/>'
                    )
            parts.append(
                f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3" fill="{color}"/>'
            )
        if len(points) > 1:
            parts.append(
                f'<polyline points="{" ".join(points)}" fill="none" '
                f'stroke="{color}" stroke-width="1.5"/>'
            )
        lx = left + 10 + si * 150
        ly = height - 16
        parts.append(
            f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(f'<text x="{lx + 28}" y="{ly}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def metric_plot_svg(result, metric):
    families = result.families()
    series = []
    for condition in result.conditions():
        by_family = {
            a.family: a for a in result.aggregates if a.condition == condition
        }
        means = [by_family[f].means[metric] for f in families]
        stds = [by_family[f].stds[metric] for f in families]
        series.append((condition, means, stds))
    return _svg_plot(f"{metric} by observer capacity", families, series)


def _atomic_write(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_report(result, out_dir):
    """Emit every table and plot for one experiment; returns the paths.

    All content is rendered before anything is written, so a bad result
    cannot leave a half-finished report directory behind.
    """
    if not result.rows:
        raise InvalidInputError("refusing to report an empty result")
    files = {
        "results.csv": results_csv_text(result),
        "summary.csv": summary_csv_text(result),
        "vinfo_vs_metric.csv": fits_csv_text(result),
    }
    for metric in _METRICS:
        if all(row_value is None for row_value in _metric_column(result, metric)):
            continue
        files[f"{metric}_vs_capacity.svg"] = metric_plot_svg(result, metric)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, text in files.items():
        path = os.path.join(out_dir, name)
        _atomic_write(path, text)
        paths.append(path)
    return paths


def _metric_column(result, metric):
    return [getattr(row, metric) for row in result.rows]
