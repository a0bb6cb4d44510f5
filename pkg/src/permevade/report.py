"""CSV tables and static SVG bar charts of fooling rates.

Charts copy numbers straight from report fields: each bar carries the
exact value in a ``data-value`` attribute and nothing is recomputed.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path
from xml.sax.saxutils import escape

AXIS_MAX = 100.0
PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c")

_LABEL_W, _PLOT_W, _BAR_H, _GAP, _TOP, _BOTTOM = 190, 520, 12, 14, 50, 60


def _groups(records):
    """Ordered ``{model: [(budget, value), ...]}`` keeping first-seen order."""
    out = {}
    for model, budget, value in records:
        out.setdefault(model, []).append((budget, value))
    return out


def render_bar_chart(title, records, accuracies=None) -> str:
    """Horizontal grouped bars: one group per model, one bar per budget.

    ``records`` is an iterable of ``(model, budget, value)``; values are
    percentages on a fixed 0-100 axis.
    """
    groups = _groups(records)
    budgets = sorted({b for rows in groups.values() for b, _ in rows})
    color = {b: PALETTE[i % len(PALETTE)] for i, b in enumerate(budgets)}
    group_h = len(budgets) * _BAR_H + _GAP
    height = _TOP + len(groups) * group_h + _BOTTOM
    width = _LABEL_W + _PLOT_W + 40
    x0 = _LABEL_W
    scale = _PLOT_W / AXIS_MAX
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" data-axis-max="{AXIS_MAX:g}" font-family="sans-serif" font-size="11">',
           f'<text x="{width / 2:g}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>']
    plot_bottom = _TOP + len(groups) * group_h
    for t in range(0, 101, 20):
        x = x0 + t * scale
        out.append(f'<line x1="{x:g}" y1="{_TOP - 6}" x2="{x:g}" y2="{plot_bottom}" stroke="#ddd"/>')
        out.append(f'<text x="{x:g}" y="{plot_bottom + 14}" text-anchor="middle">{t}</text>')
    out.append(f'<text x="{x0 + _PLOT_W / 2:g}" y="{plot_bottom + 32}" text-anchor="middle">Fooling rate (%)</text>')
    for g, (model, rows) in enumerate(groups.items()):
        y = _TOP + g * group_h
        name = escape(str(model))
        label = name
        if accuracies and model in accuracies:
            label += f" (acc {100 * accuracies[model]:.2f}%)"
        mid = y + len(budgets) * _BAR_H / 2
        out.append(f'<text x="{x0 - 8}" y="{mid + 4:g}" text-anchor="end">{label}</text>')
        for budget, value in rows:
            by = y + budgets.index(budget) * _BAR_H
            w = max(0.0, min(float(value), AXIS_MAX)) * scale
            out.append(f'<rect x="{x0}" y="{by}" width="{w:g}" height="{_BAR_H - 2}" fill="{color[budget]}" '
                       f'data-model="{name}" data-budget="{budget}" data-value="{float(value)!r}"/>')
            out.append(f'<text x="{x0 + w + 4:g}" y="{by + _BAR_H - 3}" font-size="9">{float(value):.2f}</text>')
    lx = x0
    for b in budgets:
        out.append(f'<rect x="{lx}" y="{height - 16}" width="10" height="10" fill="{color[b]}"/>')
        out.append(f'<text x="{lx + 14}" y="{height - 7}">budget {b}</text>')
        lx += 80
    out.append(f'<line x1="{x0}" y1="{_TOP - 6}" x2="{x0}" y2="{plot_bottom}" stroke="#333"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def reports_table(reports, accuracies=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model_id", "mode", "budget", "fooling_rate", "n_success", "n_samples", "baseline_accuracy"])
    for r in reports:
        acc = "" if not accuracies or r.model_id not in accuracies else repr(float(accuracies[r.model_id]))
        w.writerow([r.model_id, r.mode, r.budget, repr(float(r.fooling_rate)), r.n_success,
                    len(r.outcomes), acc])
    return buf.getvalue()


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def emit_report(reports, fmt: str, out_dir, accuracies=None) -> list:
    """Write ``fooling_rates.csv`` or one ``fooling_<mode>.svg`` per attack mode."""
    reports = list(reports)
    if not reports:
        raise ValueError("at least one report is required")
    out_dir = Path(out_dir)
    if fmt == "csv":
        return [_write(out_dir / "fooling_rates.csv", reports_table(reports, accuracies))]
    if fmt != "svg":
        raise ValueError(f"format must be 'csv' or 'svg', got {fmt!r}")
    paths = []
    for mode in dict.fromkeys(r.mode for r in reports):
        rows = [(r.model_id, r.budget, r.fooling_rate) for r in reports if r.mode == mode]
        svg = render_bar_chart(f"Fooling rate by {mode} per detector", rows, accuracies)
        paths.append(_write(out_dir / f"fooling_{mode}.svg", svg))
    return paths


def emit_defense_report(report, out_dir) -> list:
    """One chart per mode of the post-retraining fooling rates."""
    out_dir = Path(out_dir)
    paths = []
    for mode in dict.fromkeys(r.mode for r in report.records):
        recs = report.select(mode)
        acc = {r.model: r.acc_after for r in recs}
        rows = [(r.model, r.budget, r.fr_after) for r in recs]
        svg = render_bar_chart(f"Fooling rate by {mode} after adversarial retraining", rows, acc)
        paths.append(_write(out_dir / f"defense_{mode}.svg", svg))
    return paths
