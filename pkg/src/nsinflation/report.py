"""Norm reports, deterministic SVG plots and summary text."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

__all__ = [
    "VOCABULARY",
    "REPORT_COLUMNS",
    "PLOT_KINDS",
    "ReportRow",
    "Trace",
    "NormReport",
    "write_report_csv",
    "read_report_csv",
    "emit_plot",
    "summary_text",
    "atomic_write_text",
    "rows_from_quantities",
]

VOCABULARY = (
    "force_norm",
    "u1_linfty",
    "u2_terminal",
    "u211_terminal",
    "w_linfty",
    "u_terminal",
    "u_linfty",
    "contraction_ratio",
)
REPORT_COLUMNS = ("experiment_id", "N", "quantity_name", "norm_descriptor", "value", "runtime_seconds", "flag")
PLOT_KINDS = ("norm_vs_N", "norm_vs_t", "delta_scaling")


def atomic_write_text(path: str | Path, text: str) -> Path:
    """Write through a temporary sibling and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    return path


@dataclass(frozen=True)
class ReportRow:
    """One measured quantity for one ``N``.

    ``flag`` is empty for a converged solve and ``diverged`` otherwise;
    ``runtime_seconds`` is ``None`` unless timings were requested.
    """

    experiment_id: str
    N: int
    quantity_name: str
    norm_descriptor: str
    value: float
    runtime_seconds: float | None = None
    flag: str = ""

    def __post_init__(self) -> None:
        if self.quantity_name not in VOCABULARY:
            raise ValueError(f"quantity {self.quantity_name!r} not in the report vocabulary")
        if self.flag not in ("", "diverged", "reduced", "diverged;reduced"):
            raise ValueError(f"unknown flag {self.flag!r}")

    def as_strings(self) -> list[str]:
        rt = "" if self.runtime_seconds is None else repr(float(self.runtime_seconds))
        return [self.experiment_id, str(self.N), self.quantity_name, self.norm_descriptor,
                repr(float(self.value)), rt, self.flag]


@dataclass(frozen=True)
class Trace:
    """A plotted series outside the per-``N`` rows (``norm_vs_t`` or ``delta_scaling``)."""

    kind: str
    name: str
    x: tuple
    y: tuple

    def __post_init__(self) -> None:
        if self.kind not in PLOT_KINDS[1:]:
            raise ValueError(f"unknown trace kind {self.kind!r}")
        if len(self.x) != len(self.y) or not self.x:
            raise ValueError("trace needs matching, non-empty x and y")


@dataclass(frozen=True)
class NormReport:
    rows: tuple = ()
    traces: tuple = field(default=())

    def quantities(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.quantity_name not in seen:
                seen.append(r.quantity_name)
        return seen

    def column(self, quantity: str, experiment_id: str | None = None) -> list[tuple[int, float]]:
        """``[(N, value)]`` for one quantity, sorted by ``N``."""
        out = [(r.N, r.value) for r in self.rows
               if r.quantity_name == quantity and (experiment_id is None or r.experiment_id == experiment_id)]
        return sorted(out)

    def value(self, quantity: str, N: int) -> float:
        for r in self.rows:
            if r.quantity_name == quantity and r.N == N:
                return r.value
        raise KeyError((quantity, N))


def write_report_csv(report: NormReport, path: str | Path | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for row in report.rows:
        w.writerow(row.as_strings())
    text = buf.getvalue()
    if path is not None:
        atomic_write_text(path, text)
    return text


def read_report_csv(text: str) -> NormReport:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != REPORT_COLUMNS:
        raise ValueError(f"unexpected header {header}")
    rows = []
    for rec in reader:
        eid, n, name, desc, value, rt, flag = rec
        rows.append(ReportRow(eid, int(n), name, desc, float(value), float(rt) if rt else None, flag))
    return NormReport(tuple(rows))


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------

_WIDTH, _HEIGHT = 640, 400
_LEFT, _RIGHT, _TOP, _BOTTOM = 80, 170, 30, 50
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _tick_label(v: float, log: bool) -> str:
    if log:
        return f"1e{int(round(v))}"
    return f"{v:g}"


def _axis_range(values: Sequence[float]) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        pad = 0.5 if lo == 0 else abs(lo) * 0.1
        return lo - pad, hi + pad
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _ticks(lo: float, hi: float, log: bool) -> list[float]:
    if log:
        a, b = math.ceil(lo), math.floor(hi)
        if b < a:
            return [round(0.5 * (lo + hi), 6)]
        step = max(1, (b - a) // 6 + 1)
        return [float(k) for k in range(a, b + 1, step)]
    raw = (hi - lo) / 5
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=mag)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-12 * step:
        out.append(round(v, 12))
        v += step
    return out


def _svg(series: list[tuple[str, list[float], list[float]]], x_label: str, y_label: str,
         title: str, log_x: bool, log_y: bool) -> str:
    def tx(v: float) -> float:
        return math.log10(v) if log_x else v

    def ty(v: float) -> float:
        return math.log10(v) if log_y else v

    pts = []
    for name, xs, ys in series:
        keep = [(tx(x), ty(y)) for x, y in zip(xs, ys)
                if math.isfinite(x) and math.isfinite(y) and (x > 0 or not log_x) and (y > 0 or not log_y)]
        pts.append((name, keep))
    allx = [p[0] for _, ps in pts for p in ps] or [0.0]
    ally = [p[1] for _, ps in pts for p in ps] or [0.0]
    x0, x1 = _axis_range(allx)
    y0, y1 = _axis_range(ally)
    pw, ph = _WIDTH - _LEFT - _RIGHT, _HEIGHT - _TOP - _BOTTOM

    def px(v: float) -> float:
        return _LEFT + (v - x0) / (x1 - x0) * pw

    def py(v: float) -> float:
        return _TOP + (y1 - v) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_WIDTH // 2}" y="18" text-anchor="middle" font-size="13">{_escape(title)}</text>',
        f'<rect x="{_LEFT}" y="{_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for v in _ticks(x0, x1, log_x):
        X = _fmt(px(v))
        out.append(f'<line x1="{X}" y1="{_TOP + ph}" x2="{X}" y2="{_TOP + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X}" y="{_TOP + ph + 18}" text-anchor="middle">{_tick_label(v, log_x)}</text>')
    for v in _ticks(y0, y1, log_y):
        Y = _fmt(py(v))
        out.append(f'<line x1="{_LEFT - 5}" y1="{Y}" x2="{_LEFT}" y2="{Y}" stroke="black"/>')
        out.append(f'<text x="{_LEFT - 8}" y="{Y}" text-anchor="end" dominant-baseline="middle">'
                   f'{_tick_label(v, log_y)}</text>')
    out.append(f'<text x="{_LEFT + pw // 2}" y="{_HEIGHT - 12}" text-anchor="middle">{_escape(x_label)}</text>')
    out.append(f'<text x="16" y="{_TOP + ph // 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {_TOP + ph // 2})">{_escape(y_label)}</text>')
    for k, (name, ps) in enumerate(pts):
        color = _COLORS[k % len(_COLORS)]
        coords = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in ps)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for x, y in ps:
            out.append(f'<circle cx="{_fmt(px(x))}" cy="{_fmt(py(y))}" r="2.5" fill="{color}"/>')
        ly = _TOP + 10 + 16 * k
        lx = _LEFT + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 18}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 24}" y="{ly}" dominant-baseline="middle">{_escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def emit_plot(report: NormReport, kind: str, path: str | Path | None = None) -> str:
    """Deterministic SVG for one plot kind.

    ``norm_vs_N`` draws one series per quantity present in the rows (log
    ``y``); ``norm_vs_t`` and ``delta_scaling`` draw the report's traces of
    that kind on log-log axes.
    """
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    if kind == "norm_vs_N":
        names = report.quantities()
        if not names:
            raise ValueError("report has no rows to plot")
        series = []
        for name in names:
            col = report.column(name)
            series.append((name, [float(n) for n, _ in col], [v for _, v in col]))
        svg = _svg(series, "N", "norm", "norms against N", False, True)
    else:
        traces = [t for t in report.traces if t.kind == kind]
        if not traces:
            raise ValueError(f"report has no {kind} traces")
        series = [(t.name, list(t.x), list(t.y)) for t in traces]
        x_label = "t" if kind == "norm_vs_t" else "delta"
        title = "norms against time" if kind == "norm_vs_t" else "norms against delta"
        svg = _svg(series, x_label, "norm", title, True, True)
    if path is not None:
        atomic_write_text(path, svg)
    return svg


# ---------------------------------------------------------------------------
# summary
# ---------------------------------------------------------------------------


def summary_text(report: NormReport, band: float = 2.0) -> str:
    """Plain-text verdict on the inflation signature.

    The signature holds when the force norm strictly decreases in ``N``, the
    terminal norm stays within a factor ``band`` across ``N``, and the
    ratio terminal norm / force norm increases.
    """
    force = report.column("force_norm")
    term = report.column("u_terminal")
    lines = ["inflation signature"]
    if not force or not term:
        lines.append("  not evaluated: force_norm or u_terminal rows missing")
        return "\n".join(lines) + "\n"
    fv = [v for _, v in force]
    tv = [v for _, v in term]
    decreasing = all(b < a for a, b in zip(fv, fv[1:]))
    spread = max(tv) / min(tv) if min(tv) > 0 else math.inf
    ratios = [t / f for (_, t), (_, f) in zip(term, force)]
    increasing = all(b > a for a, b in zip(ratios, ratios[1:]))
    held = decreasing and spread <= band and increasing
    lines += [
        f"  N values: {' '.join(str(n) for n, _ in force)}",
        f"  force norm strictly decreasing: {'yes' if decreasing else 'no'}",
        f"  terminal norm min {min(tv):.6g}, max {max(tv):.6g}, spread {spread:.4g} (band {band:g})",
        f"  terminal/force ratio increasing: {'yes' if increasing else 'no'}",
        f"  diverged solves: {len({r.N for r in report.rows if 'diverged' in r.flag})}",
        f"  verdict: {'held' if held else 'not held'}",
    ]
    return "\n".join(lines) + "\n"


def rows_from_quantities(
    experiment_id: str,
    N: int,
    quantities: dict,
    runtime: float | None,
    flag: str,
) -> list[ReportRow]:
    """Rows in vocabulary order from ``name -> (descriptor, value)``."""
    return [ReportRow(experiment_id, N, name, quantities[name][0], float(quantities[name][1]), runtime, flag)
            for name in VOCABULARY]
