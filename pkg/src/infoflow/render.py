"""Static SVG figures: gapped histograms, seriated heatmaps, information flows.

Output is plain SVG 1.1 text with every coordinate printed to 6 decimals and
no timestamps, so identical inputs give byte-identical files. Heatmap cells
carry ``data-row``/``data-col`` attributes so figures can be checked
programmatically.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from .dcg import UltrametricTree, composition_at
from .errors import RenderError
from .flow import InformationFlow
from .mechanics import CouplingGeometry
from .renorm import PossiblyGappedHistogram

# light-to-dark sequential ramp for digital codes 0..9
CODE_RAMP = (
    "#f7fbff", "#deebf7", "#c6dbef", "#9ecae1", "#6baed6",
    "#4292c6", "#2171b5", "#08519c", "#08306b", "#041a3d",
)
# qualitative set for response clusters; the first two follow the red/black convention
LABEL_SET = (
    "#d62728", "#222222", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd",
    "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f", "#aec7e8",
)


@dataclass(frozen=True)
class Palette:
    code_colors: tuple[str, ...] = CODE_RAMP
    label_colors: tuple[str, ...] = LABEL_SET

    def code(self, value: float, vmax: float = 9.0) -> str:
        if vmax <= 0:
            return self.code_colors[0]
        k = int(round(float(value) / vmax * (len(self.code_colors) - 1)))
        return self.code_colors[min(max(k, 0), len(self.code_colors) - 1)]

    def label(self, i: int) -> str:
        if i >= len(self.label_colors):
            raise RenderError(f"palette has {len(self.label_colors)} label colors, need at least {i + 1}")
        return self.label_colors[i]


def _f(v: float) -> str:
    return f"{float(v):.6f}"


def _attrs(attrs) -> str:
    # python keywords take a trailing underscore (class_); other underscores become dashes
    return "".join(f" {k.rstrip('_').replace('_', '-')}={quoteattr(str(v))}" for k, v in attrs.items())


@dataclass
class _Svg:
    width: float
    height: float
    parts: list[str] = field(default_factory=list)

    def rect(self, x, y, w, h, fill, stroke="none", **attrs):
        extra = _attrs(attrs)
        self.parts.append(
            f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" '
            f'fill="{fill}" stroke="{stroke}"{extra}/>'
        )

    def line(self, x1, y1, x2, y2, stroke="#000000", width=1.0):
        self.parts.append(
            f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
            f'stroke="{stroke}" stroke-width="{_f(width)}"/>'
        )

    def text(self, x, y, s, size=10, anchor="start", **attrs):
        extra = _attrs(attrs)
        self.parts.append(
            f'<text x="{_f(x)}" y="{_f(y)}" font-size="{_f(size)}" font-family="sans-serif" '
            f'text-anchor="{anchor}"{extra}>{escape(str(s))}</text>'
        )

    def open_group(self, **attrs):
        extra = _attrs(attrs)
        self.parts.append(f"<g{extra}>")

    def close_group(self):
        self.parts.append("</g>")

    def render(self) -> str:
        head = (
            '<?xml version="1.0" encoding="UTF-8" standalone="yes"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_f(self.width)}" '
            f'height="{_f(self.height)}" viewBox="0 0 {_f(self.width)} {_f(self.height)}">\n'
        )
        return head + "\n".join(self.parts) + "\n</svg>\n"

    def write(self, out) -> Path:
        path = Path(out)
        path.write_text(self.render(), encoding="utf-8")
        return path


def render_histogram(
    hist: PossiblyGappedHistogram,
    group_counts=None,
    out=None,
    title: str = "",
    palette: Palette = Palette(),
) -> str:
    """Stacked bars over each bin's data extent; gaps shown as hatched empty spans.

    ``group_counts`` is a (bins x groups) array whose rows must sum to the bin
    counts. Returns the SVG text and writes it to ``out`` when given.
    """
    counts = hist.counts
    if group_counts is not None:
        gc = np.asarray(group_counts, dtype=int)
        if gc.ndim != 2 or gc.shape[0] != hist.k or not np.array_equal(gc.sum(axis=1), counts):
            raise RenderError("group_counts rows must sum to the histogram bin counts")
    else:
        gc = counts[:, None]
    w, h, pad = 480.0, 240.0, 30.0
    svg = _Svg(w, h)
    lo, hi = hist.bins[0].lo, hist.bins[-1].hi
    span = hi - lo if hi > lo else 1.0
    plot_w, plot_h = w - 2 * pad, h - 2 * pad
    min_w = plot_w / 200.0

    def sx(v):
        return pad + (v - lo) / span * plot_w if hi > lo else pad + plot_w / 2.0

    top = max(int(counts.max()), 1)
    if title:
        svg.text(w / 2, pad * 0.6, title, size=12, anchor="middle")
    for g in hist.gaps:
        x0, x1 = sx(g[0]), sx(g[1])
        svg.rect(x0, pad, x1 - x0, plot_h, "#ffffff", stroke="#bbbbbb", stroke_dasharray="3,3", class_="gap")
    for b, row in zip(hist.bins, gc):
        x0, x1 = sx(b.lo), sx(b.hi)
        if x1 - x0 < min_w:
            x0, x1 = (x0 + x1 - min_w) / 2.0, (x0 + x1 + min_w) / 2.0
        y = pad + plot_h
        for gi, c in enumerate(row):
            bh = c / top * plot_h
            y -= bh
            fill = palette.label(gi) if group_counts is not None else palette.code_colors[5]
            svg.rect(x0, y, x1 - x0, bh, fill, stroke="#000000", class_="bar")
    svg.line(pad, pad + plot_h, pad + plot_w, pad + plot_h)
    svg.text(pad, h - 8, f"{lo:.4g}", anchor="start")
    svg.text(pad + plot_w, h - 8, f"{hi:.4g}", anchor="end")
    if out is not None:
        svg.write(out)
    return svg.render()


def _tree_margin(svg: _Svg, tree: UltrametricTree, x0: float, y0: float, cell: float, depth: float, vertical: bool):
    """Nested brackets: one band per level, coarse levels farther from the heatmap."""
    levels = len(tree.level_labels)
    if levels <= 1:
        return
    band = depth / (levels - 1)
    for j in range(1, levels):
        comp = tree.level(j)
        pos = 0
        for members in comp.clusters():
            a, b = pos * cell, (pos + len(members)) * cell
            off = depth - j * band
            if vertical:
                svg.line(x0 + off, y0 + a + 1, x0 + off, y0 + b - 1, stroke="#555555")
                svg.line(x0 + off, y0 + a + 1, x0 + off + band * 0.5, y0 + a + 1, stroke="#555555")
                svg.line(x0 + off, y0 + b - 1, x0 + off + band * 0.5, y0 + b - 1, stroke="#555555")
            else:
                svg.line(x0 + a + 1, y0 + off, x0 + b - 1, y0 + off, stroke="#555555")
                svg.line(x0 + a + 1, y0 + off, x0 + a + 1, y0 + off + band * 0.5, stroke="#555555")
                svg.line(x0 + b - 1, y0 + off, x0 + b - 1, y0 + off + band * 0.5, stroke="#555555")
            pos += len(members)


def _boundaries(tree: UltrametricTree, k: int) -> list[int]:
    sizes = [len(c) for c in composition_at(tree, k).clusters()]
    return list(np.cumsum(sizes)[:-1])


def _heatmap(svg: _Svg, geom: CouplingGeometry, x0, y0, cw, ch, palette: Palette, vmax: float):
    for i in range(geom.matrix.shape[0]):
        for j in range(geom.matrix.shape[1]):
            v = geom.matrix[i, j]
            svg.rect(x0 + j * cw, y0 + i * ch, cw, ch, palette.code(v, vmax), data_row=i, data_col=j, data_value=_f(v))


def render_geometry(
    geom: CouplingGeometry,
    row_k: int,
    col_k: int,
    row_labels: Mapping | None = None,
    out=None,
    title: str = "",
    palette: Palette = Palette(),
    extra_row_levels: Sequence[int] = (),
) -> str:
    """Seriated heatmap with both marginal trees and cluster boundary lines.

    ``row_labels`` maps row id to a response cluster id and adds a colored
    strip. Boundaries are drawn at ``row_k``/``col_k`` and at any
    ``extra_row_levels``.
    """
    n, m = geom.matrix.shape
    cw = max(4.0, min(24.0, 480.0 / m))
    ch = max(1.5, min(24.0, 540.0 / n))
    left, top, strip = 90.0, 80.0, 10.0
    width = left + strip + 4 + m * cw + 20
    height = top + n * ch + 30
    svg = _Svg(width, height)
    vmax = max(9.0, float(np.max(geom.matrix)))
    hx = left + strip + 4
    if title:
        svg.text(width / 2, 14, title, size=12, anchor="middle")
    _tree_margin(svg, geom.row_tree, 4.0, top, ch, left - 8.0, vertical=True)
    _tree_margin(svg, geom.col_tree, hx, 22.0, cw, top - 26.0, vertical=False)
    if row_labels is not None:
        for i, rid in enumerate(geom.row_tree.leaves):
            svg.rect(left, top + i * ch, strip, ch, palette.label(int(row_labels[rid])), class_="label-strip")
    _heatmap(svg, geom, hx, top, cw, ch, palette, vmax)
    for k, width_ in [(row_k, 1.5)] + [(k, 0.75) for k in extra_row_levels]:
        for b in _boundaries(geom.row_tree, k):
            svg.line(hx, top + b * ch, hx + m * cw, top + b * ch, stroke="#ff00ff", width=width_)
    for b in _boundaries(geom.col_tree, col_k):
        svg.line(hx + b * cw, top, hx + b * cw, top + n * ch, stroke="#ff00ff", width=1.5)
    rk = composition_at(geom.row_tree, row_k).k
    ck = composition_at(geom.col_tree, col_k).k
    note = f"row clusters: {rk}; column clusters: {ck}"
    if extra_row_levels:
        note += "; also " + ", ".join(str(composition_at(geom.row_tree, k).k) for k in extra_row_levels)
    svg.text(hx, height - 10, note, size=9)
    if out is not None:
        svg.write(out)
    return svg.render()


def render_flow(flow: InformationFlow, out=None, title: str = "", palette: Palette = Palette()) -> str:
    """Response strip on the left, then one annotated heatmap per stage.

    Each stage lists entropy and p-value per covariate cluster and the ids of
    subjects the stage's majority vote gets wrong.
    """
    if not flow.stages:
        raise RenderError("flow has no stages")
    resp = flow.response_comp
    truth = flow.truth
    n = resp.n
    ch = max(1.5, min(16.0, 480.0 / n))
    top, panel_gap, strip = 60.0, 150.0, 14.0
    stage_widths = []
    for st in flow.stages:
        m = st.geometry.matrix.shape[1]
        stage_widths.append(m * max(4.0, min(16.0, 240.0 / m)))
    width = 20 + strip + 40 + sum(w + panel_gap for w in stage_widths)
    height = top + n * ch + 40
    svg = _Svg(width, height)
    if title:
        svg.text(width / 2, 16, title, size=12, anchor="middle")

    svg.open_group(class_="response")
    svg.text(20, top - 8, f"response ({resp.k})", size=9)
    for i, s in enumerate(resp.leaves):
        svg.rect(20, top + i * ch, strip, ch, palette.label(truth[s]))
    svg.close_group()

    x = 20 + strip + 40
    for idx, (st, sw) in enumerate(zip(flow.stages, stage_widths), start=1):
        geom = st.geometry
        m = geom.matrix.shape[1]
        cw = sw / m
        svg.open_group(class_="stage", data_stage=idx)
        name = ",".join(str(v) for v in st.feature_group.members)
        svg.text(x, top - 22, f"stage {idx}: group {st.feature_group.group_id}", size=9)
        svg.text(x, top - 10, f"w={flow.stage_weights[idx - 1]:.3f} [{name}]", size=7)
        # stage heatmap keeps the geometry's own row order; a label strip shows each row's response cluster
        for i, rid in enumerate(geom.row_tree.leaves):
            svg.rect(x - 8, top + i * ch, 6, ch, palette.label(truth[rid]))
        _heatmap(svg, geom, x, top, cw, ch, palette, max(9.0, float(np.max(geom.matrix))))
        comp = st.report.covariate_comp
        pos = 0
        wrong = []
        for stat, members in zip(st.report.per_cluster, comp.clusters()):
            y0 = top + pos * ch
            pos += len(members)
            svg.line(x, top + pos * ch, x + sw, top + pos * ch, stroke="#ff00ff", width=1.0)
            p = "na" if stat.p_value is None else f"{stat.p_value:.3f}"
            svg.text(x + sw + 4, y0 + min(len(members) * ch, 12) - 1, f"C{stat.cluster + 1}: H={stat.cond_entropy:.2f} (p={p})", size=7, class_="cluster-note")
            wrong.extend(s for s in members if truth[s] != stat.majority_label)
        if wrong:
            svg.text(x + sw + 4, top + n * ch + 14, "misclassified: " + " ".join(str(s) for s in wrong[:40]) + (" ..." if len(wrong) > 40 else ""), size=6, class_="misclassified")
        svg.close_group()
        x += sw + panel_gap
    svg.text(20, height - 8, f"flow error rate {flow.error_rate:.3f}", size=9)
    if out is not None:
        svg.write(out)
    return svg.render()
