import xml.etree.ElementTree as ET
import numpy as np
import pytest

from infoflow.dcg import FeatureGroup, build_ultrametric_tree
from infoflow.errors import RenderError
from infoflow.flow import serial_flow
from infoflow.mechanics import data_mechanics
from infoflow.render import Palette, render_flow, render_geometry, render_histogram
from infoflow.renorm import build_gapped_histogram

SVG = "{http://www.w3.org/2000/svg}"


def planted():
    x = np.block([[np.full((5, 3), 1), np.full((5, 4), 8)], [np.full((4, 3), 6), np.full((4, 4), 0)]])
    rng = np.random.default_rng(2)
    return x[np.ix_(rng.permutation(9), rng.permutation(7))]


def cells(svg_text):
    root = ET.fromstring(svg_text)
    return [e for e in root.iter(f"{SVG}rect") if "data-value" in e.attrib]


def test_histogram_svg(tmp_path):
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.uniform(0, 1, 200), rng.uniform(5, 6, 100)])
    hist = build_gapped_histogram(x)
    text = render_histogram(hist, out=tmp_path / "h.svg", title="two blocks")
    assert ET.fromstring(text).tag == f"{SVG}svg"
    assert (tmp_path / "h.svg").read_text() == text
    groups = np.column_stack([hist.counts - 1, np.ones(hist.k, dtype=int)])
    ET.fromstring(render_histogram(hist, groups))
    with pytest.raises(RenderError):
        render_histogram(hist, groups + 1)


def test_geometry_svg_is_deterministic_and_faithful(tmp_path):
    geom = data_mechanics(planted())
    a = render_geometry(geom, 2, 2, out=tmp_path / "a.svg")
    render_geometry(data_mechanics(planted()), 2, 2, out=tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
    rects = cells(a)
    assert len(rects) == geom.matrix.size
    for e in rects:
        i, j = int(e.get("data-row")), int(e.get("data-col"))
        assert float(e.get("data-value")) == geom.matrix[i, j]
    # every planted block renders as one uniform color
    fills = {}
    for e in rects:
        fills.setdefault(float(e.get("data-value")), set()).add(e.get("fill"))
    assert all(len(f) == 1 for f in fills.values())
    assert len({next(iter(f)) for f in fills.values()}) == 4


def test_geometry_with_labels_and_extra_levels():
    geom = data_mechanics(planted())
    labels = {rid: int(rid) % 2 for rid in geom.row_ids}
    text = render_geometry(geom, 2, 2, row_labels=labels, extra_row_levels=(3,))
    root = ET.fromstring(text)
    strips = [e for e in root.iter(f"{SVG}rect") if e.get("class") == "label-strip"]
    assert len(strips) == 9


def test_flow_svg():
    x = planted()
    resp = (x[:, 0] > 3).astype(float)
    d = np.abs(resp[:, None] - resp[None, :])
    tree = build_ultrametric_tree(d, scale_count=1)
    geom = data_mechanics(x)
    flow = serial_flow(tree, 2, [(FeatureGroup(("a",), 1, 0.0), geom, 2)], n_sims=10)
    text = render_flow(flow, title="flow")
    ET.fromstring(text)
    assert "p=" in text


def test_palette_limits():
    p = Palette()
    assert p.code(0) != p.code(9)
    with pytest.raises(RenderError):
        p.label(len(p.label_colors))
