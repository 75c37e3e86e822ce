"""Tests for the SVG before/after projections."""
import xml.etree.ElementTree as ET

import pytest

import data
import plots

SVG_NS = "{http://www.w3.org/2000/svg}"


def _pairs(n=2, points=16):
    before = data.gen_shapes(2 * n, points, seed=0).events[:n]
    after = data.gen_shapes(2 * n, points, seed=0, noisy=True).events[:n]
    return before, after


def test_projection_svg_is_well_formed_and_complete():
    before, after = _pairs(2, 16)
    svg = plots.projection_svg(before, after, "xz", title="clean -> noisy <test>",
                               provenance={"seed": 1, "config_hash": "abc"})
    root = ET.fromstring(svg.encode("utf-8"))
    assert len(root.findall(f".//{SVG_NS}circle")) == 4 * 16
    assert 'class="before"' in svg and 'class="after"' in svg
    assert "&lt;test&gt;" in svg
    assert "config_hash=abc seed=1" in svg
    assert root.get("height") == str(2 * plots.MARGIN + 2 * (plots.PANEL_SIZE + plots.MARGIN))


def test_points_stay_inside_their_panels():
    before, after = _pairs(1, 64)
    root = ET.fromstring(plots.projection_svg(before, after, "yz").encode("utf-8"))
    for group in root.iter(f"{SVG_NS}g"):
        x0 = plots.MARGIN if group.get("class") == "before" else 2 * plots.MARGIN + plots.PANEL_SIZE
        for c in group.iter(f"{SVG_NS}circle"):
            assert x0 <= float(c.get("cx")) <= x0 + plots.PANEL_SIZE


def test_projection_svg_argument_checks():
    before, after = _pairs(2)
    with pytest.raises(ValueError, match="matching"):
        plots.projection_svg(before, after[:1])
    with pytest.raises(ValueError, match="nothing"):
        plots.projection_svg([], [])
    with pytest.raises(ValueError, match="projection"):
        plots.projection_svg(before, after, "xy")


def test_write_projections(tmp_path):
    before, after = _pairs(1)
    paths = plots.write_projections(tmp_path, before, after, title="t")
    assert [p.name for p in paths] == ["projection_xz.svg", "projection_yz.svg"]
    assert paths[0].read_text() != paths[1].read_text()
