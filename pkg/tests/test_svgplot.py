"""The SVG renderer: tick selection, geometry, and document structure."""

import xml.etree.ElementTree as ET

import pytest

from permamba.errors import ConfigError
from permamba.svgplot import Series, nice_ticks, render_figure


def parse(svg: str) -> ET.Element:
    return ET.fromstring(svg)


def tags(root: ET.Element, name: str) -> list[ET.Element]:
    return [el for el in root.iter() if el.tag.split("}")[-1] == name]


class TestNiceTicks:
    def test_round_decade_range(self):
        assert nice_ticks(0.0, 10.0) == [0.0, 2.0, 4.0, 6.0, 8.0, 10.0]

    def test_sub_unit_range(self):
        ticks = nice_ticks(0.37, 0.94)
        assert ticks == pytest.approx([0.4, 0.5, 0.6, 0.7, 0.8, 0.9])

    def test_ticks_stay_inside_range(self):
        ticks = nice_ticks(-3.3, 7.7)
        assert all(-3.3 <= t <= 7.7 for t in ticks)
        assert ticks == sorted(ticks)
        assert len(ticks) >= 3

    def test_degenerate_range_padded(self):
        ticks = nice_ticks(5.0, 5.0)
        assert min(ticks) < 5.0 < max(ticks)

    def test_swapped_bounds(self):
        assert nice_ticks(10.0, 0.0) == nice_ticks(0.0, 10.0)

    def test_non_finite_rejected(self):
        with pytest.raises(ConfigError, match="finite"):
            nice_ticks(0.0, float("inf"))


class TestRenderFigure:
    def test_well_formed_document(self):
        svg = render_figure([Series(((1.0, 2.0), (3.0, 4.0)))], title="demo")
        root = parse(svg)
        assert root.get("width") == "720"
        assert len(tags(root, "circle")) == 2

    def test_marker_and_line_modes(self):
        line_only = Series(((0.0, 0.0), (1.0, 1.0), (2.0, 4.0)),
                           draw_line=True, draw_markers=False)
        dots = Series(((0.5, 0.5), (1.5, 2.5)))
        root = parse(render_figure([line_only, dots]))
        assert len(tags(root, "polyline")) == 1
        assert len(tags(root, "circle")) == 2

    def test_orientation_of_axes(self):
        root = parse(render_figure([Series(((0.0, 0.0), (10.0, 10.0)))]))
        low, high = tags(root, "circle")
        assert float(high.get("cx")) > float(low.get("cx"))
        assert float(high.get("cy")) < float(low.get("cy"))

    def test_identity_line_present_when_requested(self):
        points = Series(((1.0, 2.0), (8.0, 7.0)))
        with_line = render_figure([points], identity=True)
        without = render_figure([points])
        assert 'class="identity"' in with_line
        assert 'class="identity"' not in without

    def test_axis_labels_and_title_rendered(self):
        svg = render_figure([Series(((0.0, 1.0), (1.0, 2.0)))],
                            title="Run summary", x_label="true (mD)",
                            y_label="predicted (mD)")
        texts = [el.text for el in tags(parse(svg), "text")]
        assert "Run summary" in texts
        assert "true (mD)" in texts
        assert "predicted (mD)" in texts

    def test_legend_only_for_labeled_series(self):
        labeled = Series(((0.0, 1.0), (1.0, 2.0)), label="vim", draw_line=True)
        bare = Series(((0.0, 2.0), (1.0, 3.0)))
        texts = [el.text for el in tags(parse(render_figure([labeled, bare])), "text")]
        assert "vim" in texts

    def test_log_axes_use_decade_labels(self):
        points = Series(((10.0, 100.0), (1000.0, 1.0e6)))
        svg = render_figure([points], log_x=True, log_y=True)
        texts = [el.text for el in tags(parse(svg), "text")]
        assert "1e1" in texts and "1e3" in texts
        assert "1e2" in texts and "1e6" in texts

    def test_log_axis_rejects_nonpositive(self):
        with pytest.raises(ConfigError, match="positive"):
            render_figure([Series(((0.0, 1.0), (1.0, 2.0)))], log_x=True)

    def test_explicit_categorical_ticks(self):
        svg = render_figure([Series(((0.0, 0.9), (1.0, 0.8)))],
                            x_ticks=[(0.0, "all"), (1.0, "x")])
        texts = [el.text for el in tags(parse(svg), "text")]
        assert "all" in texts and "x" in texts

    def test_markup_in_labels_escaped(self):
        svg = render_figure([Series(((0.0, 1.0), (1.0, 2.0)))],
                            title="a < b & c")
        assert "a &lt; b &amp; c" in svg
        parse(svg)

    def test_deterministic_output(self):
        series = [Series(((0.123, 4.567), (8.9, 1.23)), label="s",
                         draw_line=True)]
        first = render_figure(series, title="t", identity=True)
        second = render_figure(series, title="t", identity=True)
        assert first == second

    def test_empty_input_rejected(self):
        with pytest.raises(ConfigError, match="no points"):
            render_figure([Series(())])

    def test_non_finite_rejected(self):
        with pytest.raises(ConfigError, match="non-finite"):
            render_figure([Series(((0.0, float("nan")),))])

    def test_single_point_renders(self):
        root = parse(render_figure([Series(((3.0, 7.0),))]))
        assert len(tags(root, "circle")) == 1
