import numpy as np

from breakeven.svg import Panel, Series, render_panel


def simple_panel(**over):
    base = dict(
        title="demo",
        x_label="step",
        y_label="value",
        series=[
            Series(label="a", xs=list(range(10)), ys=[float(i * i) for i in range(10)]),
            Series(label="b", xs=list(range(10)), ys=[float(i) for i in range(10)]),
        ],
    )
    base.update(over)
    return Panel(**base)


def test_deterministic_bytes():
    p = simple_panel()
    assert render_panel(p) == render_panel(p)


def test_no_timestamps_or_randomness():
    svg = render_panel(simple_panel())
    assert "date" not in svg.lower()
    assert svg.startswith("<svg ")
    assert svg.rstrip().endswith("</svg>")


def test_missing_values_split_polyline():
    ys = [1.0, 2.0, None, 4.0, 5.0]
    p = simple_panel(series=[Series(label="a", xs=list(range(5)), ys=ys)])
    svg = render_panel(p)
    assert svg.count("<polyline") == 2


def test_log_scale_clamps_nonpositive_with_footnote():
    p = simple_panel(
        series=[Series(label="a", xs=[0, 1, 2, 3], ys=[0.0, 0.1, 1.0, 10.0])], log_y=True
    )
    svg = render_panel(p)
    assert "clamped" in svg


def test_log_scale_all_nonpositive_falls_back():
    p = simple_panel(series=[Series(label="a", xs=[0, 1], ys=[-1.0, -2.0])], log_y=True)
    svg = render_panel(p)
    assert "log scale unavailable" in svg


def test_vlines_rendered_with_labels():
    p = simple_panel(vlines=[(5, "acc>0.6")])
    svg = render_panel(p)
    assert "stroke-dasharray" in svg
    assert "acc&gt;0.6" in svg


def test_escaping():
    p = simple_panel(title='<&">')
    svg = render_panel(p)
    assert "&lt;&amp;&quot;&gt;" in svg


def test_single_point_series_renders_circle():
    p = simple_panel(series=[Series(label="a", xs=[3], ys=[2.0])])
    assert "<circle" in render_panel(p)
