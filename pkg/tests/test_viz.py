import json

import pytest
from hypothesis import given, strategies as st

from _svg import elements, rgb
from valuemap.catalog import REGIONS, Dimension
from valuemap.compare import EntityDiff, RegionMetrics
from valuemap.errors import GeometryLoadError
from valuemap.indices import CulturalIndexPoint, build_map
from valuemap.viz import (
    ABOVE_COLOR,
    BELOW_COLOR,
    absolute_color,
    emit_choropleth,
    emit_lollipop,
    emit_scatter_map,
    load_geometry,
    signed_color,
)

TS = Dimension.TRADITIONAL_SECULAR


def test_scatter_one_mark_per_point(catalog):
    points = [CulturalIndexPoint(e.display_name, i * 0.01, -i * 0.02)
              for i, e in enumerate(catalog.entities)]
    bundle = emit_scatter_map(build_map(points), catalog)
    marks = elements(bundle.svg, "mark")
    assert len(marks) == len(bundle.data["series"]) == 126
    assert [m.get("data-key") for m in marks] == [p.entity for p in points]
    assert len(elements(bundle.svg, "legend-entry")) == 8
    s = bundle.data["series"][5]
    assert (s["x"], s["y"]) == (points[5].surv_self, points[5].trad_sec)


def test_scatter_is_deterministic(catalog):
    points = [CulturalIndexPoint("Japan", 1.0, 0.5), CulturalIndexPoint("Peru", -0.3, 0.2)]
    a = emit_scatter_map(build_map(points), catalog)
    b = emit_scatter_map(build_map(points), catalog)
    assert a.svg == b.svg and a.data_json() == b.data_json()


def test_scatter_escapes_names(catalog):
    bundle = emit_scatter_map(build_map([CulturalIndexPoint('A & "B" <C>', 0, 0)]), catalog)
    assert elements(bundle.svg, "mark")[0].get("data-key") == 'A & "B" <C>'


def _metrics(values):
    return [RegionMetrics(REGIONS[i], TS, v, v ** 0.5, 3) for i, v in enumerate(values)]


def test_lollipop_marks_and_colors():
    metrics = _metrics([0.5, 0.1, 0.9, 0.3, 0.2, 0.7, 0.4, 0.6])
    bundle = emit_lollipop(metrics, 0.35, TS)
    stems = elements(bundle.svg, "stem")
    markers = elements(bundle.svg, "marker")
    assert len(stems) == len(markers) == 8
    assert len(elements(bundle.svg, "threshold")) == 1
    values = [r["value"] for r in bundle.data["series"]]
    assert values == sorted(values)
    for marker, rec in zip(markers, bundle.data["series"]):
        flagged = rec["value"] > 0.35
        assert marker.get("data-flagged") == str(flagged).lower()
        assert marker.get("fill") == (ABOVE_COLOR if flagged else BELOW_COLOR)


def test_lollipop_ignores_stale_flags():
    metrics = [RegionMetrics("Confucian", TS, 1.0, 1.0, 1, flagged=False)]
    bundle = emit_lollipop(metrics, 0.5, TS)
    assert bundle.data["series"][0]["flagged"] is True


def test_lollipop_needs_dimension():
    with pytest.raises(ValueError):
        emit_lollipop(_metrics([1.0]), 0.5, Dimension.SURVIVAL_SELF_EXPRESSION)


@given(st.floats(-10, 10, allow_nan=False), st.floats(0.1, 10))
def test_signed_color_sign(value, vmax):
    r, g, b = rgb(signed_color(value, vmax))
    if value > 0:
        assert r > b
    elif value < 0:
        assert b > r
    else:
        assert (r, g, b) == (255, 255, 255)


@given(st.floats(0, 10), st.floats(0.1, 10))
def test_absolute_color_darkens(value, vmax):
    lighter = sum(rgb(absolute_color(value, vmax)))
    darker = sum(rgb(absolute_color(value + 0.5, vmax)))
    assert darker <= lighter


def _geometry(tmp_path, codes):
    feats = [{"type": "Feature", "properties": {"iso_a3": c},
              "geometry": {"type": "Polygon",
                           "coordinates": [[[i, 0], [i + 1, 0], [i + 1, 1], [i, 1], [i, 0]]]}}
             for i, c in enumerate(codes)]
    path = tmp_path / "geo.json"
    path.write_text(json.dumps({"type": "FeatureCollection", "features": feats}))
    return path


def test_choropleth_join_and_nodata(catalog, tmp_path):
    path = _geometry(tmp_path, ["JPN", "PER", "ATA"])
    diffs = [EntityDiff("Japan", TS, 0.5, 0.5), EntityDiff("Peru", TS, -0.2, 0.2),
             EntityDiff("Scotland", TS, 0.1, 0.1), EntityDiff("Chile", TS, 0.3, 0.3)]
    bundle = emit_choropleth(diffs, "signed", TS, path, catalog)
    fills = elements(bundle.svg, "region-fill")
    assert sorted(f.get("data-key") for f in fills) == ["Japan", "Peru"]
    assert bundle.data["nodata"] == ["ATA"]
    reasons = {u["entity"] for u in bundle.data["unjoined"]}
    assert reasons == {"Scotland", "Chile"}
    for f in fills:
        r, _, b = rgb(f.get("fill"))
        assert (r > b) == (f.get("data-key") == "Japan")
    absolute = emit_choropleth(diffs, "absolute", TS, path, catalog)
    assert len(elements(absolute.svg, "region-fill")) == 2
    with pytest.raises(ValueError):
        emit_choropleth(diffs, "ratio", TS, path, catalog)


def test_geometry_errors(tmp_path):
    with pytest.raises(GeometryLoadError):
        load_geometry(tmp_path / "none.geojson")
    bad = tmp_path / "bad.geojson"
    bad.write_text("{not json")
    with pytest.raises(GeometryLoadError):
        load_geometry(bad)
    wrong = tmp_path / "wrong.geojson"
    wrong.write_text('{"type": "Feature"}')
    with pytest.raises(GeometryLoadError):
        load_geometry(wrong)
    nokey = tmp_path / "nokey.geojson"
    nokey.write_text(json.dumps({"type": "FeatureCollection", "features": [
        {"type": "Feature", "properties": {}, "geometry": {"type": "Point", "coordinates": [0, 0]}}]}))
    with pytest.raises(GeometryLoadError):
        load_geometry(nokey)


def test_geometry_custom_key(tmp_path):
    path = tmp_path / "g.json"
    path.write_text(json.dumps({"type": "FeatureCollection", "features": [
        {"type": "Feature", "properties": {"code": "JPN"},
         "geometry": {"type": "MultiPolygon", "coordinates": [[[[0, 0], [1, 0], [1, 1], [0, 0]]]]}}]}))
    assert list(load_geometry(path, key="code")) == ["JPN"]
