"""Static SVG figures with JSON plot-data sidecars.

Three figure kinds: the two-axis cultural scatter map, per-region lollipop
charts against the benchmark threshold, and signed/absolute difference
choropleths. Output is deterministic: same input, same bytes.

Every drawn mark carries a class (``mark``, ``stem``, ``marker``,
``region-fill``, ``nodata``) and a ``data-key`` that matches a record in
the sidecar document.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape, quoteattr

from .catalog import REGIONS, Catalog, Dimension
from .compare import flag_regions
from .errors import GeometryLoadError

REGION_COLORS = {
    "African-Islamic": "#7f7f7f",
    "Confucian": "#ff7f0e",
    "Latin America": "#1f77b4",
    "Catholic Europe": "#bc9b0f",
    "English-Speaking": "#2ca02c",
    "Orthodox Europe": "#d62728",
    "Protestant Europe": "#9467bd",
    "West & South Asia": "#e6c700",
}
BELOW_COLOR = "#1f5fbf"
ABOVE_COLOR = "#d62728"
POSITIVE_COLOR = (178, 24, 43)
NEGATIVE_COLOR = (33, 102, 172)
SEQUENTIAL_DARK = (8, 48, 107)
NODATA_COLOR = "#dddddd"
FONT = "font-family=\"Helvetica, Arial, sans-serif\""


@dataclass(frozen=True)
class PlotBundle:
    kind: str
    svg: str
    data: dict

    def data_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def write(self, directory, stem: str) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        svg_path = directory / f"{stem}.svg"
        data_path = directory / f"{stem}.json"
        svg_path.write_text(self.svg, encoding="utf-8")
        data_path.write_text(self.data_json(), encoding="utf-8")
        return svg_path, data_path


def _f(x: float) -> str:
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


def _hex(rgb) -> str:
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _mix(a, b, t: float):
    """Blend rgb ``a`` toward ``b`` by ``t`` in [0, 1]."""
    return tuple(int(round(x + (y - x) * t)) for x, y in zip(a, b))


def _svg_open(width: int, height: int, title: str) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f"<title>{escape(title)}</title>",
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
    ]


def _domain(values, pad_frac: float = 0.08) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    if hi - lo < 1e-12:
        return lo - 1.0, hi + 1.0
    pad = (hi - lo) * pad_frac
    return lo - pad, hi + pad


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


# scatter map


def emit_scatter_map(cmap, catalog: Catalog) -> PlotBundle:
    points = list(cmap.points)
    if not points:
        raise ValueError("scatter map needs at least one point")
    regions = {e.display_name: e.region for e in catalog.entities}
    width, height = 960, 720
    left, right, top, bottom = 80, 220, 60, 70
    pw, ph = width - left - right, height - top - bottom

    x_dom = _domain([p.surv_self for p in points])
    y_dom = _domain([p.trad_sec for p in points])

    def sx(v):
        return left + (v - x_dom[0]) / (x_dom[1] - x_dom[0]) * pw

    def sy(v):
        return top + ph - (v - y_dom[0]) / (y_dom[1] - y_dom[0]) * ph

    out = _svg_open(width, height, "Cultural value map")
    out.append(f'<text x="{width // 2}" y="30" text-anchor="middle" font-size="18" {FONT}>'
               "Cultural value map</text>")
    out.append(f'<g class="axes" stroke="#333333" stroke-width="1">')
    out.append(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}"/>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}"/>')
    out.append("</g>")
    for t in _ticks(*x_dom):
        out.append(f'<text class="tick" x="{_f(sx(t))}" y="{top + ph + 18}" font-size="11" '
                   f'text-anchor="middle" {FONT}>{_f(t)}</text>')
    for t in _ticks(*y_dom):
        out.append(f'<text class="tick" x="{left - 8}" y="{_f(sy(t) + 4)}" font-size="11" '
                   f'text-anchor="end" {FONT}>{_f(t)}</text>')
    out.append(f'<text class="axis-label" x="{left + pw / 2:.0f}" y="{height - 20}" font-size="13" '
               f'text-anchor="middle" {FONT}>Survival ← → Self-Expression</text>')
    out.append(f'<text class="axis-label" x="20" y="{top + ph / 2:.0f}" font-size="13" '
               f'text-anchor="middle" transform="rotate(-90 20 {top + ph / 2:.0f})" {FONT}>'
               "Traditional ← → Secular-Rational</text>")

    series = []
    out.append('<g class="marks">')
    for p in points:
        region = regions.get(p.entity, "")
        color = REGION_COLORS.get(region, "#000000")
        x, y = sx(p.surv_self), sy(p.trad_sec)
        out.append(
            f'<g class="mark" data-key={quoteattr(p.entity)}>'
            f'<circle cx="{_f(x)}" cy="{_f(y)}" r="4" fill="{color}" fill-opacity="0.85"/>'
            f'<text x="{_f(x + 5)}" y="{_f(y - 5)}" font-size="8" {FONT}>{escape(p.entity)}</text>'
            "</g>"
        )
        series.append({"entity": p.entity, "region": region, "x": p.surv_self,
                       "y": p.trad_sec, "color": color})
    out.append("</g>")

    legend = []
    out.append('<g class="legend">')
    lx, ly = left + pw + 30, top + 10
    for i, region in enumerate(REGIONS):
        color = REGION_COLORS[region]
        yy = ly + i * 22
        out.append(f'<g class="legend-entry" data-key={quoteattr(region)}>'
                   f'<circle cx="{lx}" cy="{yy}" r="6" fill="{color}"/>'
                   f'<text x="{lx + 12}" y="{yy + 4}" font-size="12" {FONT}>{escape(region)}</text></g>')
        legend.append({"region": region, "color": color})
    out.append("</g>")
    out.append("</svg>")

    data = {
        "kind": "scatter-map",
        "axes": {
            "x": {"field": "surv_self", "label": Dimension.SURVIVAL_SELF_EXPRESSION.label,
                  "domain": list(x_dom)},
            "y": {"field": "trad_sec", "label": Dimension.TRADITIONAL_SECULAR.label,
                  "domain": list(y_dom)},
        },
        "series": series,
        "legend": legend,
        "projection": cmap.projection.to_dict() if hasattr(cmap, "projection") else None,
    }
    return PlotBundle("scatter-map", "\n".join(out) + "\n", data)


# lollipop


def emit_lollipop(metrics, threshold: float, dimension: Dimension,
                  metric: str = "mse") -> PlotBundle:
    """One stem per region, sorted ascending, dashed line at the threshold.

    Marker colour follows the flag rule (value strictly above threshold is
    red), recomputed here so colours and flags can never disagree.
    """
    metrics = [m for m in metrics if m.dimension is dimension]
    if not metrics:
        raise ValueError(f"no metrics for {dimension.value}")
    metrics = flag_regions(metrics, threshold)
    metrics.sort(key=lambda m: (getattr(m, metric), m.region))

    width, row_h = 760, 34
    left, right, top, bottom = 170, 40, 60, 60
    height = top + bottom + row_h * len(metrics)
    pw = width - left - right
    vmax = max([getattr(m, metric) for m in metrics] + [threshold]) or 1.0
    vmax *= 1.1

    def sx(v):
        return left + v / vmax * pw

    title = f"Regional {metric.upper()}: {dimension.label}"
    out = _svg_open(width, height, title)
    out.append(f'<text x="{width // 2}" y="30" text-anchor="middle" font-size="16" {FONT}>'
               f"{escape(title)}</text>")
    base_y = top + row_h * len(metrics)
    out.append(f'<line class="axis" x1="{left}" y1="{base_y}" x2="{left + pw}" y2="{base_y}" '
               'stroke="#333333"/>')
    for t in _ticks(0.0, vmax):
        out.append(f'<text class="tick" x="{_f(sx(t))}" y="{base_y + 18}" font-size="11" '
                   f'text-anchor="middle" {FONT}>{_f(t)}</text>')

    records = []
    for i, m in enumerate(metrics):
        value = getattr(m, metric)
        y = top + row_h * i + row_h / 2
        color = ABOVE_COLOR if m.flagged else BELOW_COLOR
        key = quoteattr(m.region)
        out.append(f'<text x="{left - 10}" y="{_f(y + 4)}" font-size="12" text-anchor="end" '
                   f'{FONT}>{escape(m.region)}</text>')
        out.append(f'<line class="stem" data-key={key} x1="{left}" y1="{_f(y)}" '
                   f'x2="{_f(sx(value))}" y2="{_f(y)}" stroke="#999999" stroke-width="2"/>')
        out.append(f'<circle class="marker" data-key={key} data-flagged="{str(m.flagged).lower()}" '
                   f'cx="{_f(sx(value))}" cy="{_f(y)}" r="7" fill="{color}"/>')
        records.append({"region": m.region, "value": value, "mse": m.mse, "mae": m.mae,
                        "n": m.n, "flagged": m.flagged, "color": color})

    tx = _f(sx(threshold))
    out.append(f'<line class="threshold" x1="{tx}" y1="{top - 10}" x2="{tx}" y2="{base_y}" '
               'stroke="#333333" stroke-width="1.5" stroke-dasharray="6 4"/>')
    out.append(f'<text x="{tx}" y="{top - 14}" font-size="11" text-anchor="middle" {FONT}>'
               f"benchmark {_f(threshold)}</text>")
    out.append("</svg>")

    data = {
        "kind": "lollipop",
        "dimension": dimension.value,
        "metric": metric,
        "threshold": threshold,
        "series": records,
    }
    return PlotBundle("lollipop", "\n".join(out) + "\n", data)


# choropleth


def load_geometry(path, key: str | None = None) -> dict[str, list[list[list[tuple[float, float]]]]]:
    """Read a GeoJSON FeatureCollection into ``code -> polygons``.

    Each polygon is a list of rings; each ring a list of ``(lon, lat)``.
    The code is taken from ``key`` or the first of ``iso_a3``, ``ISO_A3``,
    ``iso3``, ``adm0_a3`` present on a feature.
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise GeometryLoadError(f"geometry file not found: {path}") from exc
    except ValueError as exc:
        raise GeometryLoadError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise GeometryLoadError(f"{path}: expected a GeoJSON FeatureCollection")

    keys = [key] if key else ["iso_a3", "ISO_A3", "iso3", "adm0_a3"]
    shapes: dict[str, list] = {}
    for i, feat in enumerate(doc.get("features") or []):
        props = feat.get("properties") or {}
        code = next((props[k] for k in keys if props.get(k)), None)
        geom = feat.get("geometry") or {}
        if code is None:
            raise GeometryLoadError(f"{path}: feature {i} has no code property ({', '.join(keys)})")
        try:
            if geom.get("type") == "Polygon":
                polys = [geom["coordinates"]]
            elif geom.get("type") == "MultiPolygon":
                polys = geom["coordinates"]
            else:
                raise GeometryLoadError(f"{path}: feature {code} has unsupported geometry "
                                        f"{geom.get('type')!r}")
            rings = [[[(float(x), float(y)) for x, y, *_ in ring] for ring in poly] for poly in polys]
        except (KeyError, TypeError, ValueError) as exc:
            raise GeometryLoadError(f"{path}: malformed coordinates for {code}") from exc
        shapes.setdefault(str(code), []).extend(rings)
    if not shapes:
        raise GeometryLoadError(f"{path}: no features")
    return shapes


def signed_color(value: float, vmax: float) -> str:
    if value == 0:
        return "#ffffff"
    # floor keeps a visible tint so the hue still encodes the sign
    t = min(1.0, max(abs(value) / vmax, 0.01))
    return _hex(_mix((255, 255, 255), POSITIVE_COLOR if value > 0 else NEGATIVE_COLOR, t))


def absolute_color(value: float, vmax: float) -> str:
    t = min(1.0, abs(value) / vmax) if vmax > 0 else 0.0
    return _hex(_mix((255, 255, 255), SEQUENTIAL_DARK, t))


def emit_choropleth(diffs, mode: str, dimension: Dimension, geometry,
                    catalog: Catalog) -> PlotBundle:
    """Fill each joined entity's polygons by its difference.

    ``geometry`` is a path or an already loaded ``code -> polygons`` map.
    Entities without usable geometry go to ``data["unjoined"]``.
    """
    if mode not in ("signed", "absolute"):
        raise ValueError("mode must be 'signed' or 'absolute'")
    shapes = geometry if isinstance(geometry, dict) else load_geometry(geometry)
    diffs = [d for d in diffs if d.dimension is dimension]
    value_of = (lambda d: d.signed) if mode == "signed" else (lambda d: d.absolute)
    vmax = max((abs(value_of(d)) for d in diffs), default=0.0) or 1.0

    entities = {e.display_name: e for e in catalog.entities}
    joined, unjoined, used = [], [], set()
    for d in diffs:
        ent = entities.get(d.entity)
        codes = ent.join_codes if ent else ()
        if not codes:
            unjoined.append({"entity": d.entity, "reason": "no geo code"})
            continue
        code = next((c for c in codes if c in shapes), None)
        if code is None:
            unjoined.append({"entity": d.entity, "reason": f"no geometry for {'/'.join(codes)}"})
        elif code in used:
            unjoined.append({"entity": d.entity, "reason": f"geometry {code} already used"})
        else:
            used.add(code)
            joined.append((d, code))

    all_pts = [pt for polys in shapes.values() for poly in polys for ring in poly for pt in ring]
    lon_lo, lon_hi = min(p[0] for p in all_pts), max(p[0] for p in all_pts)
    lat_lo, lat_hi = min(p[1] for p in all_pts), max(p[1] for p in all_pts)
    width = 960
    map_w = width - 40
    span_lon = max(lon_hi - lon_lo, 1e-9)
    span_lat = max(lat_hi - lat_lo, 1e-9)
    map_h = map_w * span_lat / span_lon
    height = int(math.ceil(map_h)) + 140

    def proj(lon, lat):
        return 20 + (lon - lon_lo) / span_lon * map_w, 50 + (lat_hi - lat) / span_lat * map_h

    def path_d(polys):
        parts = []
        for poly in polys:
            for ring in poly:
                pts = [proj(x, y) for x, y in ring]
                parts.append("M" + " L".join(f"{_f(x)},{_f(y)}" for x, y in pts) + " Z")
        return " ".join(parts)

    title = f"{'Signed' if mode == 'signed' else 'Absolute'} difference (model − survey): {dimension.label}"
    out = _svg_open(width, height, title)
    out.append(f'<text x="{width // 2}" y="30" text-anchor="middle" font-size="16" {FONT}>'
               f"{escape(title)}</text>")

    nodata = sorted(set(shapes) - used)
    out.append('<g class="nodata-layer">')
    for code in nodata:
        out.append(f'<path class="nodata" data-key={quoteattr(code)} d="{path_d(shapes[code])}" '
                   f'fill="{NODATA_COLOR}" stroke="#ffffff" stroke-width="0.5"/>')
    out.append("</g>")

    features = []
    out.append('<g class="fill-layer">')
    for d, code in joined:
        value = value_of(d)
        fill = signed_color(value, vmax) if mode == "signed" else absolute_color(value, vmax)
        out.append(f'<path class="region-fill" data-key={quoteattr(d.entity)} data-code="{code}" '
                   f'd="{path_d(shapes[code])}" fill="{fill}" stroke="#555555" stroke-width="0.5"/>')
        features.append({"entity": d.entity, "code": code, "value": value, "fill": fill})
    out.append("</g>")

    # colour bar
    bar_y = height - 60
    steps = 10
    lo_val = -vmax if mode == "signed" else 0.0
    for i in range(steps + 1):
        v = lo_val + (vmax - lo_val) * i / steps
        fill = signed_color(v, vmax) if mode == "signed" else absolute_color(v, vmax)
        out.append(f'<rect class="scale-step" x="{300 + i * 30}" y="{bar_y}" width="30" height="12" '
                   f'fill="{fill}" stroke="#999999" stroke-width="0.3"/>')
    out.append(f'<text x="300" y="{bar_y + 28}" font-size="11" {FONT}>{_f(lo_val)}</text>')
    out.append(f'<text x="{300 + (steps + 1) * 30}" y="{bar_y + 28}" font-size="11" '
               f'text-anchor="end" {FONT}>{_f(vmax)}</text>')
    out.append("</svg>")

    data = {
        "kind": "choropleth",
        "mode": mode,
        "dimension": dimension.value,
        "scale": {"domain": [lo_val, vmax], "center": 0.0 if mode == "signed" else None,
                  "type": "diverging" if mode == "signed" else "sequential"},
        "features": features,
        "nodata": nodata,
        "unjoined": unjoined,
    }
    return PlotBundle("choropleth", "\n".join(out) + "\n", data)
