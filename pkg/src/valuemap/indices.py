"""Standardization, factor weighting and per-entity index aggregation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_finite, check_frame
from .catalog import Catalog, Dimension, LoadingEntry, load_catalog
from .errors import (
    DataError,
    DegenerateScale,
    IncompleteResponses,
    MissingLoading,
    OutOfBounds,
)

log = logging.getLogger(__name__)

SQRT12 = math.sqrt(12.0)


def standardize(x: float, lo: float, hi: float) -> float:
    """Map a bounded score to zero mean, unit variance under a uniform prior.

    Centre is the midrange and spread is the standard deviation of a
    uniform distribution on ``[lo, hi]``, so the bounds land on ±√3.
    """
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
        raise DegenerateScale(f"scale [{lo}, {hi}] needs finite lo < hi")
    if not lo <= x <= hi:
        raise OutOfBounds(f"{x} outside [{lo}, {hi}]")
    mu = (lo + hi) / 2
    sigma = (hi - lo) / SQRT12
    return (x - mu) / sigma


def loading_for(catalog: Catalog, item_code: str, dimension: Dimension) -> LoadingEntry:
    for entry in catalog.loadings.get(item_code, ()):
        if entry.dimension is dimension:
            return entry
    raise MissingLoading(f"no loading for {item_code} on {dimension.value}")


def weight_contribution(z: float, loading: LoadingEntry | None) -> float:
    if loading is None:
        raise MissingLoading("no loading entry")
    return loading.sign * loading.weight * z


@dataclass(frozen=True)
class Contribution:
    item_code: str
    dimension: Dimension
    value: float
    z: float
    weight: float
    sign: int
    contribution: float


@dataclass(frozen=True)
class CulturalIndexPoint:
    entity: str
    trad_sec: float
    surv_self: float
    contributions: tuple[Contribution, ...] = ()
    weight_sums: tuple[tuple[Dimension, float], ...] = ()

    def coordinate(self, dimension: Dimension) -> float:
        return self.trad_sec if dimension is Dimension.TRADITIONAL_SECULAR else self.surv_self

    def reconstruct(self, dimension: Dimension) -> float:
        """Recompute a coordinate from the audit trail."""
        total = math.fsum(c.contribution for c in self.contributions if c.dimension is dimension)
        return total / dict(self.weight_sums)[dimension]


def aggregate_entity(responses, catalog: Catalog, allow_partial: bool = False) -> CulturalIndexPoint:
    """Weight-normalized mean of signed, loaded z-scores per dimension.

    ``responses`` are encoded responses (objects or mappings with
    ``entity``, ``item_code`` and ``value``) for a single entity.
    """
    rows = [_as_row(r) for r in responses]
    if not rows:
        raise DataError("no responses to aggregate")
    entity = rows[0]["entity"]
    if any(r["entity"] != entity for r in rows):
        raise DataError("responses span more than one entity")

    by_code: dict[str, float] = {}
    for r in rows:
        if r["item_code"] in by_code:
            raise DataError(f"{entity}: duplicate response for {r['item_code']}")
        by_code[r["item_code"]] = float(r["value"])

    missing = [it.code for it in catalog.items if it.code not in by_code]
    if missing:
        if not allow_partial:
            raise IncompleteResponses(entity, missing)
        log.warning("%s: aggregating without %s", entity, ", ".join(missing))

    contributions = []
    num = {d: [] for d in Dimension}
    den = {d: [] for d in Dimension}
    for item in catalog.items:
        if item.code not in by_code:
            continue
        x = by_code[item.code]
        lo, hi = item.bounds
        z = standardize(x, lo, hi)
        for dim in item.dimensions:
            entry = loading_for(catalog, item.code, dim)
            c = weight_contribution(z, entry)
            contributions.append(Contribution(item.code, dim, x, z, entry.weight, entry.sign, c))
            num[dim].append(c)
            den[dim].append(entry.weight)

    coords = {}
    for dim in Dimension:
        if not den[dim]:
            absent = [it.code for it in catalog.items if dim in it.dimensions]
            raise IncompleteResponses(entity, absent)
        coords[dim] = math.fsum(num[dim]) / math.fsum(den[dim])

    return CulturalIndexPoint(
        entity=entity,
        trad_sec=coords[Dimension.TRADITIONAL_SECULAR],
        surv_self=coords[Dimension.SURVIVAL_SELF_EXPRESSION],
        contributions=tuple(contributions),
        weight_sums=tuple((d, math.fsum(den[d])) for d in Dimension),
    )


def _as_row(r) -> dict:
    if isinstance(r, dict):
        return r
    return {"entity": r.entity, "item_code": r.item_code, "value": r.value}


@dataclass(frozen=True)
class Projection:
    """Per-axis affine map ``scale * x + offset``; identity by default."""

    trad_scale: float = 1.0
    trad_offset: float = 0.0
    surv_scale: float = 1.0
    surv_offset: float = 0.0

    def __post_init__(self):
        if not (self.trad_scale > 0 and self.surv_scale > 0):
            raise ValueError("projection scales must be positive")

    def apply(self, point: CulturalIndexPoint) -> CulturalIndexPoint:
        return CulturalIndexPoint(
            entity=point.entity,
            trad_sec=self.trad_scale * point.trad_sec + self.trad_offset,
            surv_self=self.surv_scale * point.surv_self + self.surv_offset,
            contributions=point.contributions,
            weight_sums=point.weight_sums,
        )

    def to_dict(self) -> dict:
        return {
            "trad_scale": self.trad_scale,
            "trad_offset": self.trad_offset,
            "surv_scale": self.surv_scale,
            "surv_offset": self.surv_offset,
        }


def calibrate_projection(points, benchmark: dict[str, tuple[float, float]]) -> Projection:
    """Affine map sending each axis' model range onto the benchmark range.

    Only entities present in both are used. Axes with no spread on either
    side keep scale 1 and are shifted to match the benchmark mean.
    """
    shared = [p for p in points if p.entity in benchmark]
    if not shared:
        raise DataError("no entities shared with the benchmark for calibration")

    def fit_axis(model_vals, bench_vals):
        m_lo, m_hi = min(model_vals), max(model_vals)
        b_lo, b_hi = min(bench_vals), max(bench_vals)
        if m_hi > m_lo and b_hi > b_lo:
            scale = (b_hi - b_lo) / (m_hi - m_lo)
            return scale, b_lo - scale * m_lo
        return 1.0, math.fsum(bench_vals) / len(bench_vals) - math.fsum(model_vals) / len(model_vals)

    ts, to = fit_axis([p.trad_sec for p in shared], [benchmark[p.entity][0] for p in shared])
    ss, so = fit_axis([p.surv_self for p in shared], [benchmark[p.entity][1] for p in shared])
    return Projection(ts, to, ss, so)


@dataclass(frozen=True)
class CulturalMap:
    points: tuple[CulturalIndexPoint, ...]
    projection: Projection = field(default_factory=Projection)

    def as_dict(self) -> dict[str, tuple[float, float]]:
        return {p.entity: (p.trad_sec, p.surv_self) for p in self.points}


def build_map(points, projection: Projection | None = None) -> CulturalMap:
    points = list(points)
    if not points:
        raise DataError("cannot build a map from zero points")
    projection = projection or Projection()
    return CulturalMap(tuple(projection.apply(p) for p in points), projection)


class CulturalIndexer(TransformerMixin, BaseEstimator):
    """Aggregate encoded responses into per-entity index coordinates.

    Parameters
    ----------
    catalog : Catalog, optional
        Items, dimensions and loadings; the shipped catalog when omitted.
    allow_partial : bool
        Aggregate entities with missing items over the items present.
    projection : Projection, "identity" or "calibrate"
        ``"calibrate"`` fits an affine map onto the benchmark ranges passed
        as ``y`` to :meth:`fit` (columns ``entity, trad_sec, surv_self``).
    """

    def __init__(self, catalog: Catalog | None = None, allow_partial: bool = False,
                 projection="identity"):
        self.catalog = catalog
        self.allow_partial = allow_partial
        self.projection = projection

    def fit(self, X, y=None):
        self.catalog_ = self.catalog if self.catalog is not None else load_catalog()
        if isinstance(self.projection, Projection):
            self.projection_ = self.projection
        elif self.projection in (None, "identity"):
            self.projection_ = Projection()
        elif self.projection == "calibrate":
            if y is None:
                raise DataError("projection='calibrate' needs benchmark coordinates as y")
            bench = check_frame(y, ["entity", "trad_sec", "surv_self"], name="y")
            lookup = {
                e: (float(t), float(s))
                for e, t, s in zip(bench["entity"], bench["trad_sec"], bench["surv_self"])
            }
            self.projection_ = calibrate_projection(self.points(X), lookup)
        else:
            raise ValueError(f"unknown projection {self.projection!r}")
        return self

    def points(self, X) -> list[CulturalIndexPoint]:
        """Unprojected index points, one per entity in first-seen order."""
        catalog = getattr(self, "catalog_", None) or self.catalog or load_catalog()
        frame = check_frame(X, ["entity", "item_code", "value"])
        check_finite(frame, ["value"])
        groups: dict[str, list[dict]] = {}
        for rec in frame[["entity", "item_code", "value"]].to_dict("records"):
            groups.setdefault(rec["entity"], []).append(rec)
        return [aggregate_entity(rows, catalog, self.allow_partial) for rows in groups.values()]

    def build_map(self, X) -> CulturalMap:
        check_is_fitted(self, "projection_")
        return build_map(self.points(X), self.projection_)

    def transform(self, X) -> pd.DataFrame:
        cmap = self.build_map(X)
        regions = {e.display_name: e.region for e in self.catalog_.entities}
        return pd.DataFrame(
            [
                {"entity": p.entity, "region": regions.get(p.entity, ""),
                 "trad_sec": p.trad_sec, "surv_self": p.surv_self}
                for p in cmap.points
            ],
            columns=["entity", "region", "trad_sec", "surv_self"],
        )
