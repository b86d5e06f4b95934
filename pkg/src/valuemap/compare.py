"""Per-region divergence between model indices and survey benchmarks."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import pandas as pd
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_frame
from .catalog import REGIONS, Catalog, Dimension, load_catalog
from .errors import (
    DataError,
    EmptyDataset,
    InsufficientRegions,
    MissingFile,
    NoOverlap,
    ParseError,
)

log = logging.getLogger(__name__)

BENCHMARK_COLUMNS = ("entity", "trad_sec", "surv_self")

# Upper bounds on mse / threshold; configuration, not derived from data.
DEFAULT_LABEL_BANDS = (
    (0.5, "Strong"),
    (0.9, "Good"),
    (1.1, "Mixed"),
    (1.5, "Moderate mismatch"),
    (math.inf, "Poor"),
)


@dataclass
class JoinReport:
    unmatched_rows: list[str] = field(default_factory=list)
    missing_entities: list[str] = field(default_factory=list)
    duplicate_rows: list[str] = field(default_factory=list)

    @property
    def unmatched(self) -> int:
        return len(self.unmatched_rows)

    def to_dict(self) -> dict:
        return {
            "unmatched_rows": self.unmatched_rows,
            "missing_entities": self.missing_entities,
            "duplicate_rows": self.duplicate_rows,
        }


@dataclass(frozen=True)
class BenchmarkDataset:
    values: dict[str, tuple[float, float]]
    source: str = ""

    def __len__(self):
        return len(self.values)


def join_benchmark(rows, catalog: Catalog, source: str = "") -> tuple[BenchmarkDataset, JoinReport]:
    """Join ``(name, trad_sec, surv_self)`` rows onto catalog entities."""
    report = JoinReport()
    values: dict[str, tuple[float, float]] = {}
    for name, trad, surv in rows:
        target = catalog.resolve_name(name)
        if target is None:
            report.unmatched_rows.append(str(name))
        elif target in values:
            report.duplicate_rows.append(str(name))
        else:
            values[target] = (float(trad), float(surv))
    report.missing_entities = [e.display_name for e in catalog.entities
                               if e.display_name not in values]
    return BenchmarkDataset(values, source), report


def load_benchmark(path, catalog: Catalog, source: str | None = None):
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in BENCHMARK_COLUMNS if c not in header]
        if missing:
            raise ParseError(f"{path}: missing columns {', '.join(missing)}", 1)
        for rec in reader:
            try:
                trad, surv = float(rec["trad_sec"]), float(rec["surv_self"])
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path}: non-numeric coordinate ({exc})", reader.line_num) from exc
            if not (math.isfinite(trad) and math.isfinite(surv)):
                raise ParseError(f"{path}: non-finite coordinate", reader.line_num)
            rows.append((rec["entity"], trad, surv))
    if not rows:
        raise EmptyDataset(f"{path}: no benchmark rows")
    return join_benchmark(rows, catalog, source or path.stem)


@dataclass(frozen=True)
class EntityDiff:
    entity: str
    dimension: Dimension
    signed: float
    absolute: float


def entity_diffs(model, bench: BenchmarkDataset) -> list[EntityDiff]:
    """Signed (model - survey) and absolute differences per joined entity.

    ``model`` is a :class:`~valuemap.indices.CulturalMap` or a mapping
    ``entity -> (trad_sec, surv_self)``.
    """
    coords = model.as_dict() if hasattr(model, "as_dict") else dict(model)
    out = []
    for entity, (m_trad, m_surv) in coords.items():
        if entity not in bench.values:
            continue
        b_trad, b_surv = bench.values[entity]
        for dim, m, b in ((Dimension.TRADITIONAL_SECULAR, m_trad, b_trad),
                          (Dimension.SURVIVAL_SELF_EXPRESSION, m_surv, b_surv)):
            signed = m - b
            out.append(EntityDiff(entity, dim, signed, abs(signed)))
    if not out:
        raise NoOverlap("model and benchmark share no entities")
    return out


@dataclass(frozen=True)
class RegionMetrics:
    region: str
    dimension: Dimension
    mse: float
    mae: float
    n: int
    flagged: bool = False
    max_abs: float = 0.0


def region_metrics(diffs, catalog: Catalog) -> list[RegionMetrics]:
    """MSE and MAE per (region, dimension), regions in canonical order.

    Regions without any joined entity are left out (and logged).
    """
    region_by_entity = {e.display_name: e.region for e in catalog.entities}
    groups: dict[tuple[str, Dimension], list[float]] = {}
    for d in diffs:
        region = region_by_entity.get(d.entity)
        if region is None:
            raise DataError(f"entity {d.entity!r} has no region in the catalog")
        groups.setdefault((region, d.dimension), []).append(d.signed)

    order = list(REGIONS) + sorted({r for r, _ in groups} - set(REGIONS))
    out = []
    for region in order:
        for dim in Dimension:
            terms = groups.get((region, dim))
            if not terms:
                continue
            n = len(terms)
            out.append(
                RegionMetrics(
                    region=region,
                    dimension=dim,
                    mse=math.fsum(t * t for t in terms) / n,
                    mae=math.fsum(abs(t) for t in terms) / n,
                    n=n,
                    max_abs=max(abs(t) for t in terms),
                )
            )
    present = {m.region for m in out}
    for region in REGIONS:
        if region not in present:
            log.warning("region %s has no joined entities; omitted", region)
    return out


def omitted_regions(metrics) -> list[str]:
    present = {m.region for m in metrics}
    return [r for r in REGIONS if r not in present]


def benchmark_threshold(metrics, rank_a: int = 3, rank_b: int = 4) -> float:
    """Mean of the rank_a-th and rank_b-th lowest regional MSE (1-indexed)."""
    metrics = list(metrics)
    if len({m.dimension for m in metrics}) > 1:
        raise DataError("benchmark_threshold expects metrics for a single dimension")
    if rank_a < 1 or rank_b < 1:
        raise ValueError("ranks are 1-indexed")
    need = max(rank_a, rank_b)
    if len(metrics) < need:
        raise InsufficientRegions(f"{len(metrics)} regions, ranks ({rank_a}, {rank_b}) need {need}")
    ordered = sorted(metrics, key=lambda m: (m.mse, m.region))
    return (ordered[rank_a - 1].mse + ordered[rank_b - 1].mse) / 2


def flag_regions(metrics, threshold: float) -> list[RegionMetrics]:
    if not math.isfinite(threshold):
        raise DataError(f"threshold must be finite, got {threshold}")
    return [replace(m, flagged=m.mse > threshold) for m in metrics]


def alignment_label(mse: float, threshold: float, bands=DEFAULT_LABEL_BANDS) -> str:
    if threshold <= 0:
        return bands[0][1] if mse <= 0 else bands[-1][1]
    ratio = mse / threshold
    for upper, label in bands:
        if ratio <= upper:
            return label
    return bands[-1][1]


class RegionalDivergence(BaseEstimator):
    """Fit per-region error metrics of model indices against a benchmark.

    ``fit(X, y)`` takes model coordinates ``X`` and benchmark coordinates
    ``y``, both with columns ``entity, trad_sec, surv_self``. Benchmark
    names are resolved through the catalog synonyms.
    """

    def __init__(self, catalog: Catalog | None = None, threshold_ranks=(3, 4),
                 label_bands=DEFAULT_LABEL_BANDS):
        self.catalog = catalog
        self.threshold_ranks = threshold_ranks
        self.label_bands = label_bands

    def fit(self, X, y):
        catalog = self.catalog if self.catalog is not None else load_catalog()
        model = check_frame(X, BENCHMARK_COLUMNS)
        if isinstance(y, BenchmarkDataset):
            bench, report = y, JoinReport()
        else:
            bench_frame = check_frame(y, BENCHMARK_COLUMNS, name="y")
            bench, report = join_benchmark(
                bench_frame[list(BENCHMARK_COLUMNS)].itertuples(index=False), catalog
            )
        coords = {e: (float(t), float(s)) for e, t, s in
                  zip(model["entity"], model["trad_sec"], model["surv_self"])}
        rank_a, rank_b = self.threshold_ranks

        self.join_report_ = report
        self.diffs_ = entity_diffs(coords, bench)
        metrics = region_metrics(self.diffs_, catalog)
        self.thresholds_ = {}
        flagged = []
        for dim in Dimension:
            dim_metrics = [m for m in metrics if m.dimension is dim]
            if not dim_metrics:
                continue
            threshold = benchmark_threshold(dim_metrics, rank_a, rank_b)
            self.thresholds_[dim] = threshold
            flagged.extend(flag_regions(dim_metrics, threshold))
        self.metrics_ = flagged
        self.omitted_regions_ = omitted_regions(flagged)
        return self

    def metrics_frame(self) -> pd.DataFrame:
        check_is_fitted(self, "metrics_")
        rows = [
            {
                "region": m.region,
                "dimension": m.dimension.value,
                "mse": m.mse,
                "mae": m.mae,
                "n": m.n,
                "flagged": m.flagged,
                "threshold": self.thresholds_[m.dimension],
                "label": alignment_label(m.mse, self.thresholds_[m.dimension], self.label_bands),
            }
            for m in self.metrics_
        ]
        return pd.DataFrame(rows, columns=["region", "dimension", "mse", "mae", "n",
                                           "flagged", "threshold", "label"])

    def diffs_frame(self) -> pd.DataFrame:
        check_is_fitted(self, "diffs_")
        return pd.DataFrame(
            [{"entity": d.entity, "dimension": d.dimension.value,
              "signed": d.signed, "absolute": d.absolute} for d in self.diffs_],
            columns=["entity", "dimension", "signed", "absolute"],
        )
