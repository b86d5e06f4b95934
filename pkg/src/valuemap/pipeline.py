"""Staged, resumable pipeline over a run directory.

Layout of ``<out_dir>/<run_id>/``::

    manifest.json            run metadata and stage completion markers
    raw.jsonl                simulate: one record per job, job order
    errors.jsonl             simulate: per-job failures (continue mode only)
    encoded.jsonl, .csv      encode
    index.csv                index: entity, region, trad_sec, surv_self
    index_audit.jsonl        index: per-item standardized contributions
    diffs.csv, metrics.csv   compare
    join_report.json         compare
    figures/*.svg, *.json    render

Every ``.jsonl`` artifact starts with a header line
``{"schema": "valuemap/<name>", "version": N}``. The run id hashes the
catalog, backend settings and entity filter, so rerunning the same
configuration lands in the same directory and resumes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .catalog import Catalog, Dimension, load_catalog
from .codec import encode
from .compare import (
    DEFAULT_LABEL_BANDS,
    BenchmarkDataset,
    EntityDiff,
    RegionMetrics,
    alignment_label,
    benchmark_threshold,
    entity_diffs,
    flag_regions,
    load_benchmark,
    region_metrics,
)
from .config import RunConfig
from .errors import (
    BackendError,
    DataError,
    IOFailure,
    SchemaMismatch,
    UnknownEntity,
    UpstreamMissing,
)
from .gateway import BackendConfig, Gateway, JobFailure, ResponseCache, RetryPolicy
from .indices import CulturalIndexPoint, Projection, aggregate_entity, build_map, calibrate_projection
from .prompts import SamplingParams, build_batch
from .viz import emit_choropleth, emit_lollipop, emit_scatter_map, load_geometry

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
STAGES = ("simulate", "encode", "index", "compare", "render")


# artifact io


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_records(path: Path, schema: str, records) -> int:
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"schema": f"valuemap/{schema}", "version": SCHEMA_VERSION}) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
            n += 1
    tmp.replace(path)
    return n


def read_records(path: Path, schema: str) -> list[dict]:
    if not path.is_file():
        raise UpstreamMissing(f"missing upstream artifact {path}")
    with open(path, encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except ValueError:
            raise SchemaMismatch(f"{path}: missing schema header") from None
        if header.get("schema") != f"valuemap/{schema}":
            raise SchemaMismatch(f"{path}: expected valuemap/{schema}, found {header.get('schema')}")
        if header.get("version") != SCHEMA_VERSION:
            raise SchemaMismatch(f"{path}: schema version {header.get('version')}, "
                                 f"expected {SCHEMA_VERSION}")
        return [json.loads(line) for line in fh if line.strip()]


def write_csv(path: Path, columns: list[str], rows) -> int:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    n = 0
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
        n += 1
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return n


def read_csv(path: Path) -> list[dict]:
    if not path.is_file():
        raise UpstreamMissing(f"missing upstream artifact {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# manifest


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunContext:
    config: RunConfig
    catalog: Catalog
    run_dir: Path
    run_id: str
    manifest: dict = field(default_factory=dict)

    @property
    def manifest_path(self) -> Path:
        return self.run_dir / "manifest.json"

    def save_manifest(self):
        self.manifest["updated"] = _now()
        self.run_dir.mkdir(parents=True, exist_ok=True)
        tmp = self.manifest_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        tmp.replace(self.manifest_path)

    def mark(self, stage: str, artifacts: dict[str, Path], **info):
        self.manifest.setdefault("stages", {})[stage] = {
            "complete": True,
            "finished": _now(),
            "artifacts": {
                name: {"path": str(p.relative_to(self.run_dir)), "sha256": _sha256(p)}
                for name, p in artifacts.items()
            },
            **info,
        }
        self.save_manifest()

    def is_complete(self, stage: str) -> bool:
        entry = self.manifest.get("stages", {}).get(stage)
        if not entry or not entry.get("complete"):
            return False
        for art in entry.get("artifacts", {}).values():
            path = self.run_dir / art["path"]
            if not path.is_file() or _sha256(path) != art["sha256"]:
                return False
        return True

    def path(self, name: str) -> Path:
        return self.run_dir / name


def backend_config(cfg: RunConfig) -> BackendConfig:
    return BackendConfig(
        kind=cfg.backend,
        model_id=cfg.model,
        endpoint=cfg.endpoint,
        auth_env=cfg.auth_env,
        fixture_path=cfg.fixture_path() if cfg.backend == "replay" else None,
        script=cfg.extra.get("script") if cfg.backend == "scripted" else None,
        retry=RetryPolicy(max_attempts=cfg.max_attempts, base_delay=cfg.backoff),
        rate_limit=cfg.rate_limit,
        parallelism=cfg.parallelism,
        sampling=SamplingParams(cfg.temperature, cfg.max_tokens, cfg.seed),
    )


def open_run(cfg: RunConfig) -> RunContext:
    catalog = load_catalog(cfg.catalog)
    if cfg.entities:
        names = []
        for raw in cfg.entities:
            resolved = catalog.resolve_name(raw)
            if resolved is None:
                raise UnknownEntity(raw)
            names.append(resolved)
        catalog = catalog.restrict(names)
    backend = backend_config(cfg)
    summary = backend.summary()
    key = {
        "catalog": catalog.fingerprint,
        "backend": {k: v for k, v in summary.items() if k not in ("parallelism", "fixture_path")},
        "entities": [e.display_name for e in catalog.entities],
    }
    run_id = hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:12]
    run_dir = Path(cfg.out_dir) / run_id
    ctx = RunContext(cfg, catalog, run_dir, run_id)
    if ctx.manifest_path.is_file():
        try:
            ctx.manifest = json.loads(ctx.manifest_path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise DataError(f"corrupt manifest {ctx.manifest_path}: {exc}") from exc
    else:
        ctx.manifest = {
            "run_id": run_id,
            "created": _now(),
            "catalog_hash": catalog.fingerprint,
            "backend": summary,
            "entities": len(catalog.entities),
            "items": len(catalog.items),
            "stages": {},
        }
        ctx.save_manifest()
    return ctx


# stages


def simulate(ctx: RunContext, backend=None, force: bool = False) -> dict:
    if ctx.is_complete("simulate") and not force:
        return {"skipped": True}
    cfg = ctx.config
    bconf = backend_config(cfg)
    jobs = build_batch(ctx.catalog, cfg.model, bconf.sampling)
    cache = None
    if cfg.backend == "http-chat":
        cache_dir = Path(cfg.cache_dir) if cfg.cache_dir else Path(cfg.out_dir) / "cache"
        cache = ResponseCache(cache_dir, run_id=ctx.run_id)
    gateway = Gateway(bconf, cache=cache, backend=backend)
    try:
        results = gateway.execute_batch(jobs, fail_fast=cfg.fail_fast)
    finally:
        # an injected backend belongs to the caller
        if backend is None:
            gateway.close()

    records, failures = [], []
    for job, res in zip(jobs, results):
        if isinstance(res, JobFailure):
            failures.append({**res.to_record(), "entity": job.entity, "item_code": job.item_code})
            continue
        records.append({"entity": job.entity, "item_code": job.item_code, **res.to_record()})
    raw_path = ctx.path("raw.jsonl")
    write_records(raw_path, "raw", records)
    errors_path = ctx.path("errors.jsonl")
    if failures:
        write_records(errors_path, "errors", failures)
        ctx.manifest.setdefault("stages", {})["simulate"] = {
            "complete": False, "finished": _now(), "records": len(records), "errors": len(failures),
        }
        ctx.save_manifest()
        first = failures[0]
        raise BackendError(
            f"{len(failures)} of {len(jobs)} jobs failed (first: {first['entity']}/"
            f"{first['item_code']}: {first['error']}: {first['message']}); rerun to resume"
        )
    if errors_path.exists():
        errors_path.unlink()
    sources: dict[str, int] = {}
    for rec in records:
        sources[rec["source"]] = sources.get(rec["source"], 0) + 1
    ctx.mark("simulate", {"raw": raw_path}, records=len(records), sources=sources)
    return {"records": len(records), "sources": sources}


def encode_stage(ctx: RunContext, force: bool = False) -> dict:
    if ctx.is_complete("encode") and not force:
        return {"skipped": True}
    raw = read_records(ctx.path("raw.jsonl"), "raw")
    items = {it.code: it for it in ctx.catalog.items}
    encoded = []
    for rec in raw:
        item = items.get(rec["item_code"])
        if item is None:
            raise DataError(f"raw record for unknown item {rec['item_code']}")
        encoded.append(encode(rec["raw_text"], item, rec["entity"]).to_record())
    jsonl = ctx.path("encoded.jsonl")
    write_records(jsonl, "encoded", encoded)
    csv_path = ctx.path("encoded.csv")
    write_csv(csv_path, ["entity", "item_code", "value", "method"],
              ((r["entity"], r["item_code"], r["value"], r["method"]) for r in encoded))
    methods: dict[str, int] = {}
    for r in encoded:
        methods[r["method"]] = methods.get(r["method"], 0) + 1
    ctx.mark("encode", {"encoded": jsonl, "csv": csv_path}, records=len(encoded), methods=methods)
    return {"records": len(encoded), "methods": methods}


def _benchmark(ctx: RunContext) -> tuple[BenchmarkDataset, object]:
    if not ctx.config.benchmark:
        raise UpstreamMissing("compare needs --benchmark (CSV with entity, trad_sec, surv_self)")
    return load_benchmark(ctx.config.benchmark, ctx.catalog)


def _projection(ctx: RunContext, points) -> Projection:
    spec = ctx.config.projection
    if spec in (None, "identity"):
        return Projection()
    if spec == "calibrate":
        bench, _ = _benchmark(ctx)
        return calibrate_projection(points, bench.values)
    if isinstance(spec, dict):
        return Projection(**{k: float(v) for k, v in spec.items()})
    raise DataError(f"unknown projection setting {spec!r}")


def index_stage(ctx: RunContext, force: bool = False) -> dict:
    if ctx.is_complete("index") and not force:
        return {"skipped": True}
    encoded = read_records(ctx.path("encoded.jsonl"), "encoded")
    groups: dict[str, list[dict]] = {}
    for rec in encoded:
        groups.setdefault(rec["entity"], []).append(rec)
    points = []
    for ent in ctx.catalog.entities:
        rows = groups.get(ent.display_name)
        if not rows:
            if ctx.config.allow_partial:
                log.warning("%s: no encoded responses; skipped", ent.display_name)
                continue
            raise DataError(f"{ent.display_name}: no encoded responses")
        points.append(aggregate_entity(rows, ctx.catalog, ctx.config.allow_partial))
    cmap = build_map(points, _projection(ctx, points))
    regions = {e.display_name: e.region for e in ctx.catalog.entities}
    index_path = ctx.path("index.csv")
    write_csv(index_path, ["entity", "region", "trad_sec", "surv_self"],
              ((p.entity, regions[p.entity], p.trad_sec, p.surv_self) for p in cmap.points))
    audit_path = ctx.path("index_audit.jsonl")
    write_records(audit_path, "index_audit", (
        {
            "entity": p.entity,
            "trad_sec": p.trad_sec,
            "surv_self": p.surv_self,
            "weight_sums": {d.value: w for d, w in p.weight_sums},
            "contributions": [
                {"item_code": c.item_code, "dimension": c.dimension.value, "value": c.value,
                 "z": c.z, "weight": c.weight, "sign": c.sign, "contribution": c.contribution}
                for c in p.contributions
            ],
        }
        for p in points
    ))
    ctx.mark("index", {"index": index_path, "audit": audit_path}, points=len(cmap.points),
             projection=cmap.projection.to_dict())
    return {"points": len(cmap.points)}


def load_index(path: Path) -> list[CulturalIndexPoint]:
    return [
        CulturalIndexPoint(r["entity"], float(r["trad_sec"]), float(r["surv_self"]))
        for r in read_csv(path)
    ]


def compare_stage(ctx: RunContext, force: bool = False) -> dict:
    if ctx.is_complete("compare") and not force:
        return {"skipped": True}
    points = load_index(ctx.path("index.csv"))
    bench, report = _benchmark(ctx)
    diffs = entity_diffs({p.entity: (p.trad_sec, p.surv_self) for p in points}, bench)
    metrics = region_metrics(diffs, ctx.catalog)
    rank_a, rank_b = ctx.config.threshold_ranks
    bands = ctx.config.label_bands or DEFAULT_LABEL_BANDS
    rows = []
    thresholds = {}
    for dim in Dimension:
        dim_metrics = [m for m in metrics if m.dimension is dim]
        threshold = benchmark_threshold(dim_metrics, rank_a, rank_b)
        thresholds[dim.value] = threshold
        for m in flag_regions(dim_metrics, threshold):
            rows.append((m.region, dim.value, m.mse, m.mae, m.n, m.flagged, threshold,
                         alignment_label(m.mse, threshold, bands)))

    diffs_path = ctx.path("diffs.csv")
    write_csv(diffs_path, ["entity", "dimension", "signed", "absolute"],
              ((d.entity, d.dimension.value, d.signed, d.absolute) for d in diffs))
    metrics_path = ctx.path("metrics.csv")
    write_csv(metrics_path, ["region", "dimension", "mse", "mae", "n", "flagged", "threshold",
                             "label"], rows)
    report_path = ctx.path("join_report.json")
    report_path.write_text(json.dumps({"source": bench.source, **report.to_dict()}, indent=2,
                                      sort_keys=True) + "\n", encoding="utf-8")
    ctx.mark("compare", {"diffs": diffs_path, "metrics": metrics_path, "join_report": report_path},
             rows=len(rows), thresholds=thresholds, unmatched=report.unmatched,
             missing_entities=len(report.missing_entities))
    return {"rows": len(rows), "thresholds": thresholds}


def load_metrics(path: Path) -> tuple[list[RegionMetrics], dict[Dimension, float]]:
    metrics, thresholds = [], {}
    for r in read_csv(path):
        dim = Dimension(r["dimension"])
        metrics.append(RegionMetrics(r["region"], dim, float(r["mse"]), float(r["mae"]),
                                     int(r["n"]), r["flagged"] == "True"))
        thresholds[dim] = float(r["threshold"])
    return metrics, thresholds


def load_diffs(path: Path) -> list[EntityDiff]:
    return [
        EntityDiff(r["entity"], Dimension(r["dimension"]), float(r["signed"]), float(r["absolute"]))
        for r in read_csv(path)
    ]


def render_stage(ctx: RunContext, force: bool = False) -> dict:
    if ctx.is_complete("render") and not force:
        return {"skipped": True}
    figures = ctx.path("figures")
    artifacts: dict[str, Path] = {}

    points = load_index(ctx.path("index.csv"))
    bundle = emit_scatter_map(build_map(points), ctx.catalog)
    for kind, p in zip(("svg", "data"), bundle.write(figures, "scatter_map")):
        artifacts[f"scatter_map.{kind}"] = p

    if ctx.path("metrics.csv").is_file():
        metrics, thresholds = load_metrics(ctx.path("metrics.csv"))
        for dim in Dimension:
            b = emit_lollipop(metrics, thresholds[dim], dim)
            stem = f"lollipop_{dim.value}"
            for kind, p in zip(("svg", "data"), b.write(figures, stem)):
                artifacts[f"{stem}.{kind}"] = p
    else:
        log.info("no metrics.csv; lollipop charts skipped")

    if ctx.config.geometry:
        shapes = load_geometry(ctx.config.geometry, ctx.config.geometry_key)
        diffs = load_diffs(ctx.path("diffs.csv"))
        for mode in ("signed", "absolute"):
            for dim in Dimension:
                b = emit_choropleth(diffs, mode, dim, shapes, ctx.catalog)
                stem = f"choropleth_{mode}_{dim.value}"
                for kind, p in zip(("svg", "data"), b.write(figures, stem)):
                    artifacts[f"{stem}.{kind}"] = p
    else:
        log.info("no --geometry; choropleths skipped")

    ctx.mark("render", artifacts, figures=sorted({k.rsplit(".", 1)[0] for k in artifacts}))
    return {"figures": len(artifacts) // 2}


STAGE_FUNCS = {
    "simulate": simulate,
    "encode": encode_stage,
    "index": index_stage,
    "compare": compare_stage,
    "render": render_stage,
}


class StageFailed(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


def run_all(ctx: RunContext, force: bool = False, backend=None) -> dict:
    summary = {}
    for stage in STAGES:
        try:
            if stage == "simulate":
                summary[stage] = simulate(ctx, backend=backend, force=force)
            else:
                summary[stage] = STAGE_FUNCS[stage](ctx, force=force)
        except (DataError, IOFailure, BackendError) as exc:
            raise StageFailed(stage, exc) from exc
    return summary
