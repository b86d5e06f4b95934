"""Entity/region taxonomy and the survey item catalog."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from importlib import resources
from itertools import combinations
from pathlib import Path
from typing import Mapping

import yaml

from .errors import MissingFile, ParseError, UnknownEntity, ValidationError

REGIONS = (
    "African-Islamic",
    "Confucian",
    "Latin America",
    "Catholic Europe",
    "English-Speaking",
    "Orthodox Europe",
    "Protestant Europe",
    "West & South Asia",
)

REGION_COUNTS = {
    "African-Islamic": 26,
    "Confucian": 9,
    "Latin America": 19,
    "Catholic Europe": 12,
    "English-Speaking": 8,
    "Orthodox Europe": 15,
    "Protestant Europe": 17,
    "West & South Asia": 20,
}
EXPECTED_ENTITIES = 126
EXPECTED_POLITIES = 123
EXPECTED_ITEMS = 10


class Dimension(str, Enum):
    TRADITIONAL_SECULAR = "traditional_secular"
    SURVIVAL_SELF_EXPRESSION = "survival_self_expression"

    @property
    def column(self) -> str:
        return "trad_sec" if self is Dimension.TRADITIONAL_SECULAR else "surv_self"

    @property
    def label(self) -> str:
        if self is Dimension.TRADITIONAL_SECULAR:
            return "Traditional vs. Secular-Rational"
        return "Survival vs. Self-Expression"


@dataclass(frozen=True)
class Likert:
    min: float
    max: float
    anchors: tuple[tuple[float, str], ...] = ()
    kind: str = field(default="likert", init=False)

    @property
    def bounds(self) -> tuple[float, float]:
        return (self.min, self.max)


@dataclass(frozen=True)
class MultiSelect:
    options: tuple[str, ...]
    max_picks: int
    rubric: tuple[tuple[str, float], ...]
    bounds: tuple[float, float]
    kind: str = field(default="multi_select", init=False)

    def weight(self, label: str) -> float:
        return dict(self.rubric)[label]


@dataclass(frozen=True)
class PickTwo:
    options: tuple[str, ...]
    keywords: tuple[tuple[str, tuple[str, ...]], ...]
    materialist: frozenset[str]
    postmaterialist: frozenset[str]
    bounds: tuple[float, float] = (1.0, 3.0)
    kind: str = field(default="pick_two", init=False)


ResponseSchema = Likert | MultiSelect | PickTwo


@dataclass(frozen=True)
class SurveyItem:
    code: str
    question_text: str
    schema: ResponseSchema
    dimensions: tuple[Dimension, ...]

    @property
    def bounds(self) -> tuple[float, float]:
        return self.schema.bounds

    @property
    def midrange(self) -> float:
        lo, hi = self.bounds
        return (lo + hi) / 2


@dataclass(frozen=True)
class CulturalEntity:
    display_name: str
    region: str
    iso3: str | None = None
    is_distinct_polity: bool = True
    supplemental: bool = False
    geo_codes: tuple[str, ...] = ()

    @property
    def join_codes(self) -> tuple[str, ...]:
        """Geometry keys to try, iso3 first."""
        codes = [self.iso3] if self.iso3 else []
        codes += [c for c in self.geo_codes if c not in codes]
        return tuple(codes)


@dataclass(frozen=True)
class LoadingEntry:
    dimension: Dimension
    weight: float
    sign: int


@dataclass(frozen=True)
class Catalog:
    entities: tuple[CulturalEntity, ...]
    items: tuple[SurveyItem, ...]
    loadings: Mapping[str, tuple[LoadingEntry, ...]]
    synonyms: Mapping[str, str] = field(default_factory=dict)

    def entity(self, name: str) -> CulturalEntity:
        key = name.strip()
        for ent in self.entities:
            if ent.display_name == key:
                return ent
        raise UnknownEntity(name)

    def item(self, code: str) -> SurveyItem:
        for it in self.items:
            if it.code == code:
                return it
        raise KeyError(code)

    def resolve_name(self, name: str) -> str | None:
        """Map a free-form entity name to a catalog display name, or None."""
        key = " ".join(str(name).split())
        names = {e.display_name for e in self.entities}
        if key in names:
            return key
        folded = {n.casefold(): n for n in names}
        if key.casefold() in folded:
            return folded[key.casefold()]
        syn = {k.casefold(): v for k, v in self.synonyms.items()}
        target = syn.get(key.casefold())
        return target if target in names else None

    def restrict(self, names) -> "Catalog":
        """Sub-catalog over the given entity names, in catalog order."""
        wanted = set()
        for name in names:
            wanted.add(self.entity(name).display_name)
        kept = tuple(e for e in self.entities if e.display_name in wanted)
        return Catalog(kept, self.items, self.loadings, self.synonyms)

    @property
    def fingerprint(self) -> str:
        doc = {
            "entities": [asdict(e) for e in self.entities],
            "items": [_item_doc(i) for i in self.items],
            "loadings": {
                code: [
                    {"dimension": e.dimension.value, "weight": e.weight, "sign": e.sign}
                    for e in entries
                ]
                for code, entries in sorted(self.loadings.items())
            },
        }
        blob = json.dumps(doc, sort_keys=True, ensure_ascii=False, default=str)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _item_doc(item: SurveyItem) -> dict:
    schema = asdict(item.schema)
    for key, value in list(schema.items()):
        if isinstance(value, frozenset):
            schema[key] = sorted(value)
    return {
        "code": item.code,
        "text": item.question_text,
        "dimensions": [d.value for d in item.dimensions],
        "schema": schema,
    }


@dataclass
class ValidationReport:
    region_counts: dict[str, int]
    total: int
    polities: int
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations


def region_of(catalog: Catalog, entity_name: str) -> str:
    return catalog.entity(entity_name).region


def validate_catalog(catalog: Catalog) -> ValidationReport:
    violations: list[str] = []
    counts = {r: 0 for r in REGIONS}
    seen: set[str] = set()
    for ent in catalog.entities:
        if ent.display_name in seen:
            violations.append(f"duplicate entity name {ent.display_name!r}")
        seen.add(ent.display_name)
        if ent.region not in counts:
            violations.append(f"unknown region {ent.region!r} for {ent.display_name}")
            continue
        counts[ent.region] += 1

    total = len(catalog.entities)
    polities = sum(1 for e in catalog.entities if e.is_distinct_polity)
    if total != EXPECTED_ENTITIES:
        violations.append(f"entity count {total} ≠ {EXPECTED_ENTITIES}")
    if polities != EXPECTED_POLITIES:
        violations.append(f"distinct polity count {polities} ≠ {EXPECTED_POLITIES}")
    for region in REGIONS:
        if counts[region] != REGION_COUNTS[region]:
            violations.append(f"{region} count {counts[region]} ≠ {REGION_COUNTS[region]}")

    violations.extend(_item_violations(catalog))
    return ValidationReport(counts, total, polities, violations)


def _item_violations(catalog: Catalog) -> list[str]:
    out: list[str] = []
    codes = [it.code for it in catalog.items]
    if len(codes) != EXPECTED_ITEMS:
        out.append(f"item count {len(codes)} ≠ {EXPECTED_ITEMS}")
    dupes = sorted({c for c in codes if codes.count(c) > 1})
    for code in dupes:
        out.append(f"duplicate item code {code}")

    for item in catalog.items:
        lo, hi = item.bounds
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
            out.append(f"{item.code}: bounds [{lo}, {hi}] not finite with lo < hi")
            continue
        if not item.dimensions:
            out.append(f"{item.code}: no dimension assigned")
        schema = item.schema
        if isinstance(schema, MultiSelect):
            out.extend(_multi_select_violations(item.code, schema))
        elif isinstance(schema, PickTwo):
            out.extend(_pick_two_violations(item.code, schema))

        entries = catalog.loadings.get(item.code, ())
        for dim in item.dimensions:
            n = sum(1 for e in entries if e.dimension is dim)
            if n != 1:
                out.append(f"{item.code}: {n} loading entries for {dim.value}, expected 1")
        for e in entries:
            if e.dimension not in item.dimensions:
                out.append(f"{item.code}: loading for unassigned dimension {e.dimension.value}")
            if not e.weight > 0:
                out.append(f"{item.code}: loading weight {e.weight} must be > 0")
            if e.sign not in (1, -1):
                out.append(f"{item.code}: loading sign {e.sign} must be ±1")
    return out


def _multi_select_violations(code: str, schema: MultiSelect) -> list[str]:
    out = []
    labels = [label for label, _ in schema.rubric]
    if sorted(labels) != sorted(schema.options):
        out.append(f"{code}: rubric labels do not match options")
    if not 1 <= schema.max_picks <= len(schema.options):
        out.append(f"{code}: max_picks {schema.max_picks} out of range")
    lo, hi = schema.bounds
    weights = [w for _, w in schema.rubric]
    sums = [
        sum(combo)
        for k in range(1, schema.max_picks + 1)
        for combo in combinations(weights, k)
    ]
    if sums and (min(sums) < lo or max(sums) > hi):
        out.append(
            f"{code}: rubric range [{min(sums)}, {max(sums)}] exceeds bounds [{lo}, {hi}]"
        )
    return out


def _pick_two_violations(code: str, schema: PickTwo) -> list[str]:
    out = []
    if len(schema.options) != 4:
        out.append(f"{code}: pick-two needs 4 options, got {len(schema.options)}")
    if schema.materialist | schema.postmaterialist != set(schema.options) or (
        schema.materialist & schema.postmaterialist
    ):
        out.append(f"{code}: materialist/postmaterialist must partition the options")
    if tuple(schema.bounds) != (1.0, 3.0):
        out.append(f"{code}: pick-two bounds must be [1, 3]")
    return out


# loading


def default_catalog_path() -> Path:
    return Path(str(resources.files("valuemap") / "data" / "catalog.yaml"))


def _read_yaml(path: Path):
    if not path.is_file():
        raise MissingFile(path)
    try:
        with open(path, encoding="utf-8") as fh:
            return yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ParseError(f"{path}: {getattr(exc, 'problem', exc)}", line) from exc


def load_catalog(
    path=None,
    overrides=None,
    synonyms=None,
    loadings=None,
    validate: bool = True,
) -> Catalog:
    """Read a catalog file plus its override, synonym and loading tables.

    Side files default to the paths named inside the catalog document,
    resolved relative to it; explicit arguments win.
    """
    path = Path(path) if path is not None else default_catalog_path()
    doc = _read_yaml(path)
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be a mapping")
    base = path.parent

    def side(explicit, key):
        if explicit is not None:
            return Path(explicit)
        if doc.get(key):
            return base / doc[key]
        return None

    override_path = side(overrides, "overrides")
    synonym_path = side(synonyms, "synonyms")
    loading_path = side(loadings, "loadings")

    override_map = _read_yaml(override_path) if override_path else {}
    synonym_doc = _read_yaml(synonym_path) if synonym_path else {}
    loading_doc = _read_yaml(loading_path) if loading_path else {}
    synonym_doc = synonym_doc or {}

    try:
        entities, resolve_problems = _build_entities(
            doc.get("regions") or {}, override_map or {}, synonym_doc.get("geo_codes") or {}
        )
        items = tuple(_build_item(raw) for raw in doc.get("items") or [])
        loading_table = _build_loadings(loading_doc or {})
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed catalog entry: {exc}") from exc

    catalog = Catalog(
        entities=entities,
        items=items,
        loadings=loading_table,
        synonyms={str(k): str(v) for k, v in (synonym_doc.get("names") or {}).items()},
    )
    if validate:
        violations = resolve_problems + validate_catalog(catalog).violations
        if violations:
            raise ValidationError(violations)
    return catalog


def _build_entities(regions: dict, overrides: dict, geo_codes: dict):
    """Resolve region listings into a partition, first listing wins."""
    listings: dict[str, list[tuple[str, dict]]] = {}
    order: list[str] = []
    for region, entries in regions.items():
        for raw in entries or []:
            name = " ".join(str(raw["name"]).split())
            if name not in listings:
                listings[name] = []
                order.append(name)
            listings[name].append((str(region), raw))

    problems = []
    for name, region in overrides.items():
        listed = [r for r, _ in listings.get(name, [])]
        if not listed:
            problems.append(f"override for unlisted entity {name!r}")
        elif region not in listed:
            problems.append(f"override puts {name!r} in {region!r}, not one of {listed}")

    entities = []
    for name in order:
        options = listings[name]
        target = overrides.get(name, options[0][0])
        raw = next((r for reg, r in options if reg == target), options[0][1])
        iso3 = raw.get("iso3")
        entities.append(
            CulturalEntity(
                display_name=name,
                region=target,
                iso3=str(iso3).upper() if iso3 else None,
                is_distinct_polity=bool(raw.get("polity", True)),
                supplemental=bool(raw.get("supplemental", False)),
                geo_codes=tuple(str(c) for c in geo_codes.get(name, ())),
            )
        )
    return tuple(entities), problems


def _build_item(raw: dict) -> SurveyItem:
    s = raw["schema"]
    kind = s["kind"]
    if kind == "likert":
        anchors = tuple(sorted((float(k), str(v)) for k, v in (s.get("anchors") or {}).items()))
        schema: ResponseSchema = Likert(float(s["min"]), float(s["max"]), anchors)
    elif kind == "multi_select":
        rubric = tuple((str(k), float(v)) for k, v in s["rubric"].items())
        schema = MultiSelect(
            options=tuple(s["options"]),
            max_picks=int(s["max_picks"]),
            rubric=rubric,
            bounds=(float(s["bounds"][0]), float(s["bounds"][1])),
        )
    elif kind == "pick_two":
        keywords = s.get("keywords") or {}
        schema = PickTwo(
            options=tuple(s["options"]),
            keywords=tuple((opt, tuple(keywords.get(opt, ()))) for opt in s["options"]),
            materialist=frozenset(s["materialist"]),
            postmaterialist=frozenset(s["postmaterialist"]),
            bounds=(float(s["bounds"][0]), float(s["bounds"][1])),
        )
    else:
        raise ValueError(f"unknown schema kind {kind!r}")
    dims = tuple(Dimension(d) for d in raw["dimensions"])
    return SurveyItem(str(raw["code"]), str(raw["text"]).strip(), schema, dims)


def _build_loadings(doc: dict) -> dict[str, tuple[LoadingEntry, ...]]:
    return {
        str(code): tuple(
            LoadingEntry(Dimension(e["dimension"]), float(e["weight"]), int(e["sign"]))
            for e in entries
        )
        for code, entries in doc.items()
    }
