"""Turn raw model text into bounded numeric item scores.

Every parser returns ``None`` when the text does not yield a usable
answer; :func:`encode` then substitutes the item's midrange.

Likert extraction rule: collect standalone numerals, drop scale
restatements (``1 to 10``, ``1-10``, ``between 1 and 10``), denominators
(``out of 10``, ``/10``), anchor definitions (``1 =``) and percentages,
keep the ones inside the item bounds, and answer with the last of them.
Models tend to restate the scale before answering, hence "last".
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_frame
from .errors import DataError
from .catalog import Catalog, Likert, MultiSelect, PickTwo, SurveyItem, load_catalog

PARSED_NUMERIC = "parsed-numeric"
RUBRIC_MULTISELECT = "rubric-multiselect"
RUBRIC_PICKTWO = "rubric-picktwo"
IMPUTED_MIDRANGE = "imputed-midrange"
METHODS = (PARSED_NUMERIC, RUBRIC_MULTISELECT, RUBRIC_PICKTWO, IMPUTED_MIDRANGE)

_VERBS = r"(?:answer|respond|provide|give|comply|share|choose|select|pick|rate|say)"
_REFUSAL = re.compile(
    rf"\b(?:cannot|can ?not|can't|can’t|won't|won’t|will not|unable to|not able to|refuse to)"
    rf"\s+(?:\w+\s+)?{_VERBS}\b"
    r"|\bi\s+(?:must\s+)?decline\b"
    rf"|\b(?:prefer|rather)\s+not\s+(?:to\s+)?{_VERBS}\b",
    re.IGNORECASE,
)

_NUMBER = re.compile(r"(?<![\w.])\d+(?:\.\d+)?(?!\w|\.\d|%)")
_PAREN = r"(?:\s*\([^)]*\))?"
_RANGE = re.compile(
    rf"(?<![\w.])(\d+(?:\.\d+)?){_PAREN}\s*(?:to|-|–|—)\s*(\d+(?:\.\d+)?)",
    re.IGNORECASE,
)
_BETWEEN = re.compile(r"\bbetween\s+(\d+(?:\.\d+)?)\s+and\s+(\d+(?:\.\d+)?)", re.IGNORECASE)
_DENOMINATOR = re.compile(r"(?:\bout\s+of|/)\s*$", re.IGNORECASE)
_ANCHOR_DEF = re.compile(r"^\s*=")


def is_refusal(text: str) -> bool:
    return bool(_REFUSAL.search(text))


def _candidate_numbers(text: str) -> list[float]:
    masked: set[int] = set()
    for m in _RANGE.finditer(text):
        masked.update((m.start(1), m.start(2)))
    for m in _BETWEEN.finditer(text):
        masked.update((m.start(1), m.start(2)))
    out = []
    for m in _NUMBER.finditer(text):
        if m.start() in masked:
            continue
        if _DENOMINATOR.search(text[: m.start()]):
            continue
        if _ANCHOR_DEF.match(text[m.end():]):
            continue
        out.append(float(m.group()))
    return out


def extract_numeric(raw_text: str, item: SurveyItem) -> float | None:
    schema = item.schema
    if not isinstance(schema, Likert):
        raise TypeError(f"{item.code} is not a Likert item")
    if is_refusal(raw_text):
        return None
    lo, hi = schema.bounds
    in_range = [x for x in _candidate_numbers(raw_text) if lo <= x <= hi]
    return in_range[-1] if in_range else None


def _label_pattern(label: str) -> re.Pattern:
    words = [re.escape(w) for w in label.split()]
    return re.compile(r"\b" + r"[\s\-]+".join(words) + r"\b", re.IGNORECASE)


def detect_labels(raw_text: str, labels) -> list[str]:
    return [label for label in labels if _label_pattern(label).search(raw_text)]


def score_multi_select(raw_text: str, item: SurveyItem) -> float | None:
    schema = item.schema
    if not isinstance(schema, MultiSelect):
        raise TypeError(f"{item.code} is not a multi-select item")
    if is_refusal(raw_text):
        return None
    picked = detect_labels(raw_text, schema.options)
    if not picked or len(picked) > schema.max_picks:
        return None
    lo, hi = schema.bounds
    total = sum(schema.weight(label) for label in picked)
    return float(min(hi, max(lo, total)))


def detect_aims(raw_text: str, schema: PickTwo) -> set[str]:
    """Aims named in the text; numerals 1-4 are used only when no label matches."""
    found = set()
    for option, patterns in schema.keywords:
        pats = patterns or (_label_pattern(option).pattern,)
        if any(re.search(p, raw_text, re.IGNORECASE) for p in pats):
            found.add(option)
    if found:
        return found
    for m in _NUMBER.finditer(raw_text):
        value = float(m.group())
        if value.is_integer() and 1 <= value <= len(schema.options):
            found.add(schema.options[int(value) - 1])
    return found


def score_pick_two(raw_text: str, item: SurveyItem) -> float | None:
    schema = item.schema
    if not isinstance(schema, PickTwo):
        raise TypeError(f"{item.code} is not a pick-two item")
    if is_refusal(raw_text):
        return None
    aims = detect_aims(raw_text, schema)
    if len(aims) != 2:
        return None
    if aims <= schema.materialist:
        return 1.0
    if aims <= schema.postmaterialist:
        return 3.0
    return 2.0


def impute_midrange(item: SurveyItem) -> float:
    lo, hi = item.bounds
    return (lo + hi) / 2


@dataclass(frozen=True)
class EncodedResponse:
    entity: str
    item_code: str
    value: float
    method: str
    raw_text: str

    def to_record(self) -> dict:
        return {
            "entity": self.entity,
            "item_code": self.item_code,
            "value": self.value,
            "method": self.method,
            "raw_text": self.raw_text,
        }


_DISPATCH = {
    "likert": (extract_numeric, PARSED_NUMERIC),
    "multi_select": (score_multi_select, RUBRIC_MULTISELECT),
    "pick_two": (score_pick_two, RUBRIC_PICKTWO),
}


def encode(raw, item: SurveyItem, entity: str = "") -> EncodedResponse:
    """Score one response; never raises on content.

    ``raw`` may be a :class:`~valuemap.gateway.RawResponse` or plain text.
    """
    text = raw if isinstance(raw, str) else raw.raw_text
    text = text if isinstance(text, str) else ""
    parse, method = _DISPATCH[item.schema.kind]
    value = parse(text, item)
    lo, hi = item.bounds
    if value is None or not lo <= value <= hi:
        return EncodedResponse(entity, item.code, impute_midrange(item), IMPUTED_MIDRANGE, text)
    return EncodedResponse(entity, item.code, float(value), method, text)


class ResponseEncoder(TransformerMixin, BaseEstimator):
    """Encode a frame of raw responses into per-item scores.

    Parameters
    ----------
    catalog : Catalog, optional
        Item definitions; the shipped catalog when omitted.

    ``transform`` expects columns ``item_code`` and ``raw_text`` (``entity``
    optional) and returns ``entity, item_code, value, method, raw_text``.
    """

    def __init__(self, catalog: Catalog | None = None):
        self.catalog = catalog

    def fit(self, X=None, y=None):
        catalog = self.catalog if self.catalog is not None else load_catalog()
        self.items_ = {item.code: item for item in catalog.items}
        return self

    def transform(self, X) -> pd.DataFrame:
        check_is_fitted(self, "items_")
        frame = check_frame(X, ["item_code", "raw_text"])
        unknown = sorted(set(frame["item_code"]) - set(self.items_))
        if unknown:
            raise DataError(f"unknown item codes: {', '.join(map(str, unknown))}")
        entities = frame["entity"] if "entity" in frame.columns else [""] * len(frame)
        rows = [
            encode(text, self.items_[code], entity).to_record()
            for entity, code, text in zip(entities, frame["item_code"], frame["raw_text"])
        ]
        return pd.DataFrame(rows, columns=["entity", "item_code", "value", "method", "raw_text"])
