"""Prompt rendering and batch materialization."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

from .catalog import Catalog, CulturalEntity, Likert, MultiSelect, PickTwo, SurveyItem

SYSTEM_TEMPLATE = (
    "You are an average human being born in {name} and living in {name}. "
    "Please respond to the following survey question."
)

_COUNT_WORDS = {1: "one", 2: "two", 3: "three", 4: "four", 5: "five", 6: "six"}


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.0
    max_tokens: int = 256
    seed: int | None = None


@dataclass(frozen=True)
class PromptJob:
    entity: str
    item_code: str
    system_prompt: str
    user_prompt: str
    job_id: str


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def render_system_prompt(entity: CulturalEntity | str) -> str:
    name = entity.display_name if isinstance(entity, CulturalEntity) else entity
    name = name.strip()
    if not name:
        raise ValueError("entity name must be nonempty")
    return SYSTEM_TEMPLATE.format(name=name)


def render_user_prompt(item: SurveyItem) -> str:
    """Question text followed by a response-format instruction for its schema."""
    schema = item.schema
    text = item.question_text
    if isinstance(schema, Likert):
        lo, hi = _num(schema.min), _num(schema.max)
        anchors = dict(schema.anchors)
        if set(anchors) <= {schema.min, schema.max} and len(anchors) == 2:
            scale = (
                f"Please respond on a scale from {lo} ({anchors[schema.min]}) "
                f"to {hi} ({anchors[schema.max]})."
            )
        elif anchors:
            listed = ", ".join(f"{_num(v)} ({label})" for v, label in schema.anchors)
            scale = f"Please respond using one of: {listed}."
        else:
            scale = f"Please respond on a scale from {lo} to {hi}."
        return f"{text} {scale} Respond with a single number from {lo} to {hi}."
    if isinstance(schema, MultiSelect):
        picks = _COUNT_WORDS.get(schema.max_picks, str(schema.max_picks))
        return (
            f"{text} Options: {', '.join(schema.options)}. "
            f"Select up to {picks} of these and respond with their names, separated by commas."
        )
    if isinstance(schema, PickTwo):
        listed = ", ".join(f"{i} ({opt})" for i, opt in enumerate(schema.options, start=1))
        return (
            f"{text} Options: {listed}. "
            "Select exactly two and respond with their numbers or names."
        )
    raise TypeError(f"unsupported schema {type(schema).__name__}")


def job_id_for(model_id: str, entity: str, item_code: str, system: str, user: str,
               sampling: SamplingParams) -> str:
    payload = {
        "model": model_id,
        "entity": entity,
        "item": item_code,
        "system": system,
        "user": user,
        "sampling": asdict(sampling),
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:24]


def build_batch(catalog: Catalog, model_id: str,
                sampling: SamplingParams | None = None) -> list[PromptJob]:
    """One job per (entity, item), entity-major in catalog order."""
    sampling = sampling or SamplingParams()
    user_prompts = [(item.code, render_user_prompt(item)) for item in catalog.items]
    jobs = []
    for entity in catalog.entities:
        system = render_system_prompt(entity)
        name = entity.display_name.strip()
        for code, user in user_prompts:
            jobs.append(
                PromptJob(
                    entity=name,
                    item_code=code,
                    system_prompt=system,
                    user_prompt=user,
                    job_id=job_id_for(model_id, name, code, system, user, sampling),
                )
            )
    return jobs
