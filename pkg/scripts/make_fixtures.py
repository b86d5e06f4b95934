"""Regenerate the shipped synthetic fixtures.

Writes into ``src/valuemap/data/fixtures/``:

- ``replay_gpt-4.jsonl``: one synthetic raw response per shipped job for
  model ``gpt-4`` at default sampling, keyed by job id.
- ``benchmark_synthetic.csv``: synthetic survey-style coordinates.
- ``tile_geometry.geojson``: one square tile per entity geo code plus a
  few tiles no entity joins to.

Nothing here is real model output or real survey data. Responses come from
per-region latent positions plus seeded noise, rendered through a pool of
phrasings and checked against the codec so each text means what it was
generated to mean.
"""

from __future__ import annotations

import csv
import json
import math
import random
from pathlib import Path

from valuemap.catalog import Dimension, Likert, MultiSelect, PickTwo, load_catalog
from valuemap.codec import IMPUTED_MIDRANGE, encode
from valuemap.indices import loading_for
from valuemap.prompts import build_batch

OUT = Path(__file__).resolve().parent.parent / "src" / "valuemap" / "data" / "fixtures"
SEED = 20240501
REFUSAL_RATE = 0.03

# rough latent (traditional-secular, survival-self-expression) per region
LATENT = {
    "African-Islamic": (-1.0, -0.6),
    "Catholic Europe": (0.4, 0.5),
    "Confucian": (1.3, -0.1),
    "English-Speaking": (-0.1, 1.3),
    "Latin America": (-0.8, 0.4),
    "Orthodox Europe": (0.8, -1.0),
    "Protestant Europe": (1.2, 1.6),
    "West & South Asia": (-0.3, -0.5),
}

LIKERT_TEMPLATES = (
    "{v}",
    "{v}.",
    "I would say {v}.",
    "My answer is {v}.",
    "On a scale from {lo} to {hi}, I would choose {v}.",
    "I'd go with {v} out of {hi}.",
    "Probably {v}, all things considered.",
    "Answer: {v}",
)
ANCHOR_TEMPLATES = (
    "{v} ({label})",
    "I would answer {v}, {label}.",
    "{label}. That is a {v} for me.",
)
MULTI_TEMPLATES = (
    "{labels}",
    "I would pick {labels}.",
    "The qualities I'd choose are {labels}.",
)
PICK_LABEL_TEMPLATES = (
    "{a} and {b}",
    "I would choose {a} and {b}.",
    "The two most important are {a} and {b}.",
)
PICK_NUM_TEMPLATES = (
    "{a} and {b}",
    "{a}, {b}",
    "I'd pick options {a} and {b}.",
)
REFUSALS = (
    "As an AI, I cannot provide a personal opinion on this question.",
    "I'm sorry, but I can't answer questions about personal beliefs.",
    "I would prefer not to answer this one.",
)


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else str(x)


def likert_text(rng, item, z):
    schema: Likert = item.schema
    lo, hi = schema.bounds
    mu, sigma = (lo + hi) / 2, (hi - lo) / math.sqrt(12)
    v = min(hi, max(lo, round(mu + z * sigma)))
    anchors = dict(schema.anchors)
    if v in anchors and rng.random() < 0.5:
        tmpl = rng.choice(ANCHOR_TEMPLATES)
        return tmpl.format(v=_fmt(v), label=anchors[v]), v
    tmpl = rng.choice(LIKERT_TEMPLATES)
    return tmpl.format(v=_fmt(v), lo=_fmt(lo), hi=_fmt(hi)), v


def multi_text(rng, item, z):
    schema: MultiSelect = item.schema
    weights = dict(schema.rubric)
    # higher z favours positively weighted options
    scored = sorted(schema.options,
                    key=lambda o: -(weights[o] * z + rng.gauss(0, 0.8)))
    k = rng.randint(3, schema.max_picks)
    picked = scored[:k]
    text = rng.choice(MULTI_TEMPLATES).format(labels=", ".join(picked))
    lo, hi = schema.bounds
    return text, min(hi, max(lo, sum(weights[p] for p in picked)))


def pick_text(rng, item, z):
    schema: PickTwo = item.schema
    mat = [o for o in schema.options if o in schema.materialist]
    post = [o for o in schema.options if o in schema.postmaterialist]
    p_post = 1 / (1 + math.exp(-1.5 * z))
    chosen = []
    for _ in range(2):
        pool = post if rng.random() < p_post else mat
        pool = [o for o in pool if o not in chosen] or [o for o in schema.options if o not in chosen]
        chosen.append(rng.choice(pool))
    n_post = sum(o in schema.postmaterialist for o in chosen)
    value = {0: 1.0, 1: 2.0, 2: 3.0}[n_post]
    if rng.random() < 0.5:
        nums = sorted(schema.options.index(o) + 1 for o in chosen)
        text = rng.choice(PICK_NUM_TEMPLATES).format(a=nums[0], b=nums[1])
    else:
        text = rng.choice(PICK_LABEL_TEMPLATES).format(a=chosen[0], b=chosen[1])
    return text, value


def make_replay(catalog, rng) -> list[dict]:
    jobs = build_batch(catalog, "gpt-4")
    regions = {e.display_name: e.region for e in catalog.entities}
    offsets = {e.display_name: (rng.gauss(0, 0.35), rng.gauss(0, 0.35)) for e in catalog.entities}
    records = []
    for job in jobs:
        item = catalog.item(job.item_code)
        base = LATENT[regions[job.entity]]
        off = offsets[job.entity]
        dim = item.dimensions[0]
        idx = 0 if dim is Dimension.TRADITIONAL_SECULAR else 1
        entry = loading_for(catalog, item.code, dim)
        # the sign maps the latent position back onto the raw item direction
        z = entry.sign * (base[idx] + off[idx]) + rng.gauss(0, 0.4)
        if rng.random() < REFUSAL_RATE:
            text, expected = rng.choice(REFUSALS), None
        elif isinstance(item.schema, Likert):
            text, expected = likert_text(rng, item, z)
        elif isinstance(item.schema, MultiSelect):
            text, expected = multi_text(rng, item, z)
        else:
            text, expected = pick_text(rng, item, z)
        enc = encode(text, item)
        if expected is None:
            assert enc.method == IMPUTED_MIDRANGE, text
        else:
            assert enc.value == expected and enc.method != IMPUTED_MIDRANGE, (text, enc)
        records.append({"job_id": job.job_id, "entity": job.entity, "item_code": job.item_code,
                        "raw_text": text})
    return records, offsets


def make_benchmark(catalog, offsets, rng) -> list[tuple[str, float, float]]:
    display = {"United States": "USA", "United Kingdom": "UK", "Russia": "Russian Federation"}
    rows = []
    for ent in catalog.entities:
        # a few entities are deliberately absent from the benchmark
        if ent.display_name in ("Scotland", "Maldives", "Macau SAR"):
            continue
        t, s = LATENT[ent.region]
        ot, os_ = offsets[ent.display_name]
        rows.append((display.get(ent.display_name, ent.display_name),
                     round(1.4 * (t + 0.8 * ot) + rng.gauss(0, 0.25), 3),
                     round(1.4 * (s + 0.8 * os_) + rng.gauss(0, 0.25), 3)))
    rows.append(("Atlantis", 0.0, 0.0))  # exercises the unmatched-row report
    return rows


def make_geometry(catalog) -> dict:
    codes = []
    for ent in catalog.entities:
        if ent.join_codes:
            codes.append(ent.join_codes[0])
    codes += ["ATA", "GRL", "ESH"]  # drawn as no-data
    features = []
    cols = 16
    for i, code in enumerate(codes):
        x, y = (i % cols) * 20 - 160, 80 - (i // cols) * 20
        ring = [[x, y], [x + 18, y], [x + 18, y - 18], [x, y - 18], [x, y]]
        features.append({"type": "Feature", "properties": {"iso_a3": code},
                         "geometry": {"type": "Polygon", "coordinates": [ring]}})
    return {"type": "FeatureCollection", "features": features}


def main():
    rng = random.Random(SEED)
    catalog = load_catalog()
    OUT.mkdir(parents=True, exist_ok=True)

    records, offsets = make_replay(catalog, rng)
    with open(OUT / "replay_gpt-4.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")

    with open(OUT / "benchmark_synthetic.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["entity", "trad_sec", "surv_self"])
        writer.writerows(make_benchmark(catalog, offsets, rng))

    (OUT / "tile_geometry.geojson").write_text(
        json.dumps(make_geometry(catalog), separators=(",", ":")) + "\n", encoding="utf-8")
    refusals = sum(r["raw_text"] in REFUSALS for r in records)
    print(f"wrote {len(records)} replay records ({refusals} refusals) to {OUT}")


if __name__ == "__main__":
    main()
