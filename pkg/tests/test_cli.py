import json
import shutil

import httpx
import pandas as pd
import pytest
import yaml

from valuemap.catalog import default_catalog_path
from valuemap.cli import main
from valuemap.config import load_config
from valuemap.errors import ParseError, SchemaMismatch, UpstreamMissing
from valuemap.gateway import HttpChatBackend
from valuemap.pipeline import backend_config, open_run, read_records, write_records


def run_dir(out):
    (d,) = [p for p in out.iterdir() if p.is_dir() and p.name != "cache"]
    return d


def count_records(path):
    return len(path.read_text().splitlines()) - 1


# validate


def test_validate_ok(capsys):
    assert main(["validate"]) == 0
    assert "catalog ok" in capsys.readouterr().out


def test_validate_corrupted(tmp_path, capsys):
    src = default_catalog_path().parent
    for name in ("catalog.yaml", "loadings.yaml", "region_overrides.yaml", "iso_synonyms.yaml"):
        shutil.copy(src / name, tmp_path / name)
    doc = yaml.safe_load((tmp_path / "catalog.yaml").read_text())
    doc["regions"]["Orthodox Europe"].pop()
    (tmp_path / "catalog.yaml").write_text(yaml.safe_dump(doc, sort_keys=False))
    assert main(["validate", "--catalog", str(tmp_path / "catalog.yaml")]) == 1
    out = capsys.readouterr().out
    assert "violation: Orthodox Europe count 14" in out


def test_validate_missing_file(tmp_path):
    assert main(["validate", "--catalog", str(tmp_path / "missing.yaml")]) == 2


# stages


def test_simulate_replay_full(tmp_path):
    assert main(["simulate", "--out-dir", str(tmp_path)]) == 0
    raw = run_dir(tmp_path) / "raw.jsonl"
    assert count_records(raw) == 1260
    manifest = json.loads((run_dir(tmp_path) / "manifest.json").read_text())
    assert manifest["stages"]["simulate"]["complete"]
    assert manifest["backend"]["kind"] == "replay"


def test_entity_filter(tmp_path):
    assert main(["simulate", "--entities", "Nigeria,Japan", "--out-dir", str(tmp_path)]) == 0
    records = read_records(run_dir(tmp_path) / "raw.jsonl", "raw")
    assert len(records) == 20
    assert {r["entity"] for r in records} == {"Nigeria", "Japan"}


def test_unknown_entity_is_data_error(tmp_path):
    assert main(["simulate", "--entities", "Atlantis", "--out-dir", str(tmp_path)]) == 1


def test_stage_by_stage(tmp_path, benchmark_csv, geometry_path):
    common = ["--out-dir", str(tmp_path)]
    assert main(["simulate", *common]) == 0
    assert main(["encode", *common]) == 0
    d = run_dir(tmp_path)
    assert count_records(d / "encoded.jsonl") == 1260
    assert main(["index", *common]) == 0
    assert len((d / "index.csv").read_text().splitlines()) == 127
    assert main(["compare", "--benchmark", str(benchmark_csv), *common]) == 0
    assert len((d / "metrics.csv").read_text().splitlines()) == 17
    assert main(["render", "--geometry", str(geometry_path), *common]) == 0
    figs = sorted(p.name for p in (d / "figures").glob("*.svg"))
    assert len(figs) == 7


def test_render_without_geometry_skips_choropleths(tmp_path, benchmark_csv):
    common = ["--out-dir", str(tmp_path), "--benchmark", str(benchmark_csv)]
    for cmd in ("simulate", "encode", "index", "compare", "render"):
        assert main([cmd, *common]) == 0
    names = {p.name for p in (run_dir(tmp_path) / "figures").glob("*.svg")}
    assert names == {"scatter_map.svg", "lollipop_traditional_secular.svg",
                     "lollipop_survival_self_expression.svg"}


def test_upstream_missing(tmp_path):
    assert main(["encode", "--out-dir", str(tmp_path)]) == 2
    assert main(["index", "--out-dir", str(tmp_path)]) == 2


def test_compare_requires_benchmark(tmp_path):
    common = ["--out-dir", str(tmp_path)]
    for cmd in ("simulate", "encode", "index"):
        assert main([cmd, *common]) == 0
    assert main(["compare", *common]) == 2


def test_schema_mismatch(tmp_path):
    assert main(["simulate", "--out-dir", str(tmp_path)]) == 0
    raw = run_dir(tmp_path) / "raw.jsonl"
    lines = raw.read_text().splitlines()
    lines[0] = json.dumps({"schema": "valuemap/raw", "version": 99})
    raw.write_text("\n".join(lines) + "\n")
    assert main(["encode", "--out-dir", str(tmp_path)]) == 1
    with pytest.raises(SchemaMismatch):
        read_records(raw, "raw")
    write_records(raw, "encoded", [])
    with pytest.raises(SchemaMismatch):
        read_records(raw, "raw")
    with pytest.raises(UpstreamMissing):
        read_records(tmp_path / "none.jsonl", "raw")


def test_backend_error_exit_code(tmp_path):
    fixture = tmp_path / "tiny.jsonl"
    fixture.write_text('{"job_id": "nope", "raw_text": "1"}\n')
    out = tmp_path / "runs"
    rc = main(["simulate", "--fixture", str(fixture), "--entities", "Japan", "--out-dir", str(out)])
    assert rc == 3
    errors = read_records(run_dir(out) / "errors.jsonl", "errors")
    assert len(errors) == 10 and errors[0]["error"] == "FixtureMiss"
    rc = main(["simulate", "--fixture", str(fixture), "--entities", "Japan", "--fail-fast",
               "--out-dir", str(out)])
    assert rc == 3


# run-all


def test_run_all_and_rerun_skips(tmp_path, benchmark_csv, geometry_path, capsys):
    args = ["run-all", "--benchmark", str(benchmark_csv), "--geometry", str(geometry_path),
            "--out-dir", str(tmp_path)]
    assert main(args) == 0
    out = capsys.readouterr().out
    assert out.count("complete") == 5
    d = run_dir(tmp_path)
    before = {p: p.stat().st_mtime_ns for p in d.rglob("*") if p.is_file() and p.name != "manifest.json"}
    assert main(args) == 0
    assert '"skipped": true' in capsys.readouterr().out
    after = {p: p.stat().st_mtime_ns for p in before}
    assert before == after


def test_run_all_stops_at_compare(tmp_path, capsys):
    args = ["run-all", "--benchmark", str(tmp_path / "missing.csv"), "--out-dir", str(tmp_path)]
    assert main(args) == 2
    assert "stage compare failed" in capsys.readouterr().err
    d = run_dir(tmp_path)
    manifest = json.loads((d / "manifest.json").read_text())
    assert set(manifest["stages"]) == {"simulate", "encode", "index"}
    for name in ("raw.jsonl", "encoded.jsonl", "index.csv"):
        assert (d / name).is_file()
    assert not (d / "metrics.csv").exists()


def test_tampered_artifact_reruns_stage(tmp_path):
    common = ["--out-dir", str(tmp_path)]
    assert main(["simulate", *common]) == 0
    assert main(["encode", *common]) == 0
    d = run_dir(tmp_path)
    enc = d / "encoded.jsonl"
    original = enc.read_bytes()
    enc.write_text(enc.read_text().replace("parsed-numeric", "xx", 1))
    assert main(["encode", *common]) == 0
    assert enc.read_bytes() == original


# live backend through the CLI


def test_http_simulate_resume(tmp_path, monkeypatch):
    monkeypatch.setenv("OPENAI_API_KEY", "sk-test")
    calls = []

    def handler(request):
        calls.append(json.loads(request.content))
        if len(calls) in (4, 5):
            return httpx.Response(500)
        return httpx.Response(200, json={"choices": [{"message": {"content": "2"}}]})

    args = ["simulate", "--backend", "http-chat", "--endpoint", "http://llm.test/v1/chat",
            "--entities", "Japan,Chile", "--out-dir", str(tmp_path), "--parallelism", "1"]
    monkeypatch.setenv("VALUEMAP_MAX_ATTEMPTS", "1")
    cfg = load_config(None, {"backend": "http-chat", "endpoint": "http://llm.test/v1/chat"})
    backend = HttpChatBackend(backend_config(cfg), transport=httpx.MockTransport(handler))
    assert main(args, backend=backend) == 3
    assert len(calls) == 20
    assert main(args, backend=backend) == 0
    # only the two failed jobs were asked again
    assert len(calls) == 22
    raw = read_records(run_dir(tmp_path) / "raw.jsonl", "raw")
    assert len(raw) == 20
    assert sum(r["source"] == "cache" for r in raw) == 18
    assert not (run_dir(tmp_path) / "errors.jsonl").exists()


# config


def test_config_precedence(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("model: from-file\nparallelism: 2\nbenchmark: bench.csv\n"
                    "threshold_ranks: [4, 5]\npalette: viridis\n")
    env = {"VALUEMAP_PARALLELISM": "6", "VALUEMAP_MODEL": "from-env"}
    cfg = load_config(path, {"model": "from-flag", "threshold_ranks": None}, environ=env)
    assert cfg.model == "from-flag"
    assert cfg.parallelism == 6
    assert cfg.threshold_ranks == (4, 5)
    assert cfg.benchmark == str(tmp_path / "bench.csv")
    assert cfg.extra == {"palette": "viridis"}
    assert load_config(None, {"threshold_ranks": "3,4"}, environ={}).threshold_ranks == (3, 4)


def test_config_errors(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("- a list\n")
    with pytest.raises(ParseError):
        load_config(path, environ={})
    with pytest.raises(ParseError):
        load_config(None, {"threshold_ranks": "1,2,3"}, environ={})
    assert main(["validate", "--config", str(tmp_path / "none.yaml")]) == 2


def test_threshold_ranks_flag_changes_run(tmp_path, benchmark_csv):
    common = ["--out-dir", str(tmp_path), "--benchmark", str(benchmark_csv)]
    for cmd in ("simulate", "encode", "index"):
        assert main([cmd, *common]) == 0
    assert main(["compare", "--threshold-ranks", "4,5", *common]) == 0
    cfg = load_config(None, {"out_dir": str(tmp_path), "threshold_ranks": "4,5"}, environ={})
    ctx = open_run(cfg)
    rows = pd.read_csv(ctx.path("metrics.csv")).to_dict("records")
    trad = sorted(float(r["mse"]) for r in rows if r["dimension"] == "traditional_secular")
    assert float(rows[0]["threshold"]) == pytest.approx((trad[3] + trad[4]) / 2)
