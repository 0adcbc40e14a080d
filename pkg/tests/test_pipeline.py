import json
import sys

import pytest

from codecurate.config import STAGES, PipelineConfig
from codecurate.corpus_io import read_records
from codecurate.errors import DataError, RecordError, ScannerUnavailable
from codecurate.pipeline import PARTIAL_MARKER, run_pipeline, run_stages, stats_report

from conftest import FIXTURES, tree_digests


def golden(**overrides):
    cfg = PipelineConfig.load(FIXTURES / "golden_config.yaml")
    data = cfg.to_dict()
    data.update(overrides)
    return PipelineConfig.from_dict(data)


@pytest.fixture(scope="module")
def golden_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("golden")
    return run_pipeline(golden(), out)


def test_golden_funnel_matches_hand_count(golden_run):
    m = golden_run.manifests
    assert [m[s].input_count for s in STAGES[:-1]] == [40, 40, 37, 29, 27, 26, 25, 25, 25]
    assert m["lang_license"].drop_reasons == {"lang_not_allowed": 1, "license_missing": 1, "license_not_permissive": 1}
    assert m["quality"].drop_reasons == {
        "low_alpha": 2,
        "low_alpha+structured_size": 1,
        "structured_size": 1,
        "xml_header": 1,
        "html_low_visible": 1,
        "non_english": 1,
        "low_engagement": 1,
    }
    assert m["exact_dedup"].drop_reasons == {"exact_dup": 2}
    assert m["fuzzy_dedup"].drop_reasons == {"fuzzy_dup": 1}
    assert m["fuzzy_dedup"].extra["cluster_sizes"] == {"2": 1}
    assert m["hap"].drop_reasons == {"hap_exceeded": 1}
    assert m["malware"].extra["skipped"] is True
    # every input document is either dropped by exactly one stage or reaches the FIM output
    assert sum(m[s].dropped_count for s in STAGES) + m["fim"].kept_count == 40


def test_golden_language_histogram(golden_run):
    langs = golden_run.manifests["fim"].extra["languages"]
    docs = {k: v["docs"] for k, v in langs.items()}
    assert docs == {
        "Dockerfile": 1, "GO": 1, "HTML": 1, "JSON": 1, "Java": 1, "JavaScript": 1, "Makefile": 1,
        "Python": 8, "Rust": 1, "Shell": 1, "TypeScript": 1, "XSLT": 1, "YAML": 1,
        "issue": 2, "natural_language": 3,
    }


def test_golden_outputs(golden_run):
    out = golden_run.out_dir
    assert not (out / PARTIAL_MARKER).exists()
    clusters = [json.loads(line) for line in (out / "clusters.jsonl").read_text().splitlines()]
    assert clusters == [{"representative_id": "g000", "duplicate_ids": ["g007"]}]
    fim = {d.id: d for d in read_records(out / "stages" / "09_fim.jsonl")}
    assert fim["g027"].extra["mode"] == "CLM"  # quotes a control token
    assert "<EMAIL>" in fim["g020"].content and "admin.person" not in fim["g020"].content
    assert fim["g023"].annotations["hap_count"] == "2"
    assert fim["g000"].annotations["dedup_cluster_size"] == "2"
    assert "mode" not in fim["g035"].extra  # natural language is not FIM-transformed
    mixed = list(read_records(out / "output.jsonl"))
    mix = golden_run.manifests["mix"].extra
    assert mix["total_tokens"] <= 800
    assert {d.annotations["mix_component"] for d in mixed} == {"code", "text"}


def test_workers_and_streaming_do_not_change_outputs(golden_run, tmp_path):
    reference = tree_digests(golden_run.out_dir)
    four = run_pipeline(golden(workers=4), tmp_path / "w4").out_dir
    assert tree_digests(four) == reference
    streamed = run_pipeline(golden(streaming=True), tmp_path / "s").out_dir
    assert tree_digests(streamed) == {k: v for k, v in reference.items() if not k.startswith("stages/")}


def test_disabled_stage_is_identity(tmp_path):
    for stage in ("lang_license", "quality", "exact_dedup", "fuzzy_dedup", "hap", "pii", "fim"):
        cfg = golden(stages={stage: False, "mix": False})
        out = run_pipeline(cfg, tmp_path / stage).out_dir
        idx = STAGES.index(stage)
        before = (out / "stages" / f"{idx:02d}_{STAGES[idx - 1]}.jsonl").read_bytes()
        after = (out / "stages" / f"{idx + 1:02d}_{stage}.jsonl").read_bytes()
        assert before == after, stage
        assert json.loads((out / "manifest" / f"{stage}.json").read_text())["extra"]["skipped"]


def test_empty_corpus(tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    result = run_pipeline(PipelineConfig.from_dict({"input": str(empty)}), tmp_path / "out")
    assert result.output_count == 0
    assert all(m.input_count == 0 for m in result.manifests.values())
    assert (tmp_path / "out" / "output.jsonl").read_bytes() == b""


def test_failure_leaves_partial_marker(tmp_path):
    bad = tmp_path / "bad.jsonl"
    good = (FIXTURES / "golden_corpus.jsonl").read_text().splitlines()[0]
    bad.write_text(good + "\n{\"id\": \"x\", \"path\n")
    with pytest.raises(RecordError) as info:
        run_pipeline(PipelineConfig.from_dict({"input": str(bad)}), tmp_path / "out")
    assert info.value.line == 2
    assert (tmp_path / "out" / PARTIAL_MARKER).exists()
    with pytest.raises(DataError):
        run_pipeline(PipelineConfig.from_dict({"input": str(tmp_path / "missing.jsonl")}), tmp_path / "o2")


def test_malware_stage_with_fake_scanner(tmp_path):
    script = tmp_path / "scan.py"
    script.write_text("import sys\nsys.exit(1 if b'frobnicate twice' in open(sys.argv[1], 'rb').read() else 0)\n")
    cfg = golden(malware={"command": f"{sys.executable} {script} {{file}}"}, workers=2)
    result = run_pipeline(cfg, tmp_path / "out")
    assert result.manifests["malware"].drop_reasons == {"malware": 1}
    broken = golden(malware={"command": f"{sys.executable} -c 'import sys; sys.exit(5)' {{file}}", "strict": True})
    with pytest.raises(ScannerUnavailable):
        run_pipeline(broken, tmp_path / "out2")
    lenient = golden(malware={"command": f"{sys.executable} -c 'import sys; sys.exit(5)' {{file}}"})
    m = run_pipeline(lenient, tmp_path / "out3").manifests["malware"]
    assert m.dropped_count == 0 and m.extra["counters"]["scanner_errors"] == 25


def test_partial_stage_runs(tmp_path, golden_run):
    cfg = golden(input=str(golden_run.out_dir / "stages" / "04_exact_dedup.jsonl"))
    result = run_stages(cfg, ["fuzzy_dedup"], out_dir=tmp_path / "d")
    assert list(result.manifests) == ["fuzzy_dedup"]
    assert (tmp_path / "d" / "output.jsonl").read_bytes() == (
        golden_run.out_dir / "stages" / "05_fuzzy_dedup.jsonl"
    ).read_bytes()


def test_stats_report(golden_run, tmp_path):
    text, summary = stats_report(golden_run.out_dir)
    assert [row["stage"] for row in summary["funnel"]] == list(STAGES)
    assert all(c["pass"] for c in summary["checks"])
    assert "PASS quality: reasons sum to dropped and counts balance" in text
    assert summary["cluster_sizes"] == {"2": 1}

    single = tmp_path / "single"
    (single / "manifest").mkdir(parents=True)
    src = golden_run.out_dir / "manifest" / "quality.json"
    (single / "manifest" / "quality.json").write_bytes(src.read_bytes())
    _, one = stats_report(single)
    assert len(one["funnel"]) == 1

    gap = tmp_path / "gap" / "manifest"
    gap.mkdir(parents=True)
    for name in ("ingest", "exact_dedup"):
        (gap / f"{name}.json").write_bytes((golden_run.out_dir / "manifest" / f"{name}.json").read_bytes())
    with pytest.raises(DataError, match="lang_license, quality"):
        stats_report(gap)

    tampered = tmp_path / "bad" / "manifest"
    tampered.mkdir(parents=True)
    data = json.loads(src.read_text())
    data["dropped_count"] += 1
    (tampered / "quality.json").write_text(json.dumps(data))
    text, summary = stats_report(tampered.parent)
    assert "FAIL quality: reasons sum to dropped and counts balance" in text
