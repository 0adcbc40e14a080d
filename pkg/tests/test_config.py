import json

import pytest
import yaml

from codecurate.config import STAGES, PipelineConfig
from codecurate.errors import ConfigError

from conftest import FIXTURES


def test_defaults():
    cfg = PipelineConfig.from_dict({})
    assert cfg.seed == 0 and cfg.workers == 1
    assert cfg.stage_enabled("quality")
    assert not cfg.stage_enabled("hap") and not cfg.stage_enabled("malware") and not cfg.stage_enabled("mix")
    assert "MIT" in cfg.permissive_licenses()
    assert len(cfg.language_allowlist()) == 116


def test_load_resolves_relative_paths(golden_config_path):
    cfg = PipelineConfig.load(golden_config_path)
    assert cfg.input == str(FIXTURES / "golden_corpus.jsonl")
    assert cfg.hap.dictionary_file == str(FIXTURES / "hap_words.txt")
    assert cfg.stage_enabled("hap") and cfg.stage_enabled("mix")
    assert cfg.mixture.components[1].kinds == ("issue", "natural_language")


@pytest.mark.parametrize("suffix", [".yaml", ".json"])
def test_round_trip_is_lossless(tmp_path, golden_config_path, suffix):
    cfg = PipelineConfig.load(golden_config_path)
    cfg.issues = PipelineConfig.from_dict({"issues": {"bot_patterns": ["-ci$"], "min_engaged_users": 3}}).issues
    path = tmp_path / f"c{suffix}"
    cfg.dump(path)
    again = PipelineConfig.load(path)
    assert again.to_dict() == cfg.to_dict()
    assert again == cfg
    assert again.digest() == cfg.digest()


def test_digest_stable_under_key_order_and_paths(tmp_path, golden_config_path):
    data = yaml.safe_load(golden_config_path.read_text())
    a = PipelineConfig.load(golden_config_path)
    shuffled = dict(reversed(list(data.items())))
    path = tmp_path / "c.json"
    path.write_text(json.dumps(shuffled))
    for name in ("golden_corpus.jsonl", "hap_words.txt"):
        (tmp_path / name).write_bytes((FIXTURES / name).read_bytes())
    b = PipelineConfig.load(path)
    assert a.digest() == b.digest()
    b.workers = 8
    b.out = "/elsewhere"
    assert a.digest() == b.digest()
    b.seed = 1
    assert a.digest() != b.digest()


@pytest.mark.parametrize(
    "data",
    [
        {"bogus": 1},
        {"stages": {"nope": True}},
        {"stages": {"quality": None}},
        {"quality": {"min_alpha_fraction": 2}},
        {"quality": {"unknown_key": 1}},
        {"seed": -1},
        {"seed": 2**64},
        {"workers": 0},
        {"group_by": "repo"},
        {"languages": ["Klingon"]},
        {"license_file": "/no/such/file"},
        {"stages": {"hap": True}},
        {"stages": {"malware": True}},
        {"stages": {"mix": True}},
        {"mixture": {"components": [{"name": "a", "weight": 0.5}], "token_budget": 10}},
        {"mixture": {"components": [{"name": "a", "weight": 1.0, "source": "/no/file"}], "token_budget": 10}},
        {"mixture": {"components": [{"name": "a", "weight": 0.5, "kinds": ["code"]},
                                    {"name": "b", "weight": 0.5, "kinds": ["code", "issue"]}], "token_budget": 10}},
        {"mixture": {"components": [{"name": "a", "weight": 1.0, "kinds": ["tweets"]}], "token_budget": 10}},
        {"fim": {"alpha": -0.1}},
        {"pii": {"tokens": {"email": "<E>"}}},
        {"token_counter": {"mode": "bpe"}},
    ],
)
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(data)


def test_empty_hap_dictionary_rejected(tmp_path):
    empty = tmp_path / "empty.txt"
    empty.write_text("# nothing\n")
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"hap": {"dictionary_file": str(empty)}})


def test_unparseable_file(tmp_path):
    bad = tmp_path / "c.yaml"
    bad.write_text("seed: [1, 2\n")
    with pytest.raises(ConfigError):
        PipelineConfig.load(bad)
    with pytest.raises(ConfigError):
        PipelineConfig.load(tmp_path / "missing.yaml")


def test_stage_list_order():
    assert STAGES[0] == "ingest" and STAGES[-1] == "mix"
    assert STAGES.index("exact_dedup") < STAGES.index("pii")
