"""Pipeline configuration: loading, validation, serialization, digests.

A config file is YAML or JSON with the sections below; every key is optional
and unknown keys are rejected. ``to_dict`` and ``from_dict`` round-trip
losslessly, and the digest ignores settings that cannot change the output
(worker count, paths). Relative paths in a config file are taken relative to
the file's own directory.

    seed: 0
    workers: 1
    input: corpus.jsonl
    out: runs/a
    streaming: false
    stages: {ingest: true, ..., hap: null}   # null = on when configured
    languages: null                          # allowlist, null = all
    licenses: null                           # null = shipped permissive set
    license_file: null
    quality: {min_alpha_fraction: 0.25, ...}
    issues: {bot_patterns: [...], ...}
    stopwords_file: null
    dedup: {shingle_size: 5, ...}
    group_by: none                           # none | language | source_kind
    hap: {dictionary_file: null, threshold: 2, match_mode: token}
    pii: {tokens: {...}}
    malware: {command: null, strict: false, timeout: 60}
    fim: {alpha: 0.5, psm_fraction: 0.5, ...}
    drop_original: false
    mixture: null                            # {components: [...], token_budget: N}
    token_counter: {mode: byte_estimate}
    repeat: false
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .corpus_io import config_digest, default_permissive_licenses, known_languages, load_license_file
from .dedup import DedupConfig
from .document import SOURCE_KINDS
from .errors import ConfigError
from .fim import FimConfig, FimTokens
from .mixture import PIPELINE_SOURCE, MixtureSpec, TokenCounter
from .quality import IssueConfig, QualityConfig
from .safety import DEFAULT_TOKENS, HapConfig, load_dictionary

STAGES = ("ingest", "lang_license", "quality", "exact_dedup", "fuzzy_dedup", "hap", "pii", "malware", "fim", "mix")
GROUP_BY = ("none", "language", "source_kind")
# stages whose toggle may be left unset, meaning "run when configured"
AUTO_STAGES = {"hap", "malware", "mix"}


@dataclass(frozen=True)
class HapSettings:
    dictionary_file: str | None = None
    threshold: int = 2
    match_mode: str = "token"


@dataclass(frozen=True)
class PiiSettings:
    tokens: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_TOKENS))


@dataclass(frozen=True)
class MalwareSettings:
    command: str | None = None
    strict: bool = False
    timeout: float = 60.0


def _default_stages() -> dict[str, bool | None]:
    return {name: (None if name in AUTO_STAGES else True) for name in STAGES}


@dataclass
class PipelineConfig:
    seed: int = 0
    workers: int = 1
    input: str | None = None
    out: str | None = None
    streaming: bool = False
    stages: dict[str, bool | None] = field(default_factory=_default_stages)
    languages: list[str] | None = None
    licenses: list[str] | None = None
    license_file: str | None = None
    quality: QualityConfig = field(default_factory=QualityConfig)
    issues: IssueConfig = field(default_factory=IssueConfig)
    stopwords_file: str | None = None
    dedup: DedupConfig = field(default_factory=DedupConfig)
    group_by: str = "none"
    hap: HapSettings = field(default_factory=HapSettings)
    pii: PiiSettings = field(default_factory=PiiSettings)
    malware: MalwareSettings = field(default_factory=MalwareSettings)
    fim: FimConfig = field(default_factory=FimConfig)
    drop_original: bool = False
    mixture: MixtureSpec | None = None
    token_counter: TokenCounter = field(default_factory=TokenCounter)
    repeat: bool = False

    # -- construction ----------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> PipelineConfig:
        data = dict(data or {})
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        kwargs: dict[str, Any] = {}
        for key, value in data.items():
            if key == "stages":
                stages = _default_stages()
                bad = set(value or {}) - set(STAGES)
                if bad:
                    raise ConfigError(f"unknown stage(s): {', '.join(sorted(bad))}")
                stages.update(value or {})
                value = stages
            elif key == "issues":
                value = _build(IssueConfig, _tuples(value, ("bot_patterns", "autogen_patterns")), key)
            elif key == "fim" and value is not None:
                value = dict(value)
                if isinstance(value.get("tokens"), dict):
                    value["tokens"] = _build(FimTokens, value["tokens"], "fim.tokens")
                value = _build(FimConfig, value, key)
            elif key == "mixture" and value is not None:
                value = dict(value)
                try:
                    value["components"] = tuple(value.get("components") or ())
                except TypeError:
                    raise ConfigError("mixture.components must be a list") from None
                value = _build(MixtureSpec, value, key)
            elif key in _SECTIONS and value is not None:
                value = _build(_SECTIONS[key], value, key)
            kwargs[key] = value
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | os.PathLike) -> PipelineConfig:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from None
        if data is not None and not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping")
        return cls.from_dict(_resolve_paths(data or {}, path.parent))

    # -- validation ------------------------------------------------------------

    def validate(self) -> None:
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError("workers must be a positive integer")
        if self.group_by not in GROUP_BY:
            raise ConfigError(f"group_by must be one of {GROUP_BY}")
        for name, toggle in self.stages.items():
            if toggle is None and name not in AUTO_STAGES:
                raise ConfigError(f"stage {name!r} must be true or false")
        if self.languages is not None:
            bad = set(self.languages) - set(known_languages())
            if bad:
                raise ConfigError(f"unknown language(s) in allowlist: {', '.join(sorted(bad))}")
        for label, path in (("license_file", self.license_file), ("stopwords_file", self.stopwords_file),
                            ("hap.dictionary_file", self.hap.dictionary_file)):
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{label} {path!r} does not exist")
        if self.stages["hap"] and not self.hap.dictionary_file:
            raise ConfigError("hap stage enabled but no hap.dictionary_file given")
        if self.stages["hap"] is not False and self.hap.dictionary_file and not load_dictionary(self.hap.dictionary_file):
            raise ConfigError("hap dictionary is empty")
        if self.stages["malware"] and not self.malware.command:
            raise ConfigError("malware stage enabled but no malware.command given")
        if self.stages["mix"] and self.mixture is None:
            raise ConfigError("mix stage enabled but no mixture spec given")
        if set(self.pii.tokens) != set(DEFAULT_TOKENS):
            raise ConfigError(f"pii.tokens must define exactly {sorted(DEFAULT_TOKENS)}")
        if self.mixture is not None:
            claimed: set[str] = set()
            for comp in self.mixture.components:
                if comp.source != PIPELINE_SOURCE:
                    if not Path(comp.source).is_file():
                        raise ConfigError(f"mixture source {comp.source!r} does not exist")
                    continue
                kinds = set(comp.kinds) if comp.kinds is not None else set(SOURCE_KINDS)
                if kinds - set(SOURCE_KINDS):
                    raise ConfigError(f"mixture component {comp.name!r} has unknown kinds")
                if kinds & claimed:
                    # the same document would be emitted twice under one id
                    raise ConfigError("mixture components drawing from the pipeline must have disjoint kinds")
                claimed |= kinds
        HapConfig(threshold=self.hap.threshold, match_mode=self.hap.match_mode)

    # -- resolved views --------------------------------------------------------

    def stage_enabled(self, name: str) -> bool:
        toggle = self.stages[name]
        if toggle is not None:
            return toggle
        if name == "hap":
            return bool(self.hap.dictionary_file)
        if name == "malware":
            return bool(self.malware.command)
        return self.mixture is not None

    def language_allowlist(self) -> frozenset[str]:
        return frozenset(known_languages() if self.languages is None else self.languages)

    def permissive_licenses(self) -> frozenset[str]:
        if self.license_file:
            return load_license_file(self.license_file)
        if self.licenses is not None:
            return frozenset(self.licenses)
        return default_permissive_licenses()

    def issue_config(self) -> IssueConfig:
        if not self.stopwords_file:
            return self.issues
        words = frozenset(w.strip().lower() for w in Path(self.stopwords_file).read_text(encoding="utf-8").split())
        return dataclasses.replace(self.issues, stopwords=words)

    def hap_config(self) -> HapConfig:
        words = load_dictionary(self.hap.dictionary_file) if self.hap.dictionary_file else frozenset()
        return HapConfig(words, self.hap.threshold, self.hap.match_mode)

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                value = dataclasses.asdict(value)
                if f.name == "issues":
                    value.pop("stopwords")
                    value = {k: list(v) if isinstance(v, tuple) else v for k, v in value.items()}
                if f.name == "mixture":
                    value["components"] = [
                        {**c, "kinds": list(c["kinds"]) if c["kinds"] is not None else None}
                        for c in value["components"]
                    ]
            elif isinstance(value, dict):
                value = dict(value)
            out[f.name] = value
        return out

    def dump(self, path: str | os.PathLike) -> None:
        path = Path(path)
        data = self.to_dict()
        if path.suffix == ".json":
            text = json.dumps(data, indent=2, sort_keys=True) + "\n"
        else:
            text = yaml.safe_dump(data, sort_keys=True, allow_unicode=True)
        path.write_text(text, encoding="utf-8")

    def _digestable(self) -> dict[str, Any]:
        # referenced files enter by content, so the digest does not depend on where they live
        data = self.to_dict()
        for key in ("workers", "out", "streaming", "input"):
            data.pop(key)
        for key in ("license_file", "stopwords_file"):
            data[key] = _file_digest(data[key])
        data["hap"]["dictionary_file"] = _file_digest(data["hap"]["dictionary_file"])
        if data["mixture"]:
            for comp in data["mixture"]["components"]:
                if comp["source"] != PIPELINE_SOURCE:
                    comp["source"] = _file_digest(comp["source"])
        return data

    def digest(self) -> str:
        data = self._digestable()
        data["stopwords"] = sorted(self.issue_config().stopwords)
        return config_digest(data)

    def section_digest(self, *keys: str) -> str:
        """Digest of the settings one stage depends on, plus the seed."""
        data = self._digestable()
        return config_digest({k: data[k] for k in ("seed",) + keys})


def _file_digest(path: str | None) -> str | None:
    if path is None:
        return None
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _resolve_paths(data: dict[str, Any], base: Path) -> dict[str, Any]:
    """Make file references in a loaded config relative to the config's directory."""

    def fix(value):
        if isinstance(value, str) and value != PIPELINE_SOURCE and not os.path.isabs(value):
            return str(base / value)
        return value

    data = dict(data)
    for key in ("input", "out", "license_file", "stopwords_file"):
        if key in data:
            data[key] = fix(data[key])
    for section, key in (("hap", "dictionary_file"),):
        if isinstance(data.get(section), dict) and key in data[section]:
            data[section] = {**data[section], key: fix(data[section][key])}
    mixture = data.get("mixture")
    if isinstance(mixture, dict) and isinstance(mixture.get("components"), list):
        comps = [{**c, "source": fix(c["source"])} if isinstance(c, dict) and "source" in c else c
                 for c in mixture["components"]]
        data["mixture"] = {**mixture, "components": comps}
    return data


_SECTIONS = {
    "quality": QualityConfig,
    "dedup": DedupConfig,
    "hap": HapSettings,
    "pii": PiiSettings,
    "malware": MalwareSettings,
    "token_counter": TokenCounter,
}


def _tuples(value: Any, keys: tuple[str, ...]) -> Any:
    if not isinstance(value, dict):
        return value
    return {k: tuple(v) if k in keys and isinstance(v, list) else v for k, v in value.items()}


def _build(cls, value: Any, section: str):
    if isinstance(value, cls):
        return value
    if not isinstance(value, dict):
        raise ConfigError(f"config section {section!r} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(value) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(sorted(unknown))}")
    try:
        return cls(**value)
    except TypeError as exc:
        raise ConfigError(f"bad {section} section: {exc}") from None
