"""Record ingest and persistence, language assignment, allowlist filters, manifests.

Records are stored one JSON object per line (UTF-8, LF-terminated). A path
ending in ``.gz`` is transparently gzip-compressed; compressed output is
written with a zeroed header timestamp so reruns stay byte-identical.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import os
import posixpath
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Iterator

from .document import RECORD_FIELDS, SOURCE_KINDS, Document, FilterVerdict, KEEP
from .errors import ConfigError, RecordError

UNKNOWN = "unknown"


@lru_cache(maxsize=None)
def _language_table() -> dict[str, Any]:
    text = resources.files("codecurate").joinpath("data/languages.json").read_text(encoding="utf-8")
    table = json.loads(text)
    table["languages"] = tuple(table["languages"])
    table["max_dots"] = max(key.count(".") for key in table["extensions"]) + 1
    return table


def known_languages() -> tuple[str, ...]:
    """The 116 supported language names, in their canonical listing order."""
    return _language_table()["languages"]


class LanguageTag(str):
    """A language name from the supported list, or ``unknown``."""

    __slots__ = ()

    def __new__(cls, name: str):
        if name != UNKNOWN and name not in _language_set():
            raise ConfigError(f"unknown language tag {name!r}")
        return super().__new__(cls, name)


@lru_cache(maxsize=None)
def _language_set() -> frozenset[str]:
    return frozenset(known_languages())


def assign_language(path: str) -> LanguageTag:
    """Map a file path to a language by its extension (or conventional basename)."""
    table = _language_table()
    base = posixpath.basename(path.replace("\\", "/"))
    lang = table["basenames"].get(base)
    if lang is not None:
        return LanguageTag(lang)
    parts = base.lower().split(".")
    # parts[0] is the stem; a leading dot (".bashrc") leaves an empty stem and no extension
    if len(parts) < 2 or not parts[0]:
        return LanguageTag(UNKNOWN)
    extensions = table["extensions"]
    # longest suffix first so ``gradle.kts`` wins over ``kts``
    for n in range(min(table["max_dots"], len(parts) - 1), 0, -1):
        lang = extensions.get(".".join(parts[-n:]))
        if lang is not None:
            return LanguageTag(lang)
    return LanguageTag(UNKNOWN)


def all_languages() -> frozenset[str]:
    return _language_set()


def filter_language(doc: Document, allowlist: Iterable[str]) -> FilterVerdict:
    if assign_language(doc.path) in allowlist:
        return KEEP
    return FilterVerdict.drop("lang_not_allowed")


@lru_cache(maxsize=None)
def default_permissive_licenses() -> frozenset[str]:
    text = resources.files("codecurate").joinpath("data/permissive_licenses.txt").read_text(encoding="utf-8")
    return frozenset(_read_list(text))


def load_license_file(path: str | os.PathLike) -> frozenset[str]:
    return frozenset(_read_list(Path(path).read_text(encoding="utf-8")))


def _read_list(text: str) -> list[str]:
    return [line.strip() for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")]


def filter_license(doc: Document, permissive: Iterable[str]) -> FilterVerdict:
    if not doc.license:
        return FilterVerdict.drop("license_missing")
    if doc.license in permissive:
        return KEEP
    return FilterVerdict.drop("license_not_permissive")


# -- record files --------------------------------------------------------------


def _open_read(path: str | os.PathLike):
    path = os.fspath(path)
    if path.endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


@contextmanager
def _open_write(path: str | os.PathLike):
    path = os.fspath(path)
    if path.endswith(".gz"):
        with open(path, "wb") as raw, gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as fh:
            yield fh
    else:
        with open(path, "wb") as fh:
            yield fh


def _check_str(record: dict, key: str, line: int, offset: int, optional: bool = False) -> None:
    value = record.get(key)
    if value is None and optional:
        return
    if not isinstance(value, str):
        raise RecordError(f"field {key!r} must be a string", line, offset)
    try:
        value.encode("utf-8")
    except UnicodeEncodeError:
        raise RecordError(f"field {key!r} is not valid UTF-8", line, offset) from None


def document_from_record(record: Any, line: int | None = None, offset: int | None = None) -> Document:
    if not isinstance(record, dict):
        raise RecordError("record is not a JSON object", line, offset)
    missing = [k for k in ("id", "path", "content", "repo_id", "source_kind") if k not in record]
    if missing:
        raise RecordError(f"missing field(s) {', '.join(missing)}", line, offset)
    for key in ("id", "path", "content", "repo_id", "source_kind"):
        _check_str(record, key, line, offset)
    for key in ("license", "language"):
        _check_str(record, key, line, offset, optional=True)
    if not record["id"]:
        raise RecordError("empty id", line, offset)
    if record["source_kind"] not in SOURCE_KINDS:
        raise RecordError(f"unknown source_kind {record['source_kind']!r}", line, offset)
    language = record.get("language")
    if language is not None:
        if record["source_kind"] != "code":
            raise RecordError("language set on a non-code record", line, offset)
        if language not in all_languages():
            raise RecordError(f"unknown language {language!r}", line, offset)
    annotations = record.get("annotations") or {}
    if not isinstance(annotations, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in annotations.items()
    ):
        raise RecordError("annotations must map strings to strings", line, offset)
    extra = {k: v for k, v in record.items() if k not in RECORD_FIELDS}
    return Document(
        id=record["id"],
        path=record["path"],
        content=record["content"],
        repo_id=record["repo_id"],
        source_kind=record["source_kind"],
        license=record.get("license"),
        language=language,
        annotations=dict(annotations),
        extra=extra,
    )


def read_records(path: str | os.PathLike) -> Iterator[Document]:
    """Stream documents from a record file in file order.

    Raises RecordError naming the 1-based line number and byte offset of the
    first malformed line, and on any repeated id.
    """
    seen: set[str] = set()
    offset = 0
    with _open_read(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            start = offset
            offset += len(raw)
            body = raw[:-1] if raw.endswith(b"\n") else raw
            if not body.strip():
                raise RecordError("empty record", lineno, start)
            try:
                record = json.loads(body.decode("utf-8"))
            except UnicodeDecodeError as exc:
                raise RecordError(f"invalid UTF-8 ({exc.reason})", lineno, start) from None
            except json.JSONDecodeError as exc:
                raise RecordError(f"malformed JSON: {exc.msg} at column {exc.colno}", lineno, start) from None
            doc = document_from_record(record, lineno, start)
            if doc.id in seen:
                raise RecordError(f"duplicate id {doc.id!r}", lineno, start, code="duplicate_id")
            seen.add(doc.id)
            yield doc


def encode_record(doc: Document) -> bytes:
    return (json.dumps(doc.to_record(), ensure_ascii=False, separators=(",", ":")) + "\n").encode("utf-8")


def write_records(docs: Iterable[Document], path: str | os.PathLike) -> int:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with _open_write(path) as out:
        for doc in docs:
            out.write(encode_record(doc))
            count += 1
    return count


# -- manifests -----------------------------------------------------------------


def config_digest(config: Any) -> str:
    """SHA-256 over canonical JSON, so key order never changes the digest."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), ensure_ascii=False, default=_jsonable)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _jsonable(value: Any) -> Any:
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    if hasattr(value, "__dataclass_fields__"):
        return asdict(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


@dataclass
class PipelineManifest:
    stage_name: str
    input_count: int = 0
    kept_count: int = 0
    dropped_count: int = 0
    drop_reasons: dict[str, int] = field(default_factory=dict)
    config_digest: str = ""
    seed: int = 0
    # stage-specific statistics and warnings (histograms, counters, skip notes)
    extra: dict[str, Any] = field(default_factory=dict)

    def record(self, verdict: FilterVerdict) -> None:
        self.input_count += 1
        if verdict.keep:
            self.kept_count += 1
        else:
            self.dropped_count += 1
            key = verdict.reason_key
            self.drop_reasons[key] = self.drop_reasons.get(key, 0) + 1

    def bump(self, counter: str, by: int = 1) -> None:
        counters = self.extra.setdefault("counters", {})
        counters[counter] = counters.get(counter, 0) + by

    def check(self) -> None:
        if min(self.input_count, self.kept_count, self.dropped_count) < 0:
            raise ValueError(f"{self.stage_name}: negative count")
        if self.input_count != self.kept_count + self.dropped_count:
            raise ValueError(
                f"{self.stage_name}: input {self.input_count} != kept {self.kept_count} + dropped {self.dropped_count}"
            )
        if sum(self.drop_reasons.values()) != self.dropped_count:
            raise ValueError(f"{self.stage_name}: drop reasons do not sum to dropped_count")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"{self.stage_name}: seed outside 64-bit range")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def write(self, out_dir: str | os.PathLike) -> Path:
        self.check()
        path = Path(out_dir) / "manifest" / f"{self.stage_name}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | os.PathLike) -> PipelineManifest:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**data)
