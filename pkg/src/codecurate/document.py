"""Core record types shared by every stage."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any

SOURCE_KINDS = ("code", "issue", "natural_language")

# Closed set of drop reasons, in the canonical order used when several apply.
REASON_CODES = (
    "lang_not_allowed",
    "license_missing",
    "license_not_permissive",
    "low_alpha",
    "xml_header",
    "html_low_visible",
    "structured_size",
    "non_english",
    "low_engagement",
    "exact_dup",
    "fuzzy_dup",
    "hap_exceeded",
    "malware",
)
_REASON_RANK = {code: i for i, code in enumerate(REASON_CODES)}

# Top-level record keys in on-disk order. Anything else a stage adds is kept in
# ``Document.extra`` and written after these.
RECORD_FIELDS = ("id", "path", "content", "repo_id", "license", "source_kind", "language", "annotations")


@dataclass(frozen=True, slots=True)
class Document:
    id: str
    path: str
    content: str
    repo_id: str
    source_kind: str
    license: str | None = None
    language: str | None = None
    annotations: dict[str, str] = field(default_factory=dict)
    extra: dict[str, Any] = field(default_factory=dict)

    def replace(self, **changes: Any) -> Document:
        return dataclasses.replace(self, **changes)

    def annotate(self, **values: Any) -> Document:
        merged = dict(self.annotations)
        merged.update({k: str(v) for k, v in values.items()})
        return dataclasses.replace(self, annotations=merged)

    @property
    def training_text(self) -> str:
        """Text a trainer would consume: the serialized sample if present."""
        return self.extra.get("serialized", self.content)

    def to_record(self) -> dict[str, Any]:
        record: dict[str, Any] = {
            "id": self.id,
            "path": self.path,
            "content": self.content,
            "repo_id": self.repo_id,
            "license": self.license,
            "source_kind": self.source_kind,
            "language": self.language,
            "annotations": self.annotations,
        }
        record.update(self.extra)
        return record


@dataclass(frozen=True, slots=True)
class FilterVerdict:
    """Keep/drop decision. ``reasons`` is empty exactly when ``keep`` is true."""

    keep: bool
    reasons: tuple[str, ...] = ()

    def __post_init__(self):
        if self.keep == bool(self.reasons):
            raise ValueError(f"inconsistent verdict keep={self.keep} reasons={self.reasons}")

    @classmethod
    def ok(cls) -> FilterVerdict:
        return KEEP

    @classmethod
    def drop(cls, *reasons: str) -> FilterVerdict:
        return cls(False, tuple(reasons))

    @classmethod
    def merge(cls, verdicts) -> FilterVerdict:
        reasons = {reason for verdict in verdicts for reason in verdict.reasons}
        if not reasons:
            return KEEP
        return cls.drop(*sorted(reasons, key=lambda r: (_REASON_RANK.get(r, len(_REASON_RANK)), r)))

    @property
    def reason_key(self) -> str:
        """Manifest key for this drop: all reasons joined with ``+``."""
        return "+".join(self.reasons)


KEEP = FilterVerdict(True)
