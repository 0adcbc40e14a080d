"""HAP keyword filtering, PII detection and redaction, malware-scanner hook.

PII is found by deterministic rules rather than a learned model. Anything
implementing ``PiiDetector`` can be swapped in; redaction only relies on the
span contract (sorted, non-overlapping, in range).
"""

from __future__ import annotations

import ipaddress
import math
import os
import random
import re
import shlex
import subprocess
import tempfile
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

from .document import KEEP, Document, FilterVerdict
from .errors import ConfigError, ScannerUnavailable, SpanConflictError

# -- HAP -----------------------------------------------------------------------

MATCH_MODES = ("token", "substring")


@dataclass(frozen=True)
class HapConfig:
    dictionary: frozenset[str] = frozenset()
    threshold: int = 2
    match_mode: str = "token"

    def __post_init__(self):
        if self.threshold < 0:
            raise ConfigError("hap.threshold must be >= 0")
        if self.match_mode not in MATCH_MODES:
            raise ConfigError(f"hap.match_mode must be one of {MATCH_MODES}")
        object.__setattr__(self, "dictionary", frozenset(w.lower() for w in self.dictionary if w))


def load_dictionary(path: str | os.PathLike) -> frozenset[str]:
    """One keyword per line; blank lines and ``#`` comments are ignored."""
    words = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        word = line.strip()
        if word and not word.startswith("#"):
            words.add(word.lower())
    return frozenset(words)


def _bounded(text: str, start: int, end: int) -> bool:
    return (start == 0 or not text[start - 1].isalpha()) and (end == len(text) or not text[end].isalpha())


def hap_count(content: str, cfg: HapConfig) -> int:
    """Case-insensitive keyword occurrences across code and comments alike.

    In ``token`` mode a match must not touch a letter on either side, so
    ``ass`` does not fire inside ``class``.
    """
    text = content.lower()
    total = 0
    for word in cfg.dictionary:
        if cfg.match_mode == "substring":
            total += text.count(word)
            continue
        start = text.find(word)
        while start != -1:
            end = start + len(word)
            if _bounded(text, start, end):
                total += 1
            start = text.find(word, start + 1)
    return total


def hap_filter(doc: Document, cfg: HapConfig) -> FilterVerdict:
    count = int(doc.annotations["hap_count"]) if "hap_count" in doc.annotations else hap_count(doc.content, cfg)
    if count > cfg.threshold:
        return FilterVerdict.drop("hap_exceeded")
    return KEEP


def annotate_hap(doc: Document, cfg: HapConfig) -> Document:
    return doc.annotate(hap_count=hap_count(doc.content, cfg))


# -- PII detection -------------------------------------------------------------

PII_KINDS = ("email", "ip_address", "key", "name", "username", "password")

DEFAULT_TOKENS = {
    "email": "<EMAIL>",
    "key": "<KEY>",
    "password": "<PASSWORD>",
    "name": "<NAME>",
    "username": "<NAME>",
}


@dataclass(frozen=True)
class PiiSpan:
    kind: str
    start: int
    end: int
    matched_text: str

    def __post_init__(self):
        if self.kind not in PII_KINDS:
            raise ValueError(f"unknown PII kind {self.kind!r}")
        if not 0 <= self.start < self.end:
            raise ValueError(f"empty or negative span {self.start}:{self.end}")


class PiiDetector(Protocol):
    def detect(self, content: str, source_kind: str = "code") -> list[PiiSpan]: ...


_EMAIL = re.compile(
    r"(?<![\w.%+-])[A-Za-z0-9][A-Za-z0-9._%+-]*@"
    r"[A-Za-z0-9](?:[A-Za-z0-9-]*[A-Za-z0-9])?(?:\.[A-Za-z0-9](?:[A-Za-z0-9-]*[A-Za-z0-9])?)*\.[A-Za-z]{2,}"
    r"(?![\w-])"
)
_OCTET = r"(?:25[0-5]|2[0-4]\d|1\d\d|[1-9]?\d)"
_IPV4 = re.compile(rf"(?<![\w.]){_OCTET}(?:\.{_OCTET}){{3}}(?!\w|\.\d)")
_IPV6 = re.compile(r"(?<![\w:.])(?:[0-9A-Fa-f]{0,4}:){2,7}(?:[0-9A-Fa-f]{1,4}|(?:\d{1,3}\.){3}\d{1,3})?(?![\w:])")

_KEY_PATTERNS = [
    re.compile(r"\b(?:AKIA|ASIA)[0-9A-Z]{16}\b"),
    re.compile(r"\bgh[pousr]_[A-Za-z0-9]{36,255}\b"),
    re.compile(r"\bgithub_pat_[A-Za-z0-9_]{22,255}\b"),
    re.compile(r"\bxox[abprs]-[A-Za-z0-9-]{10,}"),
    re.compile(r"\bsk_(?:live|test)_[A-Za-z0-9]{16,}\b"),
    re.compile(r"\bsk-[A-Za-z0-9_-]{20,}"),
    re.compile(r"\bAIza[0-9A-Za-z_-]{35}(?![\w-])"),
    re.compile(r"-----BEGIN (?:[A-Z0-9]+ )*PRIVATE KEY-----[\s\S]*?-----END (?:[A-Z0-9]+ )*PRIVATE KEY-----"),
]

_KEY_NAMES = r"(?:api[_-]?key|apikey|secret(?:[_-]?key)?|client[_-]?secret|access[_-]?token|auth[_-]?token|private[_-]?key|access[_-]?key(?:[_-]?id)?|token)"
_PASSWORD_NAMES = r"(?:password|passwd|passwrd|pwd|pass|db[_-]?pass)"
_USER_NAMES = r"(?:user|username|user[_-]?name|login|user[_-]?id)"


def _quoted_assignment(names: str) -> re.Pattern:
    # KEY = "value" / "key": 'value' / cfg['key'] = 'value' / key := `value`
    return re.compile(
        rf"""(?i)(?<![A-Za-z0-9])[\w-]*{names}["']?\]?\s*(?::=|=>|[:=])\s*(?P<q>["'`])(?P<value>[^"'`\n]+)(?P=q)"""
    )


def _bare_assignment(names: str) -> re.Pattern:
    # config-style line: KEY=value, key: value (value runs to end of line)
    return re.compile(
        rf"""(?im)^[ \t]*(?:export[ \t]+)?[\w.-]*{names}[ \t]*[:=][ \t]*(?P<value>[^\s"'`()\[\]{{}}$<>,;.]+)[ \t]*\r?$"""
    )


_ASSIGNMENTS = {
    "key": (_quoted_assignment(_KEY_NAMES), _bare_assignment(_KEY_NAMES)),
    "password": (_quoted_assignment(_PASSWORD_NAMES), _bare_assignment(_PASSWORD_NAMES)),
    "username": (_quoted_assignment(_USER_NAMES), _bare_assignment(_USER_NAMES)),
}

_HANDLE = re.compile(r"(?<![\w@./])@(?P<value>[A-Za-z0-9](?:[A-Za-z0-9-]{0,38}))(?![\w@-])")
_AUTHOR = re.compile(r"^\[author:[ \t]*(?P<value>[^\n]*?)[ \t]*\][ \t]*$", re.MULTILINE)

_NOT_VALUES = {"none", "null", "nil", "true", "false", "undefined", "changeme", "password", "secret", "xxx", "***"}


def shannon_entropy(text: str) -> float:
    counts = Counter(text)
    n = len(text)
    return -sum(c / n * math.log2(c / n) for c in counts.values())


@dataclass
class RulePiiDetector:
    """Regex and assignment-pattern detector covering every PII kind.

    ``name`` spans come only from issue-thread author headers and ``@handle``
    mentions are only looked for in issues.
    """

    min_key_length: int = 20
    min_key_entropy: float = 3.0
    tokens: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_TOKENS))

    def candidates(self, content: str, source_kind: str = "code") -> list[PiiSpan]:
        placeholders = set(self.tokens.values())
        found: list[PiiSpan] = []

        def add(kind: str, start: int, end: int):
            text = content[start:end]
            if start < end and text not in placeholders:
                found.append(PiiSpan(kind, start, end, text))

        for m in _EMAIL.finditer(content):
            add("email", m.start(), m.end())
        for m in _IPV4.finditer(content):
            add("ip_address", m.start(), m.end())
        for m in _IPV6.finditer(content):
            if _is_ipv6(m.group()):
                add("ip_address", m.start(), m.end())
        for pattern in _KEY_PATTERNS:
            for m in pattern.finditer(content):
                add("key", m.start(), m.end())
        for kind, patterns in _ASSIGNMENTS.items():
            for pattern in patterns:
                for m in pattern.finditer(content):
                    value = m.group("value")
                    if value.strip().lower() in _NOT_VALUES:
                        continue
                    if kind == "key" and not self._secret_like(value):
                        continue
                    add(kind, m.start("value"), m.end("value"))
        if source_kind == "issue":
            for m in _AUTHOR.finditer(content):
                add("name", m.start("value"), m.end("value"))
            for m in _HANDLE.finditer(content):
                add("username", m.start("value"), m.end("value"))
        return found

    def _secret_like(self, value: str) -> bool:
        return len(value) >= self.min_key_length and " " not in value and shannon_entropy(value) >= self.min_key_entropy

    def detect(self, content: str, source_kind: str = "code") -> list[PiiSpan]:
        return resolve_overlaps(self.candidates(content, source_kind))


def _is_ipv6(text: str) -> bool:
    groups = [g for g in re.split(r"[:.]", text) if g]
    # three non-empty groups rule out slices (a[1::2]) and Haskell type annotations (::)
    if len(groups) < 3:
        return False
    try:
        ipaddress.IPv6Address(text)
    except ValueError:
        return False
    return True


_KIND_RANK = {kind: i for i, kind in enumerate(("key", "password", "email", "ip_address", "username", "name"))}


def resolve_overlaps(spans: Iterable[PiiSpan]) -> list[PiiSpan]:
    """Greedy: longest span first, then earliest; survivors sorted by start."""
    chosen: list[PiiSpan] = []
    for span in sorted(set(spans), key=lambda s: (s.start - s.end, s.start, _KIND_RANK[s.kind])):
        if all(span.end <= c.start or span.start >= c.end for c in chosen):
            chosen.append(span)
    return sorted(chosen, key=lambda s: s.start)


DEFAULT_DETECTOR = RulePiiDetector()


def detect_pii(content: str, source_kind: str = "code", detector: PiiDetector | None = None) -> list[PiiSpan]:
    spans = (detector or DEFAULT_DETECTOR).detect(content, source_kind)
    check_spans(content, spans)
    return spans


def check_spans(content: str, spans: Iterable[PiiSpan]) -> None:
    previous_end = 0
    for span in spans:
        if span.start < previous_end or span.end > len(content) or span.start >= span.end:
            raise SpanConflictError(f"span {span.start}:{span.end} ({span.kind}) overlaps, is unsorted or out of range")
        if content[span.start : span.end] != span.matched_text:
            raise SpanConflictError(f"span {span.start}:{span.end} does not match its recorded text")
        previous_end = span.end


# -- redaction -----------------------------------------------------------------

DOC_NETS_V4 = tuple(ipaddress.ip_network(n) for n in ("192.0.2.0/24", "198.51.100.0/24", "203.0.113.0/24"))
DOC_NET_V6 = ipaddress.ip_network("2001:db8::/32")


def synthetic_ip(original: str, rng: random.Random) -> str:
    """A documentation-range address of the same family as ``original``."""
    if ":" in original:
        return str(DOC_NET_V6[rng.getrandbits(96)])
    net = DOC_NETS_V4[rng.randrange(len(DOC_NETS_V4))]
    return str(net[rng.randrange(1, 255)])


def is_documentation_ip(text: str) -> bool:
    addr = ipaddress.ip_address(text)
    if addr.version == 6:
        return addr in DOC_NET_V6
    return any(addr in net for net in DOC_NETS_V4)


def redact_pii(content: str, spans: list[PiiSpan], rng: random.Random, tokens: dict[str, str] | None = None) -> str:
    check_spans(content, spans)
    tokens = tokens or DEFAULT_TOKENS
    # synthetic addresses are drawn left to right so the rng stream follows reading order
    replacements = [
        synthetic_ip(span.matched_text, rng) if span.kind == "ip_address" else tokens[span.kind] for span in spans
    ]
    out = content
    for span, new in zip(reversed(spans), reversed(replacements)):
        out = out[: span.start] + new + out[span.end :]
    return out


def redact_document(doc: Document, rng: random.Random, detector: PiiDetector | None = None,
                    tokens: dict[str, str] | None = None) -> tuple[Document, list[PiiSpan]]:
    spans = detect_pii(doc.content, doc.source_kind, detector)
    if not spans:
        return doc, spans
    return doc.replace(content=redact_pii(doc.content, spans, rng, tokens)), spans


# -- malware hook --------------------------------------------------------------


@dataclass
class MalwareScanner:
    """Runs an external scanner per document.

    ``command`` is a template with a ``{file}`` placeholder. Exit status 0
    means clean, 1 means infected (the clamscan convention); anything else,
    or a failure to launch, is a scanner error. Errors raise
    ScannerUnavailable when ``strict`` and otherwise keep the document and
    are counted in ``errors``.
    """

    command: str | None = None
    strict: bool = False
    timeout: float = 60.0
    errors: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def configured(self) -> bool:
        return bool(self.command)

    def scan(self, doc: Document) -> FilterVerdict:
        if not self.command:
            return KEEP
        with tempfile.NamedTemporaryFile("wb", suffix=".scan", delete=False) as fh:
            fh.write(doc.content.encode("utf-8"))
            path = fh.name
        try:
            argv = [part.replace("{file}", path) for part in shlex.split(self.command)]
            if path not in argv:
                argv.append(path)
            proc = subprocess.run(argv, capture_output=True, timeout=self.timeout)
            status = proc.returncode
        except (OSError, subprocess.TimeoutExpired) as exc:
            status, reason = None, str(exc)
        else:
            reason = f"exit status {status}: {proc.stderr.decode('utf-8', 'replace').strip()[:200]}"
        finally:
            os.unlink(path)
        if status == 0:
            return KEEP
        if status == 1:
            return FilterVerdict.drop("malware")
        if self.strict:
            raise ScannerUnavailable(f"scanner failed on {doc.id}: {reason}")
        with self._lock:
            self.errors += 1
        return KEEP


def malware_scan_hook(doc: Document, command: str | None, strict: bool = False) -> FilterVerdict:
    return MalwareScanner(command, strict).scan(doc)
