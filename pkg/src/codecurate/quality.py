"""Code-quality rules and issue-thread filters.

Every rule is a pure function of ``(doc, cfg)`` returning a FilterVerdict.
``apply_quality`` runs all rules that apply to a document and reports every
violated one, so manifests show the full picture rather than the first hit.
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass, field
from functools import lru_cache
from html.parser import HTMLParser
from importlib import resources

from .corpus_io import assign_language
from .document import KEEP, Document, FilterVerdict
from .errors import ConfigError, IssueFormatError

XML_MARKER = "<?xml version="
_ASCII_LETTERS = (string.ascii_letters).encode("ascii")


@dataclass(frozen=True)
class QualityConfig:
    min_alpha_fraction: float = 0.25
    xml_probe_chars: int = 100
    html_visible_min_fraction: float = 0.20
    html_visible_min_chars: int = 100
    structured_min_chars: int = 50
    structured_max_chars: int = 5000

    def __post_init__(self):
        for name in ("min_alpha_fraction", "html_visible_min_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"quality.{name} must lie in [0, 1]")
        for name in ("xml_probe_chars", "html_visible_min_chars", "structured_min_chars", "structured_max_chars"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"quality.{name} must be positive")
        if self.structured_min_chars > self.structured_max_chars:
            raise ConfigError("quality.structured_min_chars exceeds structured_max_chars")


@lru_cache(maxsize=None)
def default_stopwords() -> frozenset[str]:
    text = resources.files("codecurate").joinpath("data/stopwords_en.txt").read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


@dataclass(frozen=True)
class IssueConfig:
    bot_patterns: tuple[str, ...] = (r"\[bot\]$", r"-bot$")
    autogen_patterns: tuple[str, ...] = (r"^This issue has been automatically.*(?:\n|$)",)
    min_engaged_users: int = 2
    english_min_stopword_fraction: float = 0.05
    english_min_tokens: int = 20
    stopwords: frozenset[str] = field(default_factory=default_stopwords)

    def __post_init__(self):
        try:
            for pattern in self.bot_patterns + self.autogen_patterns:
                re.compile(pattern)
        except re.error as exc:
            raise ConfigError(f"issue filter pattern {exc.pattern!r}: {exc}") from None
        if self.min_engaged_users < 0 or self.english_min_tokens < 0:
            raise ConfigError("issue thresholds must be non-negative")
        if not 0.0 <= self.english_min_stopword_fraction <= 1.0:
            raise ConfigError("issue.english_min_stopword_fraction must lie in [0, 1]")

    @property
    def bot_regex(self) -> re.Pattern:
        return _compile_any(self.bot_patterns, 0)

    @property
    def autogen_regex(self) -> re.Pattern:
        return _compile_any(self.autogen_patterns, re.MULTILINE)


@lru_cache(maxsize=64)
def _compile_any(patterns: tuple[str, ...], flags: int) -> re.Pattern:
    if not patterns:
        return re.compile(r"(?!)")
    return re.compile("|".join(f"(?:{p})" for p in patterns), flags)


# -- code rules ----------------------------------------------------------------


def alphabetic_fraction(content: str) -> float:
    """Share of Unicode letters among all characters; 0 for empty text."""
    if not content:
        return 0.0
    if content.isascii():
        raw = content.encode("ascii")
        letters = len(raw) - len(raw.translate(None, _ASCII_LETTERS))
    else:
        letters = sum(map(str.isalpha, content))
    return letters / len(content)


def rule_min_alpha(doc: Document, cfg: QualityConfig) -> FilterVerdict:
    if alphabetic_fraction(doc.content) < cfg.min_alpha_fraction:
        return FilterVerdict.drop("low_alpha")
    return KEEP


def rule_xml_header(doc: Document, cfg: QualityConfig) -> FilterVerdict:
    if _language_of(doc) == "XSLT":
        return KEEP
    # a match is inside the window iff it starts before xml_probe_chars
    if doc.content.find(XML_MARKER, 0, cfg.xml_probe_chars - 1 + len(XML_MARKER)) != -1:
        return FilterVerdict.drop("xml_header")
    return KEEP


class _VisibleText(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.parts: list[str] = []
        self._hidden = 0

    def handle_starttag(self, tag, attrs):
        if tag in ("script", "style"):
            self._hidden += 1

    def handle_endtag(self, tag):
        if tag in ("script", "style") and self._hidden:
            self._hidden -= 1

    def handle_data(self, data):
        if not self._hidden:
            self.parts.append(data)


_WS = re.compile(r"\s+")


def visible_text(markup: str) -> str:
    """Text nodes outside script/style, entity-decoded, whitespace collapsed."""
    parser = _VisibleText()
    parser.feed(markup)
    parser.close()
    return _WS.sub(" ", "".join(parser.parts)).strip()


def rule_html_visible(doc: Document, cfg: QualityConfig) -> FilterVerdict:
    total = len(doc.content)
    visible = len(visible_text(doc.content))
    if total and visible >= cfg.html_visible_min_chars and visible / total >= cfg.html_visible_min_fraction:
        return KEEP
    return FilterVerdict.drop("html_low_visible")


def rule_structured_size(doc: Document, cfg: QualityConfig) -> FilterVerdict:
    if cfg.structured_min_chars <= len(doc.content) <= cfg.structured_max_chars:
        return KEEP
    return FilterVerdict.drop("structured_size")


def _language_of(doc: Document) -> str:
    return doc.language or assign_language(doc.path)


def code_rules(doc: Document):
    """The rules that apply to a code document, selected by its language."""
    rules = [rule_min_alpha, rule_xml_header]
    language = _language_of(doc)
    if language == "HTML":
        rules.append(rule_html_visible)
    elif language in ("JSON", "YAML"):
        rules.append(rule_structured_size)
    return rules


# -- issues --------------------------------------------------------------------

_HEADER = re.compile(r"^\[author:[ \t]*(?P<author>[^\n]*?)[ \t]*\][ \t]*(?:\n|$)", re.MULTILINE)


@dataclass(frozen=True)
class Comment:
    author: str
    header: str
    body: str
    header_start: int

    @property
    def text(self) -> str:
        return self.header + self.body


def parse_issue(content: str) -> tuple[str, list[Comment]]:
    """Split an issue thread into its leading whitespace and comment blocks.

    A thread is a sequence of blocks, each opened by a line
    ``[author: <name>]`` and running to the next such line.
    """
    headers = list(_HEADER.finditer(content))
    if not headers:
        raise IssueFormatError("issue content has no [author: ...] comment headers")
    prelude = content[: headers[0].start()]
    if prelude.strip():
        raise IssueFormatError("text before the first comment header")
    comments = []
    for i, match in enumerate(headers):
        author = match.group("author")
        if not author:
            raise IssueFormatError(f"comment {i + 1} has an empty author")
        end = headers[i + 1].start() if i + 1 < len(headers) else len(content)
        comments.append(Comment(author, match.group(0), content[match.end() : end], match.start()))
    return prelude, comments


def is_english(text: str, cfg: IssueConfig) -> bool:
    tokens = text.split()
    if len(tokens) < cfg.english_min_tokens:
        return True
    hits = sum(1 for t in tokens if t.strip(string.punctuation).lower() in cfg.stopwords)
    return hits / len(tokens) >= cfg.english_min_stopword_fraction


def filter_issue(doc: Document, cfg: IssueConfig) -> tuple[FilterVerdict, Document]:
    """Clean an issue thread and judge what is left.

    Bot comments and auto-generated spans are removed from the content; the
    returned document carries the cleaned thread (unchanged if nothing matched).
    """
    prelude, comments = parse_issue(doc.content)
    bot = cfg.bot_regex
    autogen = cfg.autogen_regex
    kept: list[Comment] = []
    changed = False
    for comment in comments:
        if bot.search(comment.author):
            changed = True
            continue
        body = autogen.sub("", comment.body)
        if body != comment.body:
            changed = True
            if not body.strip():
                continue
            comment = Comment(comment.author, comment.header, body, comment.header_start)
        kept.append(comment)

    humans = {c.author for c in comments if not bot.search(c.author)}
    reasons = []
    if not is_english(" ".join(c.body for c in kept), cfg):
        reasons.append("non_english")
    if len(humans) < cfg.min_engaged_users:
        reasons.append("low_engagement")
    if changed:
        doc = doc.replace(content=prelude + "".join(c.text for c in kept))
    return (FilterVerdict.drop(*reasons) if reasons else KEEP), doc


# -- dispatch ------------------------------------------------------------------


def evaluate(doc: Document, cfg: QualityConfig, issue_cfg: IssueConfig | None = None) -> tuple[FilterVerdict, Document]:
    """Verdict plus the (possibly cleaned) document the pipeline should carry on."""
    if doc.source_kind == "code":
        return FilterVerdict.merge(rule(doc, cfg) for rule in code_rules(doc)), doc
    if doc.source_kind == "issue":
        return filter_issue(doc, issue_cfg or IssueConfig())
    return KEEP, doc


def apply_quality(doc: Document, cfg: QualityConfig, issue_cfg: IssueConfig | None = None) -> FilterVerdict:
    return evaluate(doc, cfg, issue_cfg)[0]
