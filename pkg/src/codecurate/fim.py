"""Fill-in-the-middle sample construction.

Each document independently becomes either a plain causal (CLM) sample or a
FIM sample, with probability ``alpha`` of staying CLM. FIM samples are cut at
two distinct character boundaries and serialized in PSM or SPM order with
``<fim_prefix>``-style control tokens. All randomness comes from a generator derived
from (seed, doc id), so a document's outcome does not depend on its neighbours.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .document import Document
from .errors import ConfigError, FimError
from .seeding import doc_rng

CLM, PSM, SPM = "CLM", "PSM", "SPM"
MODES = (CLM, PSM, SPM)
SPM_LAYOUTS = ("header", "reordered")


@dataclass(frozen=True)
class FimTokens:
    prefix_tok: str = "<fim_prefix>"
    suffix_tok: str = "<fim_suffix>"
    middle_tok: str = "<fim_middle>"

    def __post_init__(self):
        toks = self.all()
        if any(not t for t in toks):
            raise ConfigError("FIM control tokens must be non-empty")
        for i, a in enumerate(toks):
            for j, b in enumerate(toks):
                if i != j and a in b:
                    raise ConfigError(f"FIM control token {a!r} is contained in {b!r}")

    def all(self) -> tuple[str, str, str]:
        return (self.prefix_tok, self.suffix_tok, self.middle_tok)


@dataclass(frozen=True)
class FimConfig:
    alpha: float = 0.5
    psm_fraction: float = 0.5
    tokens: FimTokens = FimTokens()
    min_doc_chars: int = 10
    spm_layout: str = "header"

    def __post_init__(self):
        if isinstance(self.tokens, dict):
            object.__setattr__(self, "tokens", FimTokens(**self.tokens))
        for name in ("alpha", "psm_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"fim.{name} must lie in [0, 1]")
        if self.min_doc_chars < 1:
            raise ConfigError("fim.min_doc_chars must be at least 1")
        if self.spm_layout not in SPM_LAYOUTS:
            raise ConfigError(f"fim.spm_layout must be one of {SPM_LAYOUTS}")


@dataclass(frozen=True)
class FimSample:
    doc_id: str
    mode: str
    prefix: str
    middle: str
    suffix: str
    serialized: str

    @property
    def cuts(self) -> tuple[int, int] | None:
        if self.mode == CLM:
            return None
        return len(self.prefix), len(self.prefix) + len(self.middle)


def split_document(content: str, rng: random.Random, min_doc_chars: int = 1) -> tuple[str, str, str]:
    """Cut at two distinct boundaries drawn uniformly from 0..len(content)."""
    if len(content) < max(min_doc_chars, 1):
        raise FimError(f"document of {len(content)} characters is too short for FIM", code="fim_too_short")
    a, b = sorted(rng.sample(range(len(content) + 1), 2))
    return content[:a], content[a:b], content[b:]


def serialize(mode: str, prefix: str, middle: str, suffix: str, tokens: FimTokens = FimTokens(),
              spm_layout: str = "header") -> str:
    p, s, m = tokens.all()
    if mode == PSM:
        return p + prefix + s + suffix + m + middle
    if mode == SPM:
        if spm_layout == "reordered":
            return s + suffix + p + prefix + m + middle
        return p + s + suffix + m + prefix + middle
    raise FimError(f"cannot serialize mode {mode!r}")


def _locate(text: str, token: str) -> int:
    first = text.find(token)
    if first == -1:
        raise FimError(f"missing control token {token!r}")
    if text.find(token, first + 1) != -1:
        raise FimError(f"duplicated control token {token!r}")
    return first


def parse_fim(serialized: str, tokens: FimTokens = FimTokens(), mode: str | None = None,
              prefix_len: int | None = None, spm_layout: str = "header") -> tuple[str, str, str, str]:
    """Invert ``serialize``.

    The header SPM layout places prefix and middle back to back, so their
    boundary cannot be recovered from the text alone; ``prefix_len`` supplies
    it. Likewise a PSM sample with an empty prefix reads exactly like an SPM
    header sample, so ``mode`` is needed to tell them apart in that case.
    """
    p_tok, s_tok, m_tok = tokens.all()
    ip, is_, im = (_locate(serialized, t) for t in (p_tok, s_tok, m_tok))

    if spm_layout == "reordered" and is_ == 0 and is_ < ip < im:
        if mode not in (None, SPM):
            raise FimError(f"sample layout is SPM but mode {mode!r} was given")
        suffix = serialized[len(s_tok) : ip]
        prefix = serialized[ip + len(p_tok) : im]
        return SPM, prefix, serialized[im + len(m_tok) :], suffix

    if ip != 0 or not ip < is_ < im:
        raise FimError("control tokens out of order")
    between = serialized[len(p_tok) : is_]
    suffix = serialized[is_ + len(s_tok) : im]
    tail = serialized[im + len(m_tok) :]
    if mode is None:
        if between:
            mode = PSM
        elif prefix_len is not None and spm_layout == "header":
            mode = SPM
        else:
            raise FimError("empty-prefix PSM and header SPM are indistinguishable without a mode hint")
    if mode == PSM:
        return PSM, between, tail, suffix
    if mode != SPM or between or spm_layout != "header":
        raise FimError(f"sample does not match mode {mode!r}")
    if prefix_len is None or not 0 <= prefix_len <= len(tail):
        raise FimError("header SPM parsing needs a prefix length within the sample")
    return SPM, tail[:prefix_len], tail[prefix_len:], suffix


def has_control_token(content: str, tokens: FimTokens) -> bool:
    return any(t in content for t in tokens.all())


def build_sample(doc: Document, cfg: FimConfig, rng: random.Random) -> tuple[FimSample, str | None]:
    """Return the sample and, when the planned mode could not be honoured, a counter name.

    Draw order is fixed: CLM-or-FIM, then PSM-or-SPM, then the two cuts.
    """
    content = doc.content
    clm = FimSample(doc.id, CLM, content, "", "", content)
    if has_control_token(content, cfg.tokens):
        return clm, "fim_token_collision"
    if rng.random() < cfg.alpha:
        return clm, None
    mode = PSM if rng.random() < cfg.psm_fraction else SPM
    try:
        prefix, middle, suffix = split_document(content, rng, cfg.min_doc_chars)
    except FimError:
        return clm, "fim_too_short"
    return FimSample(doc.id, mode, prefix, middle, suffix,
                     serialize(mode, prefix, middle, suffix, cfg.tokens, cfg.spm_layout)), None


def fim_document(doc: Document, cfg: FimConfig, seed: int, drop_original: bool = False) -> tuple[Document, str | None]:
    """Attach ``mode``, ``serialized`` and ``fim_cuts`` to a document record."""
    sample, counter = build_sample(doc, cfg, doc_rng(seed, "fim", doc.id))
    extra = dict(doc.extra)
    extra["mode"] = sample.mode
    extra["serialized"] = sample.serialized
    extra["fim_cuts"] = list(sample.cuts) if sample.cuts else None
    out = doc.replace(extra=extra)
    if drop_original:
        out = out.replace(content="")
    return out, counter
