"""Stage orchestration, output tree layout and the stats report.

A run writes, under its output directory:

    stages/NN_<stage>.jsonl   surviving records after each stage (unless streaming)
    manifest/<stage>.json     counts, drop reasons, histograms
    clusters.jsonl            fuzzy-duplicate clusters
    output.jsonl              the final stream
    _PARTIAL                  present only while a run is in progress or after it failed

Stages always run in the canonical order; a disabled stage passes its input
through unchanged and still writes a manifest marked ``skipped``.
"""

from __future__ import annotations

import json
import logging
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .config import STAGES, PipelineConfig
from .corpus_io import (
    UNKNOWN,
    PipelineManifest,
    assign_language,
    filter_language,
    filter_license,
    read_records,
    write_records,
)
from .dedup import content_digest, fuzzy_dedup
from .document import KEEP, Document, FilterVerdict
from .errors import DataError
from .fim import fim_document
from .mixture import PIPELINE_SOURCE, MixtureStats, sample_stream
from .quality import evaluate
from .safety import MalwareScanner, RulePiiDetector, annotate_hap, hap_filter, redact_document
from .seeding import doc_rng

log = logging.getLogger(__name__)

PARTIAL_MARKER = "_PARTIAL"
# kinds that go through dedup and the safety stages; natural-language data passes
CODE_LIKE = ("code", "issue")

STAGE_SETTINGS = {
    "ingest": (),
    "lang_license": ("languages", "licenses", "license_file"),
    "quality": ("quality", "issues", "stopwords_file"),
    "exact_dedup": (),
    "fuzzy_dedup": ("dedup", "group_by"),
    "hap": ("hap",),
    "pii": ("pii",),
    "malware": ("malware",),
    "fim": ("fim", "drop_original"),
    "mix": ("mixture", "token_counter", "repeat"),
}


@dataclass
class RunResult:
    out_dir: Path
    manifests: dict[str, PipelineManifest] = field(default_factory=dict)
    output_count: int = 0


def language_key(doc: Document) -> str:
    if doc.source_kind == "code":
        return doc.language or UNKNOWN
    return doc.source_kind


class _Run:
    def __init__(self, cfg: PipelineConfig, out_dir: Path):
        self.cfg = cfg
        self.out = out_dir
        self.counter = cfg.token_counter
        self.clusters: list[dict] = []

    def manifest(self, stage: str) -> PipelineManifest:
        return PipelineManifest(stage, config_digest=self.cfg.section_digest(*STAGE_SETTINGS[stage]), seed=self.cfg.seed)

    def histogram(self, docs: Iterable[Document]) -> dict[str, dict[str, int]]:
        hist: dict[str, dict[str, int]] = {}
        for doc in docs:
            row = hist.setdefault(language_key(doc), {"docs": 0, "tokens": 0})
            row["docs"] += 1
            row["tokens"] += self.counter.count(doc.training_text)
        return dict(sorted(hist.items()))

    def filter(self, stage: str, docs: list[Document], judge: Callable[[Document], tuple[FilterVerdict, Document]]):
        m = self.manifest(stage)
        kept = []
        for doc in docs:
            verdict, doc = judge(doc)
            m.record(verdict)
            if verdict.keep:
                kept.append(doc)
        return kept, m

    # -- stages ----------------------------------------------------------------

    def ingest(self, docs):
        def judge(doc):
            if doc.source_kind != "code":
                return KEEP, doc
            tag = assign_language(doc.path)
            return KEEP, doc.replace(language=None if tag == UNKNOWN else str(tag))

        return self.filter("ingest", docs, judge)

    def lang_license(self, docs):
        allow = self.cfg.language_allowlist()
        permissive = self.cfg.permissive_licenses()

        def judge(doc):
            if doc.source_kind != "code":
                return KEEP, doc
            return FilterVerdict.merge([filter_language(doc, allow), filter_license(doc, permissive)]), doc

        return self.filter("lang_license", docs, judge)

    def quality(self, docs):
        issue_cfg = self.cfg.issue_config()
        return self.filter("quality", docs, lambda d: evaluate(d, self.cfg.quality, issue_cfg))

    def exact_dedup(self, docs):
        seen: set[str] = set()

        def judge(doc):
            if doc.source_kind not in CODE_LIKE:
                return KEEP, doc
            digest = content_digest(doc.content)
            if digest in seen:
                return FilterVerdict.drop("exact_dup"), doc
            seen.add(digest)
            return KEEP, doc

        return self.filter("exact_dedup", docs, judge)

    def fuzzy_dedup(self, docs):
        m = self.manifest("fuzzy_dedup")
        subject = [d for d in docs if d.source_kind in CODE_LIKE]
        group_by = {
            "none": None,
            "language": language_key,
            "source_kind": lambda d: d.source_kind,
        }[self.cfg.group_by]
        result = fuzzy_dedup(subject, self.cfg.dedup, workers=self.cfg.workers, group_by=group_by)
        replaced = {d.id: d for d in result.kept}
        dropped = {d.id for d in result.dropped}
        kept = []
        for doc in docs:
            if doc.id in dropped:
                m.record(FilterVerdict.drop("fuzzy_dup"))
                continue
            m.record(KEEP)
            kept.append(replaced.get(doc.id, doc))
        self.clusters = [c.to_record() for c in result.clusters]
        sizes = Counter(1 + len(c.duplicate_ids) for c in result.clusters)
        m.extra["cluster_sizes"] = {str(k): sizes[k] for k in sorted(sizes)}
        m.extra["candidate_pairs"] = result.candidate_pairs
        m.extra["verified_pairs"] = result.verified_pairs
        return kept, m

    def hap(self, docs):
        hap_cfg = self.cfg.hap_config()

        def judge(doc):
            if doc.source_kind not in CODE_LIKE:
                return KEEP, doc
            doc = annotate_hap(doc, hap_cfg)
            return hap_filter(doc, hap_cfg), doc

        return self.filter("hap", docs, judge)

    def pii(self, docs):
        m = self.manifest("pii")
        tokens = self.cfg.pii.tokens
        detector = RulePiiDetector(tokens=dict(tokens))
        out = []
        for doc in docs:
            m.record(KEEP)
            if doc.source_kind in CODE_LIKE:
                doc, spans = redact_document(doc, doc_rng(self.cfg.seed, "pii", doc.id), detector, tokens)
                for span in spans:
                    m.bump(f"pii_{span.kind}")
                if spans:
                    m.bump("docs_redacted")
            out.append(doc)
        return out, m

    def malware(self, docs):
        m = self.manifest("malware")
        mc = self.cfg.malware
        scanner = MalwareScanner(mc.command, mc.strict, mc.timeout)
        with ThreadPoolExecutor(max_workers=max(1, self.cfg.workers)) as pool:
            verdicts = list(pool.map(scanner.scan, docs))
        kept = []
        for doc, verdict in zip(docs, verdicts):
            m.record(verdict)
            if verdict.keep:
                kept.append(doc)
        if scanner.errors:
            m.bump("scanner_errors", scanner.errors)
            m.extra.setdefault("warnings", []).append("scanner_unavailable")
        return kept, m

    def fim(self, docs):
        m = self.manifest("fim")
        out = []
        for doc in docs:
            m.record(KEEP)
            if doc.source_kind == "code":
                doc, counter = fim_document(doc, self.cfg.fim, self.cfg.seed, self.cfg.drop_original)
                m.bump(f"mode_{doc.extra['mode']}")
                if counter:
                    m.bump(counter)
            out.append(doc)
        return out, m

    def mix(self, docs):
        spec = self.cfg.mixture
        m = self.manifest("mix")
        sources = {}
        for comp in spec.components:
            if comp.source == PIPELINE_SOURCE:
                chosen = [d for d in docs if comp.kinds is None or d.source_kind in comp.kinds]
                sources[comp.name] = lambda chosen=chosen: chosen
            else:
                sources[comp.name] = lambda path=comp.source: read_records(path)
        stats = MixtureStats()
        out = list(sample_stream(spec, sources, self.counter, repeat=self.cfg.repeat,
                                 workers=self.cfg.workers, stats=stats))
        for _ in out:
            m.record(KEEP)
        m.extra.update(
            targets=stats.targets,
            tokens=stats.tokens,
            docs=stats.docs,
            total_tokens=stats.total_tokens,
            max_doc_tokens=stats.max_doc_tokens,
            shares={k: round(v, 9) for k, v in stats.shares().items()},
            pipeline_docs_available=len(docs),
        )
        if stats.warnings:
            m.extra["warnings"] = list(stats.warnings)
        return out, m


def _clean_outputs(out: Path) -> None:
    for name in ("output.jsonl", "clusters.jsonl"):
        (out / name).unlink(missing_ok=True)
    for sub in ("stages", "manifest"):
        d = out / sub
        if d.is_dir():
            for child in d.iterdir():
                if child.is_file():
                    child.unlink()


def run_stages(cfg: PipelineConfig, stages: Iterable[str] = STAGES, docs: Iterable[Document] | None = None,
               out_dir: str | os.PathLike | None = None) -> RunResult:
    """Run the selected stages (in canonical order) and write the output tree.

    Stages outside ``stages`` are not part of this run and get no manifest;
    selected stages that are disabled in the config are passed through and
    marked skipped.
    """
    selected = [s for s in STAGES if s in set(stages)]
    out = Path(out_dir or cfg.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    marker = out / PARTIAL_MARKER
    marker.write_text("run in progress or failed\n", encoding="utf-8")
    _clean_outputs(out)
    if docs is None:
        if not cfg.input:
            raise DataError("no input file given")
        if not Path(cfg.input).is_file():
            raise DataError(f"input file {cfg.input!r} does not exist")
        docs = read_records(cfg.input)
    current = list(docs)

    run = _Run(cfg, out)
    result = RunResult(out)
    for index, stage in enumerate(selected, start=1):
        if cfg.stage_enabled(stage):
            log.info("stage %s: %d records in", stage, len(current))
            current, m = getattr(run, stage)(current)
        else:
            m = run.manifest(stage)
            for _ in current:
                m.record(KEEP)
            m.extra["skipped"] = True
        m.extra["languages"] = run.histogram(current)
        m.write(out)
        result.manifests[stage] = m
        if not cfg.streaming:
            write_records(current, out / "stages" / f"{STAGES.index(stage) + 1:02d}_{stage}.jsonl")
        if stage == "fuzzy_dedup":
            _write_jsonl(run.clusters, out / "clusters.jsonl")
    result.output_count = write_records(current, out / "output.jsonl")
    marker.unlink()
    return result


def run_pipeline(cfg: PipelineConfig, out_dir: str | os.PathLike | None = None) -> RunResult:
    return run_stages(cfg, STAGES, out_dir=out_dir)


def _write_jsonl(rows: list[dict], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, separators=(",", ":")) + "\n")


# -- stats ---------------------------------------------------------------------


def stats_report(manifest_dir: str | os.PathLike) -> tuple[str, dict]:
    """Summarize a run's manifests as text and as a JSON-ready dict.

    ``manifest_dir`` may be the run directory or its ``manifest`` folder.
    Every stage from the first to the last one present must have a manifest;
    gaps are reported as an error.
    """
    mdir = Path(manifest_dir)
    if (mdir / "manifest").is_dir():
        mdir = mdir / "manifest"
    present = [s for s in STAGES if (mdir / f"{s}.json").is_file()]
    if not present:
        raise DataError(f"no manifests found in {mdir}")
    span = STAGES[STAGES.index(present[0]) : STAGES.index(present[-1]) + 1]
    missing = [s for s in span if s not in present]
    if missing:
        raise DataError(f"missing manifest(s) in {mdir}: {', '.join(missing)}")
    manifests = [PipelineManifest.load(mdir / f"{s}.json") for s in span]

    checks = []
    for m in manifests:
        ok = sum(m.drop_reasons.values()) == m.dropped_count and m.input_count == m.kept_count + m.dropped_count
        checks.append((f"{m.stage_name}: reasons sum to dropped and counts balance", ok))
    for prev, cur in zip(manifests, manifests[1:]):
        if cur.stage_name == "mix":
            continue  # sampling is not a filter; its input is its own output
        checks.append((f"{cur.stage_name}: input equals {prev.stage_name} kept", cur.input_count == prev.kept_count))

    last = manifests[-1]
    summary = {
        "funnel": [
            {
                "stage": m.stage_name,
                "input": m.input_count,
                "kept": m.kept_count,
                "dropped": m.dropped_count,
                "reasons": dict(sorted(m.drop_reasons.items())),
                "skipped": bool(m.extra.get("skipped")),
            }
            for m in manifests
        ],
        "languages": last.extra.get("languages", {}),
        "cluster_sizes": next((m.extra.get("cluster_sizes", {}) for m in manifests if m.stage_name == "fuzzy_dedup"), {}),
        "checks": [{"check": name, "pass": ok} for name, ok in checks],
        "total_dropped": sum(m.dropped_count for m in manifests),
    }

    lines = [f"{'stage':<14}{'input':>9}{'kept':>9}{'dropped':>9}  reasons"]
    for row in summary["funnel"]:
        reasons = ", ".join(f"{k}={v}" for k, v in row["reasons"].items())
        if row["skipped"]:
            reasons = "(skipped)"
        lines.append(f"{row['stage']:<14}{row['input']:>9}{row['kept']:>9}{row['dropped']:>9}  {reasons}")
    lines.append("")
    lines.append(f"languages after {last.stage_name}:")
    for name, row in summary["languages"].items():
        lines.append(f"  {name:<24}{row['docs']:>8} docs{row['tokens']:>12} tokens")
    if summary["cluster_sizes"]:
        lines.append("")
        lines.append("fuzzy cluster sizes:")
        for size, count in summary["cluster_sizes"].items():
            lines.append(f"  size {size:>4}: {count}")
    lines.append("")
    for name, ok in checks:
        lines.append(f"{'PASS' if ok else 'FAIL'} {name}")
    return "\n".join(lines) + "\n", summary
