"""Command-line entry point.

Exit statuses: 0 success, 1 configuration error, 2 data error, 3 external tool
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
import time

from .config import PipelineConfig
from .corpus_io import read_records
from .dedup import iter_exact_dedup
from .document import Document
from .errors import ConfigError, CurateError
from .mixture import PIPELINE_SOURCE
from .pipeline import run_stages, stats_report
from .quality import IssueConfig, QualityConfig, evaluate

SUBCOMMAND_STAGES = {
    "ingest": ("ingest",),
    "filter": ("lang_license", "quality"),
    "dedup": ("exact_dedup", "fuzzy_dedup"),
    "redact": ("hap", "pii", "malware"),
    "fim": ("fim",),
    "mix": ("mix",),
    "run": None,
}

log = logging.getLogger("codecurate")


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML or JSON pipeline config")
    p.add_argument("--input", help="input record file (.jsonl or .jsonl.gz)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="pipeline seed (64-bit unsigned)")
    p.add_argument("--workers", type=int, help="worker count; outputs do not depend on it")
    p.add_argument("--group-by", choices=("none", "language", "source_kind"), help="fuzzy dedup grouping")
    p.add_argument("--strict-scan", action="store_true", default=None, help="fail when the malware scanner errors")
    p.add_argument("--repeat", action="store_true", default=None, help="cycle exhausted mixture sources")
    p.add_argument("--streaming", action="store_true", default=None, help="skip per-stage record files")
    p.add_argument("--drop-original", action="store_true", default=None, help="blank content after FIM serialization")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="codecurate", description="Curate code pretraining corpora.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log stage progress")
    sub = parser.add_subparsers(dest="command", required=True)

    helps = {
        "ingest": "validate records and assign languages",
        "filter": "language/license allowlists and quality rules",
        "dedup": "exact and fuzzy deduplication",
        "redact": "HAP filter, PII redaction, malware hook",
        "fim": "build CLM/FIM samples",
        "mix": "token-budgeted mixture sampling",
        "run": "the full pipeline",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        _add_run_options(p)
        if name == "mix":
            p.add_argument("--component", action="append", metavar="NAME=WEIGHT[:SOURCE]",
                           help="mixture component; SOURCE is a record file or @KIND[,KIND] "
                                "to take those source kinds from the input (default: all of it)")
            p.add_argument("--budget", type=int, help="token budget")

    p = sub.add_parser("stats", help="summarize manifests of a run")
    p.add_argument("run_dir", help="run output directory or its manifest folder")
    p.add_argument("--json", action="store_true", help="print the JSON summary instead of text")

    p = sub.add_parser("bench", help="measure quality + exact dedup throughput")
    p.add_argument("--input", help="record file to measure (default: generated corpus)")
    p.add_argument("--mb", type=float, default=64.0, help="size of the generated corpus in MB")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    data = {}
    if args.config:
        data = PipelineConfig.load(args.config).to_dict()
    overrides = {
        "input": args.input,
        "out": args.out,
        "seed": args.seed,
        "workers": args.workers,
        "group_by": args.group_by,
        "repeat": args.repeat,
        "streaming": args.streaming,
        "drop_original": args.drop_original,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    if args.strict_scan:
        data["malware"] = {**data.get("malware", {}), "strict": True}
    if getattr(args, "component", None):
        data["mixture"] = {
            "components": [_parse_component(c) for c in args.component],
            "token_budget": args.budget or (data.get("mixture") or {}).get("token_budget") or 0,
        }
    elif getattr(args, "budget", None) and data.get("mixture"):
        data["mixture"] = {**data["mixture"], "token_budget": args.budget}
    return PipelineConfig.from_dict(data)


def _parse_component(text: str) -> dict:
    name, sep, rest = text.partition("=")
    weight, _, source = rest.partition(":")
    try:
        value = float(weight)
    except ValueError:
        raise ConfigError(f"bad --component {text!r}; expected NAME=WEIGHT[:SOURCE]") from None
    if not sep or not name:
        raise ConfigError(f"bad --component {text!r}; expected NAME=WEIGHT[:SOURCE]")
    if source.startswith("@"):
        kinds = [k for k in source[1:].split(",") if k]
        return {"name": name, "weight": value, "source": PIPELINE_SOURCE, "kinds": kinds or None}
    return {"name": name, "weight": value, "source": source or PIPELINE_SOURCE}


def cmd_stages(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    if not cfg.out:
        raise ConfigError("--out (or out: in the config) is required")
    stages = SUBCOMMAND_STAGES[args.command]
    if args.command == "mix" and cfg.stages["mix"] is None and cfg.mixture is None:
        raise ConfigError("mix needs a mixture spec (config or --component/--budget)")
    result = run_stages(cfg, stages) if stages else run_stages(cfg)
    for name, m in result.manifests.items():
        note = " (skipped)" if m.extra.get("skipped") else ""
        print(f"{name:<14} in={m.input_count} kept={m.kept_count} dropped={m.dropped_count}{note}")
        for warning in m.extra.get("warnings", []):
            print(f"warning: {name}: {warning}", file=sys.stderr)
    print(f"wrote {result.output_count} records to {result.out_dir / 'output.jsonl'}")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    text, summary = stats_report(args.run_dir)
    if args.json:
        print(json.dumps(summary, indent=2, sort_keys=True))
    else:
        print(text, end="")
    return 0 if all(c["pass"] for c in summary["checks"]) else 2


def _generated_corpus(megabytes: float, seed: int) -> list[Document]:
    rng = random.Random(seed)
    vocab = ["def", "return", "self", "value", "import", "for", "in", "if", "else", "class", "=", "(", ")", ":"]
    vocab += [f"name{i}" for i in range(200)]
    docs, size, i = [], 0, 0
    while size < megabytes * 1_000_000:
        lines = [" ".join(rng.choices(vocab, k=rng.randrange(3, 12))) for _ in range(rng.randrange(20, 120))]
        content = "\n".join(lines) + "\n"
        if docs and rng.random() < 0.05:
            content = docs[rng.randrange(len(docs))].content
        docs.append(Document(id=f"b{i}", path=f"src/m{i}.py", content=content, repo_id="bench",
                             source_kind="code", language="Python"))
        size += len(content.encode("utf-8"))
        i += 1
    return docs


def cmd_bench(args: argparse.Namespace) -> int:
    docs = list(read_records(args.input)) if args.input else _generated_corpus(args.mb, args.seed)
    total = sum(len(d.content.encode("utf-8")) for d in docs)
    qcfg, icfg = QualityConfig(), IssueConfig()
    start = time.perf_counter()
    kept = [d for d in docs if evaluate(d, qcfg, icfg)[0].keep]
    survivors = sum(1 for _ in iter_exact_dedup(kept))
    elapsed = time.perf_counter() - start
    rate = total / 1e6 / elapsed if elapsed else float("inf")
    print(f"docs={len(docs)} bytes={total} kept_quality={len(kept)} kept_exact={survivors}")
    print(f"quality+exact_dedup: {elapsed:.3f} s, {rate:.1f} MB/s (target 50 MB/s, not gated)")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "stats":
            return cmd_stats(args)
        if args.command == "bench":
            return cmd_bench(args)
        return cmd_stages(args)
    except CurateError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return exc.exit_status
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
