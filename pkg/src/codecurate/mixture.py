"""Token-budgeted interleaving of component streams.

The scheduler is deterministic: at every step it draws from the component
that is furthest behind its weighted share of what has been emitted so far.
Sources may be read ahead by background threads; the scheduler consumes them
sequentially, so the interleaving does not depend on the thread count.
"""

from __future__ import annotations

import math
import queue
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Iterator

from .document import Document
from .errors import ConfigError, TokenizerUnavailable

COUNTER_MODES = ("byte_estimate", "whitespace", "plugin")
PIPELINE_SOURCE = "@pipeline"


@dataclass(frozen=True)
class TokenCounter:
    mode: str = "byte_estimate"
    plugin_command: str | None = None
    timeout: float = 60.0

    def __post_init__(self):
        if self.mode not in COUNTER_MODES:
            raise ConfigError(f"token counter mode must be one of {COUNTER_MODES}")
        if self.mode == "plugin" and not self.plugin_command:
            raise ConfigError("plugin token counter needs plugin_command")

    def count(self, text: str) -> int:
        if not text:
            return 0
        if self.mode == "byte_estimate":
            return math.ceil(len(text.encode("utf-8")) / 4)
        if self.mode == "whitespace":
            return len(text.split())
        return self._plugin(text)

    def _plugin(self, text: str) -> int:
        try:
            proc = subprocess.run(shlex.split(self.plugin_command), input=text.encode("utf-8"),
                                  capture_output=True, timeout=self.timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise TokenizerUnavailable(f"tokenizer plugin failed to run: {exc}") from None
        out = proc.stdout.decode("ascii", "replace").strip()
        if proc.returncode != 0 or not out.isdigit():
            raise TokenizerUnavailable(f"tokenizer plugin exited {proc.returncode} with output {out[:80]!r}")
        return int(out)


def count_tokens(content: str, counter: TokenCounter) -> int:
    return counter.count(content)


@dataclass(frozen=True)
class MixtureComponent:
    name: str
    weight: float
    source: str = PIPELINE_SOURCE
    # only meaningful for the pipeline source: which source kinds feed this component
    kinds: tuple[str, ...] | None = None

    def __post_init__(self):
        if isinstance(self.kinds, list):
            object.__setattr__(self, "kinds", tuple(self.kinds))
        if not self.name:
            raise ConfigError("mixture component needs a name")
        if self.weight < 0:
            raise ConfigError(f"mixture component {self.name!r} has a negative weight")


@dataclass(frozen=True)
class MixtureSpec:
    components: tuple[MixtureComponent, ...]
    token_budget: int
    seed: int = 0

    def __post_init__(self):
        comps = tuple(MixtureComponent(**c) if isinstance(c, dict) else c for c in self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise ConfigError("mixture needs at least one component")
        names = [c.name for c in comps]
        if len(set(names)) != len(names):
            raise ConfigError("mixture component names must be unique")
        if abs(sum(c.weight for c in comps) - 1.0) > 1e-9:
            raise ConfigError("mixture weights must sum to 1")
        if self.token_budget <= 0:
            raise ConfigError("mixture token_budget must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("mixture seed must be a 64-bit unsigned integer")


def plan_phase(spec: MixtureSpec) -> list[tuple[str, int]]:
    """Per-component token targets that sum exactly to the budget.

    Weights are read as the decimals they were written as, so 0.8 x 1000 is
    exactly 800. Leftover tokens go to the largest fractional remainders,
    earlier components first on ties.
    """
    exact = [Fraction(repr(c.weight)) * spec.token_budget for c in spec.components]
    targets = [math.floor(x) for x in exact]
    leftover = spec.token_budget - sum(targets)
    order = sorted(range(len(exact)), key=lambda i: (-(exact[i] - targets[i]), i))
    for i in order[:leftover]:
        targets[i] += 1
    return [(c.name, t) for c, t in zip(spec.components, targets)]


@dataclass
class MixtureStats:
    targets: dict[str, int] = field(default_factory=dict)
    tokens: dict[str, int] = field(default_factory=dict)
    docs: dict[str, int] = field(default_factory=dict)
    max_doc_tokens: int = 0
    warnings: list[str] = field(default_factory=list)
    exhausted: list[str] = field(default_factory=list)

    @property
    def total_tokens(self) -> int:
        return sum(self.tokens.values())

    def shares(self) -> dict[str, float]:
        total = self.total_tokens
        return {k: (v / total if total else 0.0) for k, v in self.tokens.items()}


Source = Callable[[], Iterable[Document]]
_DONE = object()


class _Failure:
    def __init__(self, exc: BaseException):
        self.exc = exc


def _counted(docs: Iterable[Document], counter: TokenCounter) -> Iterator[tuple[Document, int]]:
    for doc in docs:
        yield doc, counter.count(doc.training_text)


class _Prefetch:
    """Reads one source ahead on a daemon thread, preserving order."""

    def __init__(self, items: Iterator, depth: int = 256):
        self._queue: queue.Queue = queue.Queue(maxsize=depth)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, args=(items,), daemon=True)
        self._thread.start()

    def _run(self, items):
        try:
            for item in items:
                if self._stop.is_set():
                    return
                self._queue.put(item)
        except BaseException as exc:  # handed to the consumer
            self._queue.put(_Failure(exc))
            return
        self._queue.put(_DONE)

    def __iter__(self):
        return self

    def __next__(self):
        item = self._queue.get()
        if item is _DONE:
            raise StopIteration
        if isinstance(item, _Failure):
            raise item.exc
        return item

    def close(self):
        self._stop.set()
        while self._thread.is_alive():
            try:
                self._queue.get_nowait()
            except queue.Empty:
                self._thread.join(0.01)


def sample_stream(spec: MixtureSpec, sources: dict[str, Source], counter: TokenCounter,
                  repeat: bool = False, workers: int = 1, stats: MixtureStats | None = None) -> Iterator[Document]:
    """Interleave component sources until the budget is spent or a source runs dry.

    ``sources`` maps component names to zero-argument callables returning a
    fresh iterable (called again when ``repeat`` cycles a source). Emitted
    documents are annotated with their component. When a source is cycled,
    ids from later passes get a ``#rN`` suffix so they stay unique.
    """
    stats = stats if stats is not None else MixtureStats()
    comps = spec.components
    plan = plan_phase(spec)
    targets = [t for _, t in plan]
    weights = [c.weight for c in comps]
    stats.targets = dict(plan)
    stats.tokens = {c.name: 0 for c in comps}
    stats.docs = {c.name: 0 for c in comps}
    for c in comps:
        if c.name not in sources:
            raise ConfigError(f"no source for mixture component {c.name!r}")

    def open_source(i):
        it = _counted(sources[comps[i].name](), counter)
        return _Prefetch(it) if workers > 1 else it

    iters: list = [None] * len(comps)
    peeked: list = [None] * len(comps)
    passes = [0] * len(comps)
    pass_tokens = [0] * len(comps)
    exhausted = [False] * len(comps)
    emitted = [0] * len(comps)
    total = 0

    def peek(i):
        if peeked[i] is not None:
            return peeked[i]
        while True:
            if iters[i] is None:
                iters[i] = open_source(i)
            item = next(iters[i], None)
            if item is not None:
                peeked[i] = item
                return item
            _close(iters[i])
            iters[i] = None
            if not repeat or pass_tokens[i] == 0:
                return None
            passes[i] += 1
            pass_tokens[i] = 0

    try:
        while True:
            active = [i for i in range(len(comps)) if emitted[i] < targets[i] and not exhausted[i]]
            if not active:
                break
            i = max(active, key=lambda k: (weights[k] * total - emitted[k], -k))
            item = peek(i)
            if item is None:
                exhausted[i] = True
                stats.exhausted.append(comps[i].name)
                stats.warnings.append(f"component_exhausted: {comps[i].name}")
                break
            doc, tokens = item
            if total + tokens > spec.token_budget:
                break
            peeked[i] = None
            emitted[i] += tokens
            pass_tokens[i] += tokens
            total += tokens
            stats.tokens[comps[i].name] += tokens
            stats.docs[comps[i].name] += 1
            stats.max_doc_tokens = max(stats.max_doc_tokens, tokens)
            if passes[i]:
                doc = doc.replace(id=f"{doc.id}#r{passes[i]}")
            yield doc.annotate(mix_component=comps[i].name)
    finally:
        for it in iters:
            _close(it)


def _close(it):
    if isinstance(it, _Prefetch):
        it.close()
