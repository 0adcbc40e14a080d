"""Exact and near-duplicate removal.

Exact duplicates are found by SHA-256 of the UTF-8 content; the first
occurrence wins. Near duplicates go through the usual MinHash/LSH route:

    shingle -> minhash -> band keys -> candidate pairs
            -> exact Jaccard check -> union-find clusters -> keep one per cluster

MinHash uses one affine hash ``(a*x + b) mod (2**61 - 1)`` per permutation,
evaluated with 64-bit numpy arithmetic (the product is split into 32-bit
halves and folded using ``2**61 = 1 mod p``).
"""

from __future__ import annotations

import hashlib
import itertools
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .document import Document
from .errors import ConfigError

MERSENNE_61 = (1 << 61) - 1
EMPTY_SENTINEL = np.uint64(np.iinfo(np.uint64).max)

_P = np.uint64(MERSENNE_61)
_LOW32 = np.uint64(0xFFFFFFFF)
_LOW29 = np.uint64((1 << 29) - 1)
_U3, _U29, _U32, _U61 = np.uint64(3), np.uint64(29), np.uint64(32), np.uint64(61)


@dataclass(frozen=True)
class DedupConfig:
    shingle_k: int = 5
    num_permutations: int = 256
    bands: int = 32
    rows: int = 8
    jaccard_threshold: float = 0.7
    perm_seed: int = 42

    def __post_init__(self):
        if self.shingle_k < 1:
            raise ConfigError("dedup.shingle_k must be >= 1")
        if self.num_permutations < 1:
            raise ConfigError("dedup.num_permutations must be >= 1")
        if self.bands * self.rows != self.num_permutations:
            raise ConfigError(
                f"dedup.bands x dedup.rows ({self.bands} x {self.rows}) must equal num_permutations ({self.num_permutations})"
            )
        if not 0.0 < self.jaccard_threshold <= 1.0:
            raise ConfigError("dedup.jaccard_threshold must lie in (0, 1]")
        if not 0 <= self.perm_seed < 2**64:
            raise ConfigError("dedup.perm_seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class DedupCluster:
    representative_id: str
    duplicate_ids: list[str] = field(default_factory=list)

    def to_record(self) -> dict:
        return {"representative_id": self.representative_id, "duplicate_ids": list(self.duplicate_ids)}


# -- exact ---------------------------------------------------------------------


def content_digest(content: str) -> str:
    return hashlib.sha256(content.encode("utf-8")).hexdigest()


def iter_exact_dedup(docs: Iterable[Document], on_drop: Callable[[Document], None] | None = None) -> Iterator[Document]:
    """Stream the first document for each content digest, in input order."""
    seen: set[bytes] = set()
    for doc in docs:
        digest = hashlib.sha256(doc.content.encode("utf-8")).digest()
        if digest in seen:
            if on_drop is not None:
                on_drop(doc)
            continue
        seen.add(digest)
        yield doc


def exact_dedup(docs: Iterable[Document]) -> tuple[list[Document], int]:
    dropped = []
    kept = list(iter_exact_dedup(docs, dropped.append))
    return kept, len(dropped)


# -- shingles and signatures ---------------------------------------------------


def hash64(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def shingles(content: str, k: int) -> frozenset[int]:
    """Hashes of every window of ``k`` whitespace tokens joined by one space.

    Documents shorter than ``k`` tokens yield a single shingle of all their
    tokens; empty or whitespace-only content yields the empty set.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    tokens = content.split()
    if not tokens:
        return frozenset()
    if len(tokens) < k:
        return frozenset((hash64(" ".join(tokens)),))
    return frozenset(hash64(" ".join(tokens[i : i + k])) for i in range(len(tokens) - k + 1))


def jaccard(a: frozenset[int] | set[int], b: frozenset[int] | set[int]) -> float:
    if not a and not b:
        return 1.0
    inter = len(a & b)
    return inter / (len(a) + len(b) - inter)


@lru_cache(maxsize=8)
def permutations(num_permutations: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Affine coefficients (a, b) with 1 <= a < p and 0 <= b < p, derived from the seed."""
    a = np.empty(num_permutations, dtype=np.uint64)
    b = np.empty(num_permutations, dtype=np.uint64)
    for i in range(num_permutations):
        raw = hashlib.blake2b(f"{seed}:{i}".encode(), digest_size=16).digest()
        a[i] = int.from_bytes(raw[:8], "little") % (MERSENNE_61 - 1) + 1
        b[i] = int.from_bytes(raw[8:], "little") % MERSENNE_61
    a.flags.writeable = False
    b.flags.writeable = False
    return a, b


def _fold(v: np.ndarray) -> np.ndarray:
    # v < 2**64  ->  v mod p, using 2**61 = 1 (mod p)
    v = (v & _P) + (v >> _U61)
    return np.where(v >= _P, v - _P, v)


def affine_hash(a: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(a*x + b) mod p, elementwise with broadcasting; a, b, x must be < p."""
    a_hi, a_lo = a >> _U32, a & _LOW32
    x_hi, x_lo = x >> _U32, x & _LOW32
    high = (a_hi * x_hi) << _U3  # 2**64 = 8 (mod p)
    mid = a_hi * x_lo + a_lo * x_hi  # < 2**62
    mid = (mid >> _U29) + ((mid & _LOW29) << _U32)  # mid * 2**32 (mod p), < 2**62
    low = a_lo * x_lo
    low = (low & _P) + (low >> _U61)
    return _fold(_fold(high + mid + low) + b)


def minhash(shingle_set: Iterable[int], cfg: DedupConfig, chunk: int = 2048) -> np.ndarray:
    """Signature of ``num_permutations`` per-permutation minima (uint64)."""
    a, b = permutations(cfg.num_permutations, cfg.perm_seed)
    values = np.fromiter(shingle_set, dtype=np.uint64)
    if values.size == 0:
        return np.full(cfg.num_permutations, EMPTY_SENTINEL, dtype=np.uint64)
    values = _fold(values)
    a, b = a[:, None], b[:, None]
    out = None
    for start in range(0, values.size, chunk):
        part = affine_hash(a, b, values[None, start : start + chunk]).min(axis=1)
        out = part if out is None else np.minimum(out, part)
    return out


def signature_similarity(s1: np.ndarray, s2: np.ndarray) -> float:
    """Fraction of positions where two signatures agree (a Jaccard estimate)."""
    return float(np.count_nonzero(s1 == s2)) / len(s1)


def lsh_band_keys(signature: np.ndarray, cfg: DedupConfig) -> list[tuple[int, bytes]]:
    if len(signature) != cfg.bands * cfg.rows:
        raise ConfigError(f"signature length {len(signature)} != bands x rows ({cfg.bands} x {cfg.rows})")
    raw = np.ascontiguousarray(signature, dtype="<u8").tobytes()
    width = cfg.rows * 8
    return [
        (j, hashlib.blake2b(raw[j * width : (j + 1) * width], digest_size=16).digest())
        for j in range(cfg.bands)
    ]


# -- clustering ----------------------------------------------------------------


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, x: int, y: int) -> bool:
        rx, ry = self.find(x), self.find(y)
        if rx == ry:
            return False
        if self.rank[rx] < self.rank[ry]:
            rx, ry = ry, rx
        self.parent[ry] = rx
        if self.rank[rx] == self.rank[ry]:
            self.rank[rx] += 1
        return True

    def groups(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = defaultdict(list)
        for i in range(len(self.parent)):
            out[self.find(i)].append(i)
        return out


def _fingerprint(args: tuple[str, DedupConfig]) -> tuple[frozenset[int], list[tuple[int, bytes]]]:
    content, cfg = args
    shingle_set = shingles(content, cfg.shingle_k)
    return shingle_set, lsh_band_keys(minhash(shingle_set, cfg), cfg)


def fingerprints(contents: Sequence[str], cfg: DedupConfig, workers: int = 1):
    jobs = [(c, cfg) for c in contents]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_fingerprint, jobs, chunksize=max(1, len(jobs) // (workers * 4))))
    return [_fingerprint(job) for job in jobs]


@dataclass
class FuzzyResult:
    kept: list[Document]
    dropped: list[Document]
    clusters: list[DedupCluster]
    candidate_pairs: int = 0
    verified_pairs: int = 0


def candidate_buckets(band_keys: Sequence[list[tuple[int, bytes]]], groups: Sequence[str] | None = None):
    """Bucket members (input indices, ascending) for every shared band key."""
    index: dict[tuple, list[int]] = defaultdict(list)
    for i, keys in enumerate(band_keys):
        group = groups[i] if groups is not None else None
        for key in keys:
            index[(group, *key)].append(i)
    return [members for members in index.values() if len(members) > 1]


def fuzzy_dedup(
    docs: Iterable[Document],
    cfg: DedupConfig,
    workers: int = 1,
    group_by: Callable[[Document], str] | None = None,
) -> FuzzyResult:
    """Cluster near duplicates and keep the smallest ``(length, id)`` member of each.

    Input is expected to be exact-deduplicated already. Kept documents come
    back in input order; every cluster representative is annotated with the
    cluster id (its own id) and size.
    """
    docs = list(docs)
    prints = fingerprints([d.content for d in docs], cfg, workers)
    sets = [p[0] for p in prints]
    groups = [group_by(d) for d in docs] if group_by else None
    uf = UnionFind(len(docs))
    candidates = verified = 0
    for members in candidate_buckets([p[1] for p in prints], groups):
        for i, j in itertools.combinations(members, 2):
            candidates += 1
            # already connected: the check cannot change the clustering
            if uf.find(i) == uf.find(j):
                continue
            verified += 1
            if jaccard(sets[i], sets[j]) >= cfg.jaccard_threshold:
                uf.union(i, j)

    clusters: list[tuple[int, DedupCluster]] = []
    cluster_of_root: dict[int, tuple[int, str, int]] = {}
    for root, members in uf.groups().items():
        if len(members) < 2:
            continue
        rep = min(members, key=lambda i: (len(docs[i].content), docs[i].id))
        cluster_of_root[root] = (rep, docs[rep].id, len(members))
        clusters.append((min(members), DedupCluster(docs[rep].id, [docs[i].id for i in members if i != rep])))
    clusters.sort(key=lambda item: item[0])

    kept, dropped = [], []
    for i, doc in enumerate(docs):
        cluster = cluster_of_root.get(uf.find(i))
        if cluster is None:
            kept.append(doc)
            continue
        rep, cluster_id, size = cluster
        if i == rep:
            kept.append(doc.annotate(dedup_cluster=cluster_id, dedup_cluster_size=size))
        else:
            dropped.append(doc.annotate(dedup_cluster=cluster_id))
    return FuzzyResult(kept, dropped, [c for _, c in clusters], candidates, verified)


def surviving_duplicate_pairs(
    docs: Sequence[Document], cfg: DedupConfig, group_by: Callable[[Document], str] | None = None
) -> list[tuple[str, str, float]]:
    """Pairs of documents sharing a band key whose Jaccard is at or above threshold.

    Empty for any output of ``fuzzy_dedup`` run with the same config.
    """
    prints = fingerprints([d.content for d in docs], cfg)
    groups = [group_by(d) for d in docs] if group_by else None
    found = set()
    for members in candidate_buckets([p[1] for p in prints], groups):
        for i, j in itertools.combinations(members, 2):
            if (i, j) not in found and jaccard(prints[i][0], prints[j][0]) >= cfg.jaccard_threshold:
                found.add((i, j))
    return [(docs[i].id, docs[j].id, jaccard(prints[i][0], prints[j][0])) for i, j in sorted(found)]
