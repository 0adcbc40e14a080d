import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codecurate.dedup import (
    EMPTY_SENTINEL,
    MERSENNE_61,
    DedupConfig,
    UnionFind,
    affine_hash,
    content_digest,
    exact_dedup,
    fuzzy_dedup,
    hash64,
    jaccard,
    lsh_band_keys,
    minhash,
    permutations,
    shingles,
    signature_similarity,
    surviving_duplicate_pairs,
)
from codecurate.document import Document
from codecurate.errors import ConfigError

CFG = DedupConfig()


def doc(i, content):
    return Document(id=f"d{i:05d}", path=f"f{i}.py", content=content, repo_id="r", source_kind="code")


def words(rng, n):
    return [f"w{rng.randrange(10**9)}" for _ in range(n)]


def test_content_digest_vectors():
    assert content_digest("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    assert content_digest("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    assert content_digest("x") == content_digest("x")


def test_exact_dedup_first_wins():
    a, a2, b = doc(1, "same"), doc(2, "same"), doc(3, "other")
    kept, dropped = exact_dedup([a, a2, b])
    assert kept == [a, b] and dropped == 1
    assert exact_dedup([a, b]) == ([a, b], 0)
    assert exact_dedup(kept) == (kept, 0)


def test_shingles():
    assert shingles("a b c d e f", 5) == {hash64("a b c d e"), hash64("b c d e f")}
    assert shingles("a b", 5) == {hash64("a b")}
    assert shingles("a\n\tb   c d e", 5) == {hash64("a b c d e")}
    assert shingles("   \n", 5) == frozenset()
    assert shingles("", 5) == frozenset()
    assert shingles("x y z", 1) == {hash64("x"), hash64("y"), hash64("z")}
    with pytest.raises(ValueError):
        shingles("a", 0)


def test_jaccard_examples():
    h = {c: hash64(c) for c in "abcd"}
    assert jaccard({h["a"], h["b"]}, {h["a"], h["b"]}) == 1.0
    assert jaccard({h["a"]}, {h["b"]}) == 0.0
    assert jaccard({h["a"], h["b"], h["c"]}, {h["b"], h["c"], h["d"]}) == 0.5
    assert jaccard(set(), set()) == 1.0
    assert jaccard(set(), {1}) == 0.0


def test_permutation_coefficients_in_range():
    a, b = permutations(256, 7)
    assert a.dtype == np.uint64 and len(a) == 256
    assert all(1 <= int(x) < MERSENNE_61 for x in a)
    assert all(0 <= int(x) < MERSENNE_61 for x in b)
    a2, _ = permutations(256, 8)
    assert not np.array_equal(a, a2)


@settings(max_examples=300, deadline=None)
@given(
    st.integers(1, MERSENNE_61 - 1),
    st.integers(0, MERSENNE_61 - 1),
    st.integers(0, MERSENNE_61 - 1),
)
def test_affine_hash_matches_bigint_oracle(a, b, x):
    got = affine_hash(np.array([a], np.uint64), np.array([b], np.uint64), np.array([x], np.uint64))
    assert int(got[0]) == (a * x + b) % MERSENNE_61


def test_affine_hash_extremes():
    top = MERSENNE_61 - 1
    got = affine_hash(np.array([top], np.uint64), np.array([top], np.uint64), np.array([top], np.uint64))
    assert int(got[0]) == (top * top + top) % MERSENNE_61


def test_minhash_basics():
    s = shingles("one two three four five six seven", 5)
    sig = minhash(s, CFG)
    assert sig.dtype == np.uint64 and sig.shape == (256,)
    assert np.array_equal(sig, minhash(set(s), CFG))
    single = {hash64("solo")}
    a, b = permutations(256, CFG.perm_seed)
    x = hash64("solo") % MERSENNE_61
    expected = [(int(ai) * x + int(bi)) % MERSENNE_61 for ai, bi in zip(a, b)]
    assert [int(v) for v in minhash(single, CFG)] == expected
    assert np.all(minhash(frozenset(), CFG) == EMPTY_SENTINEL)


def test_minhash_chunking_is_invisible():
    rng = random.Random(3)
    s = {rng.getrandbits(64) for _ in range(5000)}
    assert np.array_equal(minhash(s, CFG, chunk=97), minhash(s, CFG))


def planted_pair(rng, s, universe=200):
    inter = round(s * universe)
    common = [rng.getrandbits(64) for _ in range(inter)]
    rest = [rng.getrandbits(64) for _ in range(universe - inter)]
    half = len(rest) // 2
    return set(common + rest[:half]), set(common + rest[half:])


def brute_jaccard(a, b):
    inter = sum(1 for x in a if x in b)
    union = len(a) + sum(1 for x in b if x not in a)
    return inter / union


def test_estimator_tracks_true_jaccard_small():
    rng = random.Random(11)
    errors = []
    for s in (0.2, 0.5, 0.8):
        for _ in range(30):
            a, b = planted_pair(rng, s)
            errors.append(abs(signature_similarity(minhash(a, CFG), minhash(b, CFG)) - brute_jaccard(a, b)))
    assert sum(e <= 0.1 for e in errors) / len(errors) >= 0.97


def test_band_keys():
    rng = random.Random(5)
    s1 = np.array([rng.getrandbits(61) for _ in range(256)], dtype=np.uint64)
    k1 = lsh_band_keys(s1, CFG)
    assert len(k1) == 32 and [j for j, _ in k1] == list(range(32))
    assert lsh_band_keys(s1.copy(), CFG) == k1
    s2 = s1 + np.uint64(1)
    assert not set(k1) & set(lsh_band_keys(s2, CFG))
    s3 = s2.copy()
    s3[:8] = s1[:8]
    assert set(k1) & set(lsh_band_keys(s3, CFG)) == {k1[0]}
    with pytest.raises(ConfigError):
        lsh_band_keys(s1[:100], CFG)


def test_config_validation():
    with pytest.raises(ConfigError):
        DedupConfig(bands=30)
    with pytest.raises(ConfigError):
        DedupConfig(jaccard_threshold=0)
    DedupConfig(num_permutations=64, bands=16, rows=4)


def test_union_find():
    uf = UnionFind(6)
    assert uf.union(0, 1) and uf.union(1, 2) and uf.union(4, 5)
    assert not uf.union(0, 2)
    groups = sorted(sorted(g) for g in uf.groups().values())
    assert groups == [[0, 1, 2], [3], [4, 5]]


def test_fuzzy_disjoint_docs_kept():
    rng = random.Random(1)
    docs = [doc(1, " ".join(words(rng, 50))), doc(2, " ".join(words(rng, 50)))]
    result = fuzzy_dedup(docs, CFG)
    assert result.kept == docs and result.clusters == []


def test_fuzzy_planted_pair_at_point_nine():
    rng = random.Random(2)
    base = words(rng, 100)
    edited = base[:95] + words(rng, 5)
    a, b = " ".join(base), " ".join(edited)
    true_j = brute_jaccard(shingles(a, 5), shingles(b, 5))
    assert true_j == pytest.approx(91 / 101)
    result = fuzzy_dedup([doc(1, a), doc(2, b), doc(3, " ".join(words(rng, 100)))], CFG)
    assert [d.id for d in result.kept] == ["d00001", "d00003"]
    assert [d.id for d in result.dropped] == ["d00002"]
    assert result.clusters[0].representative_id == "d00001"
    assert result.clusters[0].duplicate_ids == ["d00002"]
    assert result.kept[0].annotations == {"dedup_cluster": "d00001", "dedup_cluster_size": "2"}


def test_representative_is_shortest_then_smallest_id():
    text = " ".join(f"t{i}" for i in range(60))
    docs = [doc(3, text + " extra"), doc(2, text), doc(1, text)]
    result = fuzzy_dedup(docs, CFG)
    assert [d.id for d in result.kept] == ["d00001"]
    assert result.clusters[0].representative_id == "d00001"
    assert result.clusters[0].duplicate_ids == ["d00003", "d00002"]


def test_single_linkage_chains():
    # a~b and b~c above threshold, a vs c below: still one cluster
    base = [f"t{i}" for i in range(100)]
    a = base
    b = base[:90] + [f"u{i}" for i in range(10)]
    c = base[:80] + [f"u{i}" for i in range(10)] + [f"v{i}" for i in range(10)]
    sa, sb, sc = (shingles(" ".join(x), 5) for x in (a, b, c))
    assert jaccard(sa, sb) >= 0.7 and jaccard(sb, sc) >= 0.7 and jaccard(sa, sc) < 0.7
    result = fuzzy_dedup([doc(i, " ".join(x)) for i, x in enumerate((a, b, c))], CFG)
    assert len(result.clusters) == 1 and len(result.kept) == 1


def test_fuzzy_properties_on_generated_corpus():
    rng = random.Random(9)
    docs = []
    for i in range(300):
        if docs and rng.random() < 0.4:
            src = rng.choice(docs).content.split()
            cut = rng.randrange(len(src))
            src = src[:cut] + words(rng, rng.randrange(1, 12)) + src[cut + 3 :]
            docs.append(doc(i, " ".join(src)))
        else:
            docs.append(doc(i, " ".join(words(rng, rng.randrange(20, 120)))))
    result = fuzzy_dedup(docs, CFG)
    assert surviving_duplicate_pairs(result.kept, CFG) == []
    again = fuzzy_dedup(result.kept, CFG)
    assert again.dropped == [] and [d.id for d in again.kept] == [d.id for d in result.kept]
    ids = [d.id for d in docs]
    kept_ids = [d.id for d in result.kept]
    assert kept_ids == [i for i in ids if i in set(kept_ids)]
    assert len(result.kept) + len(result.dropped) == len(docs)
    assert sum(len(c.duplicate_ids) for c in result.clusters) == len(result.dropped)
    parallel = fuzzy_dedup(docs, CFG, workers=3)
    assert parallel.kept == result.kept and parallel.clusters == result.clusters


def test_group_by_keeps_groups_apart():
    text = " ".join(f"t{i}" for i in range(40))
    a = doc(1, text)
    b = Document(id="d2", path="f.js", content=text, repo_id="r", source_kind="code")
    grouped = fuzzy_dedup([a, b], CFG, group_by=lambda d: d.path.rsplit(".", 1)[-1])
    assert len(grouped.kept) == 2
    assert len(fuzzy_dedup([a, b], CFG).kept) == 1
