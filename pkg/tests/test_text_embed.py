import math
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from portal.text_embed import (
    EmbedderConfigError,
    FallbackEmbedder,
    FileCacheEmbedder,
    SidecarEmbedder,
    SidecarTransportError,
    fallback_embed,
    make_embedder,
    write_embedding_cache,
)


def fnv1a(data: bytes) -> int:
    """Independent FNV-1a reference for the derived-cosine oracle."""
    h = 14695981039346656037
    for b in data:
        h = ((h ^ b) * 1099511628211) % 2 ** 64
    return h


def cosine(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


class TestFallbackEmbed:
    def test_empty_maps_to_reserved_basis_vector(self):
        v = fallback_embed("", 16)
        expected = np.zeros(16)
        expected[0] = 1.0
        assert np.array_equal(v, expected)

    def test_too_short_for_any_trigram_also_reserved(self):
        assert np.array_equal(fallback_embed("ab", 16), fallback_embed("", 16))

    def test_unit_norm(self):
        for text in ("price", "hello world", "2021-01-01", "x" * 500):
            assert np.linalg.norm(fallback_embed(text)) == pytest.approx(1.0, abs=1e-6)

    def test_deterministic(self):
        assert np.array_equal(fallback_embed("price"), fallback_embed("price"))

    def test_case_and_whitespace_collapse(self):
        assert np.array_equal(fallback_embed("Hello  World"), fallback_embed("hello world"))

    def test_distinct_grams_not_identical(self):
        assert cosine(fallback_embed("abc"), fallback_embed("abd")) < 1.0

    def test_shared_gram_cosine_matches_hand_count(self):
        # night -> {nig, igh, ght}; nights adds {hts}; zzzz -> {zzz} twice.
        # With collision-free hashing the cosine is |shared| / sqrt(3 * 4).
        dim = 384
        grams = ["nig", "igh", "ght", "hts", "zzz"]
        indices = [fnv1a(g.encode()) % dim for g in grams]
        assert len(set(indices)) == len(indices)  # no collisions among these grams
        c_similar = cosine(fallback_embed("night", dim), fallback_embed("nights", dim))
        assert c_similar == pytest.approx(3 / math.sqrt(12))
        c_far = cosine(fallback_embed("night", dim), fallback_embed("zzzz", dim))
        assert c_similar > c_far
        assert c_far == pytest.approx(0.0, abs=1e-12)

    def test_unrelated_strings_nearly_orthogonal(self):
        rng = np.random.default_rng(7)
        alphabet = "abcdefghijklmnopqrstuvwxyz"
        strings = ["".join(rng.choice(list(alphabet), size=8)) for _ in range(1000)]
        vectors = np.stack([fallback_embed(s) for s in strings])
        gram = vectors @ vectors.T
        off_diag = gram[~np.eye(len(strings), dtype=bool)]
        assert abs(off_diag.mean()) < 0.05


class TestEmbedderCaching:
    def test_memoized_bit_identical(self):
        emb = FallbackEmbedder(64)
        first = emb.embed(["price", "price", "cost"])
        second = emb.embed(["price"])
        assert np.array_equal(first[0], first[1])
        assert np.array_equal(first[0], second[0])

    def test_empty_batch(self):
        assert FallbackEmbedder(8).embed([]).shape == (0, 8)

    @given(st.lists(st.text(max_size=12), max_size=6))
    @settings(max_examples=50)
    def test_cache_is_observably_pure(self, texts):
        cached = FallbackEmbedder(32)
        cached.embed(texts)  # warm
        fresh = FallbackEmbedder(32)
        assert np.array_equal(cached.embed(texts), fresh.embed(texts))


class TestFileCache:
    def test_roundtrip(self, tmp_path):
        emb = FallbackEmbedder(24)
        texts = ["alpha", "beta with\ttab", "line\nbreak", ""]
        path = tmp_path / "cache.tsv"
        write_embedding_cache(str(path), emb, texts)
        cached = FileCacheEmbedder(str(path))
        assert cached.dim == 24
        assert np.array_equal(cached.embed(texts), emb.embed(texts))

    def test_miss_is_an_error(self, tmp_path):
        path = tmp_path / "cache.tsv"
        write_embedding_cache(str(path), FallbackEmbedder(8), ["known"])
        with pytest.raises(EmbedderConfigError):
            FileCacheEmbedder(str(path)).embed(["unknown"])

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("not-a-header\n")
        with pytest.raises(EmbedderConfigError):
            FileCacheEmbedder(str(path))


STUB_SIDECAR = r"""
import json, sys
for line in sys.stdin:
    msg = json.loads(line)
    if msg["op"] == "hello":
        print(json.dumps({"id": msg["id"], "dim": 4}), flush=True)
    elif msg["op"] == "embed":
        vecs = [[float(len(t)), 1.0, 0.0, 0.0] for t in msg["texts"]]
        print(json.dumps({"id": msg["id"], "embeddings": vecs}), flush=True)
"""


class TestSidecarClient:
    def test_handshake_and_embed(self):
        emb = SidecarEmbedder([sys.executable, "-c", STUB_SIDECAR])
        try:
            assert emb.dim == 4
            out = emb.embed(["ab", "xyz"])
            assert out.shape == (2, 4)
            assert out[0][0] == 2.0 and out[1][0] == 3.0
        finally:
            emb.close()

    def test_dim_mismatch_is_fatal(self):
        with pytest.raises(EmbedderConfigError):
            SidecarEmbedder([sys.executable, "-c", STUB_SIDECAR], expected_dim=384)

    def test_dead_sidecar_is_transport_error(self):
        with pytest.raises(SidecarTransportError):
            SidecarEmbedder([sys.executable, "-c", "import sys; sys.exit(0)"])


class TestMakeEmbedder:
    def test_fallback(self):
        assert make_embedder("fallback", 16).kind == "fallback"

    def test_unknown_spec(self):
        with pytest.raises(EmbedderConfigError):
            make_embedder("magic")
