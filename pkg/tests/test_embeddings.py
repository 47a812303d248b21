import struct

import numpy as np
import pytest

from rtm.embeddings import (
    EmbeddingFormatError,
    EmbeddingStore,
    convert_binary_vectors,
    embed_sequence,
    load_text_vectors,
    lookup,
    sentence_vector,
)


@pytest.fixture
def tiny_store(tmp_path):
    p = tmp_path / "vecs.txt"
    p.write_text("a 1 0\nb 0 1\n")
    return load_text_vectors(p)


class TestLoader:
    def test_basic(self, tiny_store):
        assert tiny_store.dim == 2
        np.testing.assert_array_equal(lookup(tiny_store, "a"), [1.0, 0.0])
        np.testing.assert_array_equal(lookup(tiny_store, "b"), [0.0, 1.0])

    def test_header_skipped(self, tmp_path):
        p = tmp_path / "v.txt"
        p.write_text("400000 50\n" + "tok " + " ".join(["0.5"] * 50) + "\n")
        store = load_text_vectors(p)
        assert store.dim == 50
        assert len(store) == 1

    def test_ragged_line_reports_lineno(self, tmp_path):
        p = tmp_path / "v.txt"
        p.write_text("a 1 0\nb 0 1\nc 1 2 3\n")
        with pytest.raises(EmbeddingFormatError, match=r"v.txt:3"):
            load_text_vectors(p)

    def test_expected_dim_mismatch(self, tmp_path):
        p = tmp_path / "v.txt"
        p.write_text("a 1 0 0\n")
        with pytest.raises(EmbeddingFormatError, match="expected 2"):
            load_text_vectors(p, expected_dim=2)

    def test_duplicates_first_wins(self, tmp_path):
        p = tmp_path / "v.txt"
        p.write_text("a 1 0\na 9 9\n")
        store = load_text_vectors(p)
        np.testing.assert_array_equal(lookup(store, "a"), [1.0, 0.0])
        assert store.duplicates == 1

    def test_permuted_file_gives_identical_lookups(self, tmp_path):
        p1 = tmp_path / "v1.txt"
        p2 = tmp_path / "v2.txt"
        p1.write_text("a 1 2\nb 3 4\nc 5 6\n")
        p2.write_text("c 5 6\na 1 2\nb 3 4\n")
        s1 = load_text_vectors(p1)
        s2 = load_text_vectors(p2)
        for tok in "abc":
            np.testing.assert_array_equal(lookup(s1, tok), lookup(s2, tok))

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.txt"
        p.write_text("")
        with pytest.raises(EmbeddingFormatError, match="no vector lines"):
            load_text_vectors(p)


class TestLookup:
    def test_oov_zeros(self, tmp_path):
        p = tmp_path / "v.txt"
        p.write_text("a 1 0\n")
        store = load_text_vectors(p, oov_policy="zeros")
        np.testing.assert_array_equal(lookup(store, "xyzzy"), [0.0, 0.0])

    def test_oov_hashed_uniform_deterministic(self, tiny_store):
        v1 = lookup(tiny_store, "xyzzy")
        v2 = lookup(tiny_store, "xyzzy")
        np.testing.assert_array_equal(v1, v2)
        assert np.all(np.abs(v1) <= 0.25)
        assert np.any(v1 != 0.0)
        # distinct tokens get distinct draws
        assert not np.array_equal(v1, lookup(tiny_store, "plugh"))

    def test_oov_stable_across_stores(self, tmp_path):
        p = tmp_path / "v.txt"
        p.write_text("a 1 0\nb 0 1\n")
        s1 = load_text_vectors(p)
        s2 = load_text_vectors(p)
        np.testing.assert_array_equal(lookup(s1, "qqq"), lookup(s2, "qqq"))

    def test_lookup_dim_always_matches(self, tiny_store):
        for tok in ("a", "b", "oov1", "oov2"):
            assert lookup(tiny_store, tok).shape == (tiny_store.dim,)


class TestSequences:
    def test_embed_sequence(self, tiny_store):
        out = embed_sequence(tiny_store, ["a", "b"])
        np.testing.assert_array_equal(out, [[1.0, 0.0], [0.0, 1.0]])

    def test_repeated_token(self, tiny_store):
        out = embed_sequence(tiny_store, ["a", "a"])
        np.testing.assert_array_equal(out[0], out[1])

    def test_rowwise_matches_lookup(self, tiny_store):
        toks = ["a", "zz", "b", "b"]
        out = embed_sequence(tiny_store, toks)
        for t, tok in enumerate(toks):
            np.testing.assert_array_equal(out[t], lookup(tiny_store, tok))

    def test_forty_token_shape(self, tiny_store):
        out = embed_sequence(tiny_store, ["a"] * 40)
        assert out.shape == (40, 2)

    def test_empty_sequence(self, tiny_store):
        with pytest.raises(ValueError, match="empty"):
            embed_sequence(tiny_store, [])


class TestSentenceVector:
    def test_single_token(self, tiny_store):
        np.testing.assert_array_equal(sentence_vector(tiny_store, ["a"]), [1.0, 0.0])

    def test_two_token_mean(self, tiny_store):
        np.testing.assert_array_equal(sentence_vector(tiny_store, ["a", "b"]), [0.5, 0.5])

    def test_matches_independent_columnwise_loop(self, tmp_path):
        rng = np.random.default_rng(8)
        toks = [f"t{i}" for i in range(6)]
        lines = [f"{t} " + " ".join(repr(float(x)) for x in rng.normal(size=5)) for t in toks]
        p = tmp_path / "v.txt"
        p.write_text("\n".join(lines) + "\n")
        store = load_text_vectors(p)
        sentence = [toks[i] for i in rng.integers(0, 6, size=10)]
        got = sentence_vector(store, sentence)
        # independent loop: column means
        expected = np.zeros(5)
        for col in range(5):
            s = 0.0
            for tok in sentence:
                s += lookup(store, tok)[col]
            expected[col] = s / len(sentence)
        np.testing.assert_allclose(got, expected, atol=1e-12)


class TestBinaryConverter:
    def test_roundtrip(self, tmp_path):
        src = tmp_path / "vecs.bin"
        vecs = {"alpha": [1.5, -2.0, 0.25], "beta": [0.0, 3.5, -1.0]}
        with open(src, "wb") as fh:
            fh.write(b"2 3\n")
            for tok, vals in vecs.items():
                fh.write(tok.encode() + b" ")
                fh.write(struct.pack("<3f", *vals))
        dst = tmp_path / "vecs.txt"
        n = convert_binary_vectors(src, dst)
        assert n == 2
        store = load_text_vectors(dst)
        np.testing.assert_allclose(lookup(store, "alpha"), [1.5, -2.0, 0.25])
        np.testing.assert_allclose(lookup(store, "beta"), [0.0, 3.5, -1.0])

    def test_truncated_file(self, tmp_path):
        src = tmp_path / "bad.bin"
        src.write_bytes(b"2 3\nalpha " + struct.pack("<2f", 1.0, 2.0))
        with pytest.raises(EmbeddingFormatError, match="truncated"):
            convert_binary_vectors(src, tmp_path / "out.txt")


class TestFingerprint:
    def test_stable_and_sensitive(self, tmp_path):
        p = tmp_path / "v.txt"
        p.write_text("a 1 0\nb 0 1\n")
        f1 = load_text_vectors(p).fingerprint()
        f2 = load_text_vectors(p).fingerprint()
        assert f1 == f2
        p2 = tmp_path / "v2.txt"
        p2.write_text("a 1 0\nb 0 2\n")
        assert load_text_vectors(p2).fingerprint() != f1

    def test_invalid_policy(self):
        with pytest.raises(ValueError):
            EmbeddingStore({}, np.zeros((0, 3)), oov_policy="random")
