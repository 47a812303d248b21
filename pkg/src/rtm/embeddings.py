"""Pre-trained word vectors: text-format loading, lookup, sentence vectors.

The store is immutable after load.  Out-of-vocabulary tokens get either a
zero vector or a per-token seeded uniform draw in [-0.25, 0.25]; the same
OOV token always maps to the same vector regardless of platform or query
order.
"""

import hashlib
import logging
import struct
from pathlib import Path

import numpy as np

from .numkit import make_rng

log = logging.getLogger(__name__)

OOV_POLICIES = ("zeros", "hashed_uniform")


class EmbeddingFormatError(Exception):
    """Malformed vector file."""


class EmbeddingStore:
    """Token -> row mapping over a dense float64 matrix."""

    def __init__(self, vocab, matrix, oov_policy="hashed_uniform"):
        if oov_policy not in OOV_POLICIES:
            raise ValueError(f"unknown oov policy {oov_policy!r}")
        self.vocab = dict(vocab)
        self.matrix = np.asarray(matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise EmbeddingFormatError("embedding matrix must be 2-d")
        if any(i >= self.matrix.shape[0] for i in self.vocab.values()):
            raise EmbeddingFormatError("vocab index out of range")
        self.oov_policy = oov_policy
        self._oov_cache = {}

    @property
    def dim(self):
        return self.matrix.shape[1]

    def __len__(self):
        return self.matrix.shape[0]

    def __contains__(self, token):
        return token in self.vocab

    def row_index(self, token):
        """Matrix row of an in-vocab token, else None."""
        return self.vocab.get(token)

    def _oov_vector(self, token):
        vec = self._oov_cache.get(token)
        if vec is None:
            if self.oov_policy == "zeros":
                vec = np.zeros(self.dim)
            else:
                digest = hashlib.sha256(token.encode("utf-8")).digest()
                seed = int.from_bytes(digest[:8], "little")
                vec = make_rng(seed).uniform(-0.25, 0.25, size=self.dim)
            self._oov_cache[token] = vec
        return vec

    def fingerprint(self):
        """Stable digest of (dim, vocab, matrix, oov policy) for provenance."""
        h = hashlib.sha256()
        h.update(f"{self.dim}:{len(self)}:{self.oov_policy}".encode())
        for token in sorted(self.vocab):
            h.update(token.encode("utf-8"))
            h.update(self.matrix[self.vocab[token]].tobytes())
        return h.hexdigest()


def lookup(store, token):
    """Stored row for in-vocab tokens, OOV-policy vector otherwise."""
    idx = store.vocab.get(token)
    if idx is not None:
        return store.matrix[idx]
    return store._oov_vector(token)


def embed_sequence(store, tokens):
    """Stack lookups into a [T x dim] matrix."""
    if not tokens:
        raise ValueError("embed_sequence: empty token sequence")
    return np.stack([lookup(store, t) for t in tokens])


def sentence_vector(store, tokens):
    """Arithmetic mean of the sequence's embedding rows."""
    return embed_sequence(store, tokens).mean(axis=0)


def _looks_like_header(fields):
    if len(fields) != 2:
        return False
    try:
        int(fields[0])
        int(fields[1])
    except ValueError:
        return False
    return True


def load_text_vectors(path, expected_dim=None, oov_policy="hashed_uniform"):
    """Parse a text vector file: one "token v1 ... vd" line per word.

    An optional first line "count dim" is detected and skipped.  The
    dimension is inferred from the first vector line; ragged lines raise.
    Duplicate tokens keep the first occurrence.
    """
    path = Path(path)
    vocab = {}
    rows = []
    dim = None
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.rstrip("\n").split()
            if not fields:
                continue
            if lineno == 1 and _looks_like_header(fields):
                continue
            token, values = fields[0], fields[1:]
            if dim is None:
                if not values:
                    raise EmbeddingFormatError(f"{path}:{lineno}: no vector values")
                dim = len(values)
                if expected_dim is not None and dim != expected_dim:
                    raise EmbeddingFormatError(
                        f"{path}: dimension {dim} != expected {expected_dim}"
                    )
            if len(values) != dim:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: expected {dim} values, got {len(values)}"
                )
            if token in vocab:
                duplicates += 1
                continue
            try:
                row = [float(v) for v in values]
            except ValueError:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: non-numeric vector value"
                ) from None
            vocab[token] = len(rows)
            rows.append(row)
    if dim is None:
        raise EmbeddingFormatError(f"{path}: no vector lines found")
    if duplicates:
        log.warning("%s: %d duplicate tokens ignored (first occurrence wins)", path, duplicates)
    store = EmbeddingStore(vocab, np.array(rows, dtype=np.float64), oov_policy)
    store.duplicates = duplicates
    return store


def convert_binary_vectors(src, dst):
    """Rewrite the binary word-vector format (header + float32 rows) to text."""
    src, dst = Path(src), Path(dst)
    with open(src, "rb") as fin:
        header = b""
        while not header.endswith(b"\n"):
            c = fin.read(1)
            if not c:
                raise EmbeddingFormatError(f"{src}: truncated header")
            header += c
        try:
            count, dim = (int(x) for x in header.split())
        except ValueError:
            raise EmbeddingFormatError(f"{src}: bad binary header {header!r}") from None
        with open(dst, "w", encoding="utf-8") as fout:
            fout.write(f"{count} {dim}\n")
            for _ in range(count):
                token = b""
                while True:
                    c = fin.read(1)
                    if not c:
                        raise EmbeddingFormatError(f"{src}: truncated token")
                    if c == b" ":
                        break
                    if c != b"\n":
                        token += c
                raw = fin.read(4 * dim)
                if len(raw) != 4 * dim:
                    raise EmbeddingFormatError(f"{src}: truncated vector data")
                values = struct.unpack(f"<{dim}f", raw)
                fout.write(token.decode("utf-8", errors="replace"))
                fout.write(" ")
                fout.write(" ".join(repr(float(v)) for v in values))
                fout.write("\n")
    return count
