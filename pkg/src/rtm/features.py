"""The 51-dimensional handcrafted feature extractor and its normalization.

Three families feed the default manifest:

* lexical (8): token lengths of both sides, raw overlap, overlap ratio,
  exact contiguous match, idf-weighted overlap, BM25, and a Dirichlet
  query-likelihood score, all against train-split statistics;
* neural (35): seven vector distances (cosine, manhattan, jaccard on sign
  patterns, canberra, euclidean, minkowski p=3, bray-curtis) over five
  sentence-vector constructions (plain means, rescaled/secondary means,
  idf-weighted means, max-pooled vectors, long-token means);
* readability (8): characters and syllables per word, words per sentence,
  complex-word rates, the familiar-word readability index, and character
  lengths of both sides.

The manifest is data: an ordered list of (name, family, extractor id) that
can be swapped wholesale.  Extraction is deterministic, and every value is
finite by construction.
"""

import hashlib
import json
import math
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .easy_words import EASY_WORDS
from .embeddings import lookup
from .numkit import Param, ShapeError, activation, activation_backward, uniform_init

BM25_K1 = 1.2
BM25_B = 0.75
DIRICHLET_MU = 2000.0
MINKOWSKI_P = 3
LONG_TOKEN_MIN_CHARS = 4  # stand-in for content words: tokens longer than 3 chars

_VOWEL_GROUP_RE = re.compile(r"[aeiouy]+")


class ManifestError(Exception):
    """Unknown extractor id or malformed manifest."""


# ---------------------------------------------------------------------------
# corpus statistics


@dataclass
class CorpusStats:
    """Document frequencies and collection counts from the training split only."""

    document_frequency: dict
    num_documents: int
    average_answer_length: float
    collection_counts: dict
    collection_size: int

    def df(self, token):
        return self.document_frequency.get(token, 0)

    def idf(self, token):
        return math.log((self.num_documents + 1) / (self.df(token) + 1)) + 1.0

    def collection_prob(self, token):
        # Laplace-smoothed collection model keeps log-probabilities finite
        vocab = len(self.collection_counts)
        count = self.collection_counts.get(token, 0)
        return (count + 1.0) / (self.collection_size + max(vocab, 1))


def build_stats(train_split):
    """Count each candidate answer of the training split as one document."""
    answers = [ex.answer_tokens for ex in train_split.examples]
    if not answers:
        raise ValueError("build_stats: empty training split")
    df = Counter()
    collection = Counter()
    total_len = 0
    for tokens in answers:
        df.update(set(tokens))
        collection.update(tokens)
        total_len += len(tokens)
    return CorpusStats(
        document_frequency=dict(df),
        num_documents=len(answers),
        average_answer_length=total_len / len(answers),
        collection_counts=dict(collection),
        collection_size=total_len,
    )


# ---------------------------------------------------------------------------
# lexical and semantic scores


def _is_contiguous_subsequence(needle, haystack):
    n = len(needle)
    if n == 0 or n > len(haystack):
        return False
    return any(haystack[i : i + n] == needle for i in range(len(haystack) - n + 1))


def bm25_score(q_tokens, a_tokens, stats):
    tf = Counter(a_tokens)
    dl = len(a_tokens)
    norm = BM25_K1 * (1.0 - BM25_B + BM25_B * dl / stats.average_answer_length)
    score = 0.0
    for t in set(q_tokens):
        if tf[t] == 0:
            continue
        score += stats.idf(t) * tf[t] * (BM25_K1 + 1.0) / (tf[t] + norm)
    return score


def lm_score(q_tokens, a_tokens, stats):
    """Query log-likelihood under a Dirichlet-smoothed answer language model."""
    tf = Counter(a_tokens)
    dl = len(a_tokens)
    score = 0.0
    for t in q_tokens:
        p = (tf[t] + DIRICHLET_MU * stats.collection_prob(t)) / (dl + DIRICHLET_MU)
        score += math.log(p)
    return score


def lexical_features(q_tokens, a_tokens, stats):
    """Named lexical/semantic scores for one pair."""
    q_set, a_set = set(q_tokens), set(a_tokens)
    inter = q_set & a_set
    union = q_set | a_set
    return {
        "q_len": float(len(q_tokens)),
        "a_len": float(len(a_tokens)),
        "overlap": float(len(inter)),
        "overlap_ratio": len(inter) / len(union) if union else 0.0,
        "exact_match": 1.0 if _is_contiguous_subsequence(q_tokens, a_tokens) else 0.0,
        "idf_overlap": sum(stats.idf(t) for t in inter),
        "bm25": bm25_score(q_tokens, a_tokens, stats),
        "lm": lm_score(q_tokens, a_tokens, stats),
    }


# ---------------------------------------------------------------------------
# vector distances


def cosine_distance(u, v):
    nu = math.sqrt(float(u @ u))
    nv = math.sqrt(float(v @ v))
    if nu == 0.0 or nv == 0.0:
        return 1.0
    return 1.0 - float(u @ v) / (nu * nv)


def manhattan_distance(u, v):
    return float(np.abs(u - v).sum())


def jaccard_similarity(u, v):
    """Jaccard over the binarized (strictly positive) sign patterns."""
    bu = u > 0
    bv = v > 0
    union = np.logical_or(bu, bv).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(bu, bv).sum()) / float(union)


def canberra_distance(u, v):
    num = np.abs(u - v)
    den = np.abs(u) + np.abs(v)
    with np.errstate(invalid="ignore"):
        terms = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return float(terms.sum())


def euclidean_distance(u, v):
    return float(np.sqrt(((u - v) ** 2).sum()))


def minkowski_distance(u, v, p=MINKOWSKI_P):
    return float((np.abs(u - v) ** p).sum() ** (1.0 / p))


def braycurtis_distance(u, v):
    den = float(np.abs(u + v).sum())
    if den == 0.0:
        return 1.0
    return float(np.abs(u - v).sum()) / den


DISTANCE_MEASURES = {
    "cosine": cosine_distance,
    "manhattan": manhattan_distance,
    "jaccard": jaccard_similarity,
    "canberra": canberra_distance,
    "euclidean": euclidean_distance,
    "minkowski": minkowski_distance,
    "braycurtis": braycurtis_distance,
}


def neural_features(v_q, v_a):
    """All seven distance measures between two equal-dim sentence vectors."""
    v_q = np.asarray(v_q, dtype=np.float64)
    v_a = np.asarray(v_a, dtype=np.float64)
    if v_q.shape != v_a.shape:
        raise ShapeError(f"neural_features: {v_q.shape} vs {v_a.shape}")
    return {name: fn(v_q, v_a) for name, fn in DISTANCE_MEASURES.items()}


# sentence-vector constructions feeding the distance measures


def _mean_vector(store, tokens):
    rows = np.stack([lookup(store, t) for t in tokens])
    return rows.mean(axis=0)


def _idf_mean_vector(store, tokens, stats):
    weights = np.array([stats.idf(t) for t in tokens])
    rows = np.stack([lookup(store, t) for t in tokens])
    return (rows * weights[:, None]).sum(axis=0) / weights.sum()


def _max_vector(store, tokens):
    rows = np.stack([lookup(store, t) for t in tokens])
    return rows.max(axis=0)


def _long_token_mean_vector(store, tokens):
    long_toks = [t for t in tokens if len(t) >= LONG_TOKEN_MIN_CHARS]
    if not long_toks:
        return np.zeros(store.dim)
    return _mean_vector(store, long_toks)


VECTOR_CONSTRUCTIONS = ("mean", "alt_mean", "idf_mean", "max", "long_mean")


def construct_vectors(tokens, construction, store, stats, secondary_store=None):
    if construction == "mean":
        return _mean_vector(store, tokens)
    if construction == "alt_mean":
        if secondary_store is not None:
            return _mean_vector(secondary_store, tokens)
        return 0.5 * _mean_vector(store, tokens)  # rescaled primary fallback
    if construction == "idf_mean":
        return _idf_mean_vector(store, tokens, stats)
    if construction == "max":
        return _max_vector(store, tokens)
    if construction == "long_mean":
        return _long_token_mean_vector(store, tokens)
    raise ManifestError(f"unknown vector construction {construction!r}")


# ---------------------------------------------------------------------------
# readability


def count_syllables(word):
    """Maximal vowel-group count, at least 1."""
    return max(1, len(_VOWEL_GROUP_RE.findall(word.lower())))


def is_complex_word(word):
    return count_syllables(word) >= 3


def readability_features(tokens, sentence_count=1, easy_words=EASY_WORDS):
    """Six readability statistics over a token list.

    A word missing from the easy-word list counts as difficult; with no list
    the complex-word rule is the fallback.
    """
    if not tokens:
        raise ValueError("readability_features: empty token list")
    if sentence_count < 1:
        raise ValueError("readability_features: sentence_count must be >= 1")
    n_words = len(tokens)
    n_chars = sum(len(t) for t in tokens)
    n_syll = sum(count_syllables(t) for t in tokens)
    n_complex = sum(1 for t in tokens if is_complex_word(t))
    if easy_words:
        n_difficult = sum(1 for t in tokens if t.lower() not in easy_words)
    else:
        n_difficult = n_complex
    pct_difficult = 100.0 * n_difficult / n_words
    wps = n_words / sentence_count
    dale_chall = 0.1579 * pct_difficult + 0.0496 * wps
    if pct_difficult > 5.0:
        dale_chall += 3.6365
    return {
        "cpw": n_chars / n_words,
        "spw": n_syll / n_words,
        "wps": wps,
        "cwps": n_complex / sentence_count,
        "cwr": n_complex / n_words,
        "dale_chall": dale_chall,
    }


# ---------------------------------------------------------------------------
# manifest and extraction


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    family: str
    extractor: str


@dataclass
class FeatureManifest:
    entries: list

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ManifestError("duplicate feature names in manifest")

    def __len__(self):
        return len(self.entries)

    @property
    def names(self):
        return [e.name for e in self.entries]

    def hash(self):
        blob = "\n".join(f"{e.name}\t{e.family}\t{e.extractor}" for e in self.entries)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def to_json(self):
        return json.dumps(
            [{"name": e.name, "family": e.family, "extractor": e.extractor} for e in self.entries],
            indent=2,
        )

    @classmethod
    def from_json(cls, text):
        try:
            raw = json.loads(text)
            entries = [ManifestEntry(d["name"], d["family"], d["extractor"]) for d in raw]
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ManifestError(f"malformed manifest: {e}") from e
        return cls(entries)


@dataclass
class FeatureVector:
    values: np.ndarray
    manifest: FeatureManifest

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.manifest),):
            raise ShapeError(
                f"feature vector length {self.values.shape} != manifest ({len(self.manifest)},)"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature vector contains non-finite values")


def default_manifest():
    """The standard 51-entry manifest: 8 lexical, 35 neural, 8 readability."""
    entries = []
    for key in ("q_len", "a_len", "overlap", "overlap_ratio", "exact_match",
                "idf_overlap", "bm25", "lm"):
        entries.append(ManifestEntry(key, "lexical", f"lexical:{key}"))
    for construction in VECTOR_CONSTRUCTIONS:
        for measure in DISTANCE_MEASURES:
            entries.append(
                ManifestEntry(
                    f"{measure}_{construction}",
                    "neural",
                    f"neural:{measure}:{construction}",
                )
            )
    for key in ("cpw", "spw", "wps", "cwps", "cwr", "dale_chall"):
        entries.append(ManifestEntry(key, "readability", f"readability:{key}"))
    entries.append(ManifestEntry("a_chars", "readability", "readability:a_chars"))
    entries.append(ManifestEntry("q_chars", "readability", "readability:q_chars"))
    return FeatureManifest(entries)


@dataclass
class ExtractionContext:
    q_tokens: list
    a_tokens: list
    stats: CorpusStats
    store: object
    secondary_store: object = None


def _resolve_extractor(extractor_id):
    parts = extractor_id.split(":")
    family = parts[0]
    if family == "lexical" and len(parts) == 2:
        key = parts[1]

        def run(ctx):
            values = lexical_features(ctx.q_tokens, ctx.a_tokens, ctx.stats)
            if key not in values:
                raise ManifestError(f"unknown lexical feature {key!r}")
            return values[key]

        return run
    if family == "neural" and len(parts) == 3:
        measure, construction = parts[1], parts[2]
        if measure not in DISTANCE_MEASURES or construction not in VECTOR_CONSTRUCTIONS:
            raise ManifestError(f"unknown extractor id {extractor_id!r}")

        def run(ctx):
            v_q = construct_vectors(
                ctx.q_tokens, construction, ctx.store, ctx.stats, ctx.secondary_store
            )
            v_a = construct_vectors(
                ctx.a_tokens, construction, ctx.store, ctx.stats, ctx.secondary_store
            )
            return DISTANCE_MEASURES[measure](v_q, v_a)

        return run
    if family == "readability" and len(parts) == 2:
        key = parts[1]
        if key == "a_chars":
            return lambda ctx: float(sum(len(t) for t in ctx.a_tokens))
        if key == "q_chars":
            return lambda ctx: float(sum(len(t) for t in ctx.q_tokens))

        def run(ctx):
            values = readability_features(ctx.a_tokens)
            if key not in values:
                raise ManifestError(f"unknown readability feature {key!r}")
            return values[key]

        return run
    raise ManifestError(f"unknown extractor id {extractor_id!r}")


def extract(q_tokens, a_tokens, stats, store, manifest, secondary_store=None):
    """Ordered feature vector for one pair, per the manifest."""
    ctx = ExtractionContext(q_tokens, a_tokens, stats, store, secondary_store)
    values = np.array([_resolve_extractor(e.extractor)(ctx) for e in manifest.entries])
    return FeatureVector(values, manifest)


# ---------------------------------------------------------------------------
# normalization layer (Eq.-style affine + nonlinearity down to the context dim)


@dataclass
class FeatureNormParams:
    """Projection of the raw feature vector into the context dimension."""

    w_h: Param
    b: Param
    alpha: str = "tanh"

    @classmethod
    def init(cls, rng, num_features, dim, alpha="tanh", prefix="feat"):
        return cls(
            w_h=Param(f"{prefix}.w_h", uniform_init(rng, (num_features, dim), num_features, dim)),
            b=Param(f"{prefix}.b", np.zeros(dim)),
            alpha=alpha,
        )

    def params(self):
        return [self.w_h, self.b]


def normalize_features(fv, p):
    """c_ext = alpha(w_h^T ext + b)."""
    values = fv.values if isinstance(fv, FeatureVector) else np.asarray(fv, dtype=np.float64)
    if values.shape[0] != p.w_h.value.shape[0]:
        raise ShapeError(
            f"normalize_features: {values.shape[0]} features vs w_h {p.w_h.value.shape}"
        )
    return activation(p.w_h.value.T @ values + p.b.value, p.alpha)


def normalize_features_forward(values, p):
    pre = p.w_h.value.T @ values + p.b.value
    return activation(pre, p.alpha), (values, pre)


def normalize_features_backward(d_out, cache, p):
    values, pre = cache
    d_pre = activation_backward(pre, d_out, p.alpha)
    p.w_h.grad += np.outer(values, d_pre)
    p.b.grad += d_pre


# ---------------------------------------------------------------------------
# feature cache


def write_feature_cache(path, manifest, records):
    """Write (qid, aid, values) records as reproducible delimited text."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# manifest_hash={manifest.hash()}\n")
        fh.write("# features=" + "\t".join(manifest.names) + "\n")
        for qid, aid, values in records:
            vals = "\t".join(repr(float(v)) for v in values)
            fh.write(f"{qid}\t{aid}\t{vals}\n")


def read_feature_cache(path, manifest=None):
    """Read a cache file; returns (manifest_hash, {(qid, aid): ndarray})."""
    table = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("# manifest_hash="):
            raise ManifestError(f"{path}: missing manifest hash header")
        manifest_hash = header.split("=", 1)[1]
        names_line = fh.readline().strip()
        if not names_line.startswith("# features="):
            raise ManifestError(f"{path}: missing feature names header")
        n_features = len(names_line.split("=", 1)[1].split("\t"))
        if manifest is not None and manifest.hash() != manifest_hash:
            raise ManifestError(
                f"{path}: cache built from a different manifest "
                f"({manifest_hash[:12]} != {manifest.hash()[:12]})"
            )
        for lineno, line in enumerate(fh, start=3):
            cols = line.rstrip("\n").split("\t")
            if len(cols) != 2 + n_features:
                raise ManifestError(f"{path}:{lineno}: bad record width")
            qid, aid = cols[0], cols[1]
            table[(qid, aid)] = np.array([float(v) for v in cols[2:]])
    return manifest_hash, table
