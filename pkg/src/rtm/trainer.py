"""End-to-end model assembly, the training objective, and the training loop.

The forward pass composes embedding lookup, shared biLSTM encoding, plain
pooling on the question side, attention-weighted pooling on the answer
side, feature normalization, the 3-way tensor interaction and the
classifier.  The backward pass retraces those steps explicitly (the
architecture is fixed, so no general tape is needed).  The objective is
mean cross-entropy plus separate L2 penalties on the hidden/output weights
and on each tensor stack.  Training is minibatched Adam with inverted
dropout on the context vectors and the hidden layer, seeded shuffling, and
early stopping on dev MAP.
"""

import json
import struct
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import attention as attn_mod
from . import encoder, interaction
from .embeddings import lookup
from .features import FeatureNormParams, normalize_features_backward, normalize_features_forward
from .numkit import (
    Param,
    adam_init,
    adam_step,
    make_rng,
    zero_grads,
)

MODEL_MAGIC = b"RTMB"
MODEL_FORMAT_VERSION = 1

SCORE_CLAMP = 1e-12


class ModelFileError(Exception):
    """Unreadable or truncated model file."""


class ConfigMismatchError(ModelFileError):
    """Model file disagrees with the requested configuration."""


class ProvenanceError(Exception):
    """Artifact fingerprints disagree (wrong embeddings or feature manifest)."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the last good state and reports."""

    def __init__(self, message, state=None, reports=None):
        super().__init__(message)
        self.state = state
        self.reports = reports or []


@dataclass
class ModelConfig:
    """Model and schedule hyper-parameters (defaults follow the standard recipe)."""

    embedding_dim: int = 50
    hidden_size: int = 50  # context dim is twice this
    k: int = 1  # slices per relation tensor
    attention: str = "phrase"  # or "token"
    pooling: str = "max"  # or "average"
    hidden_units: int = 100
    num_features: int = 51
    dropout: float = 0.4
    learning_rate: float = 0.001
    l2_lambda: float = 1e-6
    batch_size: int = 64
    max_epochs: int = 20
    patience: int = 5
    seed: int = 0
    tensor_activation: str = "tanh"
    feature_activation: str = "tanh"
    hidden_activation: str = "tanh"
    normalize_attention: bool = True
    token_alignment: str = "position"
    tie_encoders: bool = True
    train_embeddings: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.attention not in attn_mod.ATTENTION_MODES:
            raise ValueError(f"unknown attention mode {self.attention!r}")
        if self.pooling not in encoder.POOLING_MODES:
            raise ValueError(f"unknown pooling mode {self.pooling!r}")

    @property
    def context_dim(self):
        return 2 * self.hidden_size

    @property
    def merge_width(self):
        return 2 * self.context_dim + 3 * self.k


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    dev_map: float
    dev_mrr: float
    wall_time: float

    def key(self):
        """The deterministic fields (wall time is a measurement, not output)."""
        return (self.epoch, self.train_loss, self.dev_map, self.dev_mrr)


class ModelState:
    """Every trainable parameter plus the frozen embedding store handle."""

    def __init__(self, config, store, manifest_hash=""):
        self.config = config
        self.store = store
        self.manifest_hash = manifest_hash
        self.embedding_fingerprint = store.fingerprint()
        if store.dim != config.embedding_dim:
            raise ValueError(
                f"store dim {store.dim} != configured embedding_dim {config.embedding_dim}"
            )
        rng = make_rng(config.seed)
        d_e, h, d = config.embedding_dim, config.hidden_size, config.context_dim
        self.fwd = encoder.LSTMParams.init(rng, d_e, h, "lstm.fwd")
        self.bwd = encoder.LSTMParams.init(rng, d_e, h, "lstm.bwd")
        if config.tie_encoders:
            self.a_fwd, self.a_bwd = self.fwd, self.bwd
        else:
            self.a_fwd = encoder.LSTMParams.init(rng, d_e, h, "lstm.a_fwd")
            self.a_bwd = encoder.LSTMParams.init(rng, d_e, h, "lstm.a_bwd")
        self.attn = attn_mod.AttentionParams.init(rng, d, "attn")
        self.feat = FeatureNormParams.init(
            rng, config.num_features, d, config.feature_activation, "feat"
        )
        self.tensors = interaction.TensorParams.init(rng, d, config.k, prefix="tensor")
        self.clf = interaction.ClassifierParams.init(
            rng,
            config.merge_width,
            config.hidden_units,
            config.hidden_activation,
            "clf",
        )
        self.emb_param = None
        if config.train_embeddings:
            self.emb_param = Param("emb.matrix", store.matrix.copy())
        self._index_params()

    def _index_params(self):
        params = list(self.fwd.params()) + list(self.bwd.params())
        if not self.config.tie_encoders:
            params += list(self.a_fwd.params()) + list(self.a_bwd.params())
        params += self.attn.params() + self.feat.params()
        params += self.tensors.params() + self.clf.params()
        if self.emb_param is not None:
            params.append(self.emb_param)
        self.params = {p.name: p for p in params}
        if len(self.params) != len(params):
            raise ValueError("duplicate parameter names in model state")

    def param_list(self):
        return list(self.params.values())

    def regularized_params(self):
        """Hidden/output weights plus each tensor stack, penalized separately."""
        return [
            self.clf.W_hidden,
            self.clf.W_out,
            self.tensors.M1,
            self.tensors.M2,
            self.tensors.M3,
        ]

    def copy_values(self):
        return {name: p.value.copy() for name, p in self.params.items()}

    def load_values(self, values):
        for name, p in self.params.items():
            p.value[...] = values[name]


def init_model_state(config, store, manifest_hash=""):
    return ModelState(config, store, manifest_hash)


def _embed(state, tokens):
    """Embedding rows plus matrix row indices (None for OOV tokens)."""
    store = state.store
    matrix = state.emb_param.value if state.emb_param is not None else store.matrix
    indices = [store.row_index(t) for t in tokens]
    rows = np.stack(
        [
            matrix[i] if i is not None else lookup(store, t)
            for i, t in zip(indices, tokens)
        ]
    )
    return rows, indices


def _dropout_mask(rng, size, rate):
    return (rng.random(size) >= rate) / (1.0 - rate)


def forward(example, fv, state, config, train_mode=False, rng=None):
    """Relevance score for one example; returns (s, cache).

    Dropout masks are drawn from ``rng`` only when ``train_mode`` is set;
    evaluation is a pure function of (state, example, fv).
    """
    fv = np.asarray(fv, dtype=np.float64)
    if fv.shape != (config.num_features,):
        raise ValueError(
            f"feature vector {fv.shape} != configured ({config.num_features},)"
        )
    v_q, q_idx = _embed(state, example.question_tokens)
    v_a, a_idx = _embed(state, example.answer_tokens)

    h_q, q_cache = encoder.bilstm_forward(v_q, state.fwd, state.bwd)
    h_a, a_cache = encoder.bilstm_forward(v_a, state.a_fwd, state.a_bwd)

    c_q = encoder.pool(h_q, config.pooling)
    c_a, attn_cache = attn_mod.attention_forward(
        h_a,
        h_q,
        c_q,
        state.attn,
        mode=config.attention,
        pooling=config.pooling,
        normalize=config.normalize_attention,
        alignment=config.token_alignment,
    )

    use_dropout = train_mode and config.dropout > 0.0 and rng is not None
    if use_dropout:
        mask_q = _dropout_mask(rng, config.context_dim, config.dropout)
        mask_a = _dropout_mask(rng, config.context_dim, config.dropout)
        mask_h = _dropout_mask(rng, config.hidden_units, config.dropout)
    else:
        mask_q = mask_a = mask_h = None

    c_q_used = c_q if mask_q is None else c_q * mask_q
    c_a_used = c_a if mask_a is None else c_a * mask_a

    c_ext, feat_cache = normalize_features_forward(fv, state.feat)

    s, probs, inter_cache = interaction.interaction_forward(
        c_q_used,
        c_a_used,
        c_ext,
        state.tensors,
        state.clf,
        kind=config.tensor_activation,
        dropout_mask=mask_h,
    )
    cache = {
        "q_idx": q_idx,
        "a_idx": a_idx,
        "h_q": h_q,
        "q_cache": q_cache,
        "a_cache": a_cache,
        "attn_cache": attn_cache,
        "feat_cache": feat_cache,
        "inter_cache": inter_cache,
        "mask_q": mask_q,
        "mask_a": mask_a,
        "probs": probs,
    }
    return s, cache


def backward(cache, d_logits, state, config):
    """Accumulate gradients for one example given d loss / d logits."""
    d_cq_used, d_ca_used, d_cext = interaction.interaction_backward(
        d_logits, cache["inter_cache"], state.tensors, state.clf
    )
    normalize_features_backward(d_cext, cache["feat_cache"], state.feat)

    d_cq = d_cq_used if cache["mask_q"] is None else d_cq_used * cache["mask_q"]
    d_ca = d_ca_used if cache["mask_a"] is None else d_ca_used * cache["mask_a"]

    d_ha, d_hq_attn, d_cq_attn = attn_mod.attention_backward(
        d_ca, cache["attn_cache"], state.attn
    )
    if d_cq_attn is not None:
        d_cq = d_cq + d_cq_attn

    d_hq = encoder.pool_backward(d_cq, cache["h_q"], config.pooling)
    if d_hq_attn is not None:
        d_hq = d_hq + d_hq_attn

    d_vq = encoder.bilstm_backward(d_hq, cache["q_cache"], state.fwd, state.bwd)
    d_va = encoder.bilstm_backward(d_ha, cache["a_cache"], state.a_fwd, state.a_bwd)

    if state.emb_param is not None:
        for t, idx in enumerate(cache["q_idx"]):
            if idx is not None:
                state.emb_param.grad[idx] += d_vq[t]
        for t, idx in enumerate(cache["a_idx"]):
            if idx is not None:
                state.emb_param.grad[idx] += d_va[t]


def example_loss(s, y):
    """Cross-entropy of the relevant-class probability, clamped inside logs."""
    s_c = min(max(s, SCORE_CLAMP), 1.0 - SCORE_CLAMP)
    return -(y * np.log(s_c) + (1.0 - y) * np.log(1.0 - s_c))


def batch_loss(batch, state, config, rng=None):
    """Mean cross-entropy plus separate L2 terms; fills every param's grad.

    ``batch`` is a list of (example, feature_values).  Grads are zeroed on
    entry and hold the full objective gradient on return.  Returns
    (J, penalty_terms) where penalty_terms maps parameter name to its
    individually computed lambda * ||theta||^2 contribution.
    """
    if not batch:
        raise ValueError("batch_loss: empty batch")
    params = state.param_list()
    zero_grads(params)
    n = len(batch)
    data_term = 0.0
    train_mode = rng is not None
    for example, fv in batch:
        s, cache = forward(example, fv, state, config, train_mode=train_mode, rng=rng)
        y = float(example.label)
        loss = example_loss(s, y)
        if not np.isfinite(loss):
            raise TrainingDiverged(
                f"non-finite loss on example {example.qid}/{example.aid}"
            )
        data_term += loss
        d_logits = (cache["probs"] - np.array([1.0 - y, y])) / n
        backward(cache, d_logits, state, config)
    data_term /= n

    penalty_terms = {}
    lam = config.l2_lambda
    for p in state.regularized_params():
        penalty_terms[p.name] = lam * float(np.sum(p.value * p.value))
        p.grad += 2.0 * lam * p.value
    total = data_term + sum(penalty_terms.values())
    if not np.isfinite(total):
        raise TrainingDiverged("non-finite objective (regularized parameters blew up)")
    return total, penalty_terms


def _dev_metrics(dev_groups, features, state, config):
    from .evalkit import map_score, mrr, score_groups

    ranked = score_groups(dev_groups, features, state, config)
    return map_score(ranked), mrr(ranked)


def train(
    train_groups,
    dev_groups,
    features,
    store,
    config,
    manifest_hash="",
    early_stopping=True,
    log_fn=None,
):
    """Minibatched Adam over the training groups.

    ``features`` maps (qid, aid) to the raw feature vector.  After each
    epoch the dev split is scored; the best-dev-MAP state is kept and
    training stops after ``patience`` epochs without improvement (or at
    ``max_epochs``).  With ``early_stopping`` false (or no dev split) the
    loop simply runs ``max_epochs`` epochs and keeps the final state.
    Two runs with identical seed, config and data produce identical
    parameters and identical report keys.
    """
    state = init_model_state(config, store, manifest_hash)
    adam_states = {name: adam_init(p, config.learning_rate) for name, p in state.params.items()}
    rng = make_rng(config.seed + 1)

    examples = [
        (ex, features[(ex.qid, ex.aid)]) for g in train_groups for ex in g.examples
    ]
    if not examples:
        raise ValueError("train: no training examples")

    use_dev = early_stopping and dev_groups is not None
    best_values = state.copy_values()
    best_map = -np.inf
    since_best = 0
    reports = []

    for epoch in range(1, config.max_epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(len(examples))
        total = 0.0
        for lo in range(0, len(examples), config.batch_size):
            batch = [examples[i] for i in order[lo : lo + config.batch_size]]
            try:
                loss, _ = batch_loss(batch, state, config, rng=rng)
            except TrainingDiverged as e:
                e.state = state
                e.reports = reports
                raise
            total += loss * len(batch)
            for name, p in state.params.items():
                adam_step(p, adam_states[name])
        train_loss = total / len(examples)

        if use_dev:
            dev_map, dev_mrr = _dev_metrics(dev_groups, features, state, config)
        else:
            dev_map = dev_mrr = float("nan")
        report = EpochReport(
            epoch=epoch,
            train_loss=float(train_loss),
            dev_map=float(dev_map),
            dev_mrr=float(dev_mrr),
            wall_time=time.perf_counter() - start,
        )
        reports.append(report)
        if log_fn:
            log_fn(report)

        if use_dev:
            if dev_map > best_map:
                best_map = dev_map
                best_values = state.copy_values()
                since_best = 0
            else:
                since_best += 1
            if since_best >= config.patience:
                break
        elif config.patience == 0:
            break

    if use_dev:
        state.load_values(best_values)
    return state, reports


# ---------------------------------------------------------------------------
# full-model finite-difference verification


CHECK_BLOCK_ALIASES = {
    "attention": "attn",
    "features": "feat",
    "classifier": "clf",
    "tensors": "tensor",
    "embeddings": "emb",
}


def block_of(param_name):
    return param_name.split(".", 1)[0]


def build_check_instance(config, seed=1234, n_tokens=12):
    """A tiny deterministic (store, batch) pair for gradient verification.

    Two examples with opposite labels and question/answer lengths straddling
    each other (so both token-attention alignment branches run).  Feature
    vectors are moderate synthetic draws; raw extractor outputs can saturate
    the normalization layer and drown small true gradients in
    finite-difference cancellation noise.
    """
    from .corpus import QAExample
    from .embeddings import EmbeddingStore

    rng = make_rng(seed)
    vocab = {f"tok{i}": i for i in range(n_tokens)}
    matrix = rng.normal(scale=0.6, size=(n_tokens, config.embedding_dim))
    store = EmbeddingStore(vocab, matrix, oov_policy="zeros")
    words = list(vocab)

    def sentence(length):
        return [words[i] for i in rng.integers(0, n_tokens, size=length)]

    examples = [
        QAExample("gc-q0", sentence(3), sentence(6), 1.0, "gc-a0"),
        QAExample("gc-q1", sentence(6), sentence(2), 0.0, "gc-a1"),
    ]
    batch = [(ex, rng.uniform(-1.0, 1.0, size=config.num_features)) for ex in examples]
    return store, batch


def full_model_grad_check(
    attention_modes=("phrase", "token"),
    pooling_modes=("max", "average"),
    k_values=(1,),
    eps=1e-4,
    corrupt=None,
    tolerance=1e-4,
    **config_overrides,
):
    """Check every parameter block of the assembled model per configuration.

    Returns a list of dicts (one per combination) with per-parameter max
    relative errors against central differences.  ``corrupt`` names a block
    whose analytic gradient is deliberately scaled by 1.1, as a self-test of
    the harness.  Attention parameters are scaled up from their init so
    their true gradients sit well above difference noise.
    """
    base = dict(
        embedding_dim=8,
        hidden_size=5,
        hidden_units=6,
        num_features=51,
        dropout=0.0,
        l2_lambda=1e-4,
        seed=7,
    )
    base.update(config_overrides)
    corrupt_block = CHECK_BLOCK_ALIASES.get(corrupt, corrupt)
    results = []
    for mode in attention_modes:
        for pooling in pooling_modes:
            for k in k_values:
                config = ModelConfig(attention=mode, pooling=pooling, k=int(k), **base)
                store, batch = build_check_instance(config)
                state = init_model_state(config, store)
                for p in state.attn.params():
                    p.value *= 3.0
                corrupt_param = None
                if corrupt_block is not None:
                    matching = [
                        p for name, p in state.params.items()
                        if block_of(name) == corrupt_block
                    ]
                    if not matching:
                        raise ValueError(f"no parameter block named {corrupt!r}")
                    corrupt_param = matching[0]

                def loss():
                    j, _ = batch_loss(batch, state, config)
                    if corrupt_param is not None:
                        corrupt_param.grad *= 1.1
                    return j

                from .numkit import grad_check

                errors = grad_check(loss, state.param_list(), eps=eps)
                failed = sorted(
                    {block_of(n) for n, e in errors.items() if e >= tolerance}
                )
                results.append(
                    {
                        "attention": mode,
                        "pooling": pooling,
                        "k": int(k),
                        "tensor_slices": 3 * int(k),
                        "errors": errors,
                        "max_error": max(errors.values()),
                        "failed_blocks": failed,
                        "passed": not failed,
                    }
                )
    return results


# ---------------------------------------------------------------------------
# model file format: magic, version, json header, named float64 blocks
# (little-endian throughout)


def save_model(state, path):
    header = {
        "format": MODEL_FORMAT_VERSION,
        "config": asdict(state.config),
        "manifest_hash": state.manifest_hash,
        "embedding_fingerprint": state.embedding_fingerprint,
        "params": [
            {"name": name, "shape": list(p.value.shape)}
            for name, p in state.params.items()
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for p in state.params.values():
            fh.write(p.value.astype("<f8").tobytes())


def load_model(path, store, expect_config=None, expect_manifest_hash=None):
    """Rebuild a ModelState from disk.

    The provided store must match the recorded embedding fingerprint, and
    ``expect_config`` / ``expect_manifest_hash``, when given, must match the
    header exactly.
    """
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MODEL_MAGIC:
            raise ModelFileError(f"{path}: not a model file")
        head = fh.read(8)
        if len(head) != 8:
            raise ModelFileError(f"{path}: truncated header")
        version, blob_len = struct.unpack("<II", head)
        if version != MODEL_FORMAT_VERSION:
            raise ModelFileError(f"{path}: unsupported format version {version}")
        blob = fh.read(blob_len)
        if len(blob) != blob_len:
            raise ModelFileError(f"{path}: truncated header")
        header = json.loads(blob.decode("utf-8"))
        config = ModelConfig(**header["config"])
        if expect_config is not None and asdict(expect_config) != asdict(config):
            diffs = [
                key
                for key in asdict(config)
                if asdict(config)[key] != asdict(expect_config)[key]
            ]
            raise ConfigMismatchError(
                f"{path}: saved config differs from requested config in {diffs}"
            )
        if expect_manifest_hash is not None and header["manifest_hash"] != expect_manifest_hash:
            raise ProvenanceError(
                f"{path}: model built from manifest {header['manifest_hash'][:12]}, "
                f"expected {expect_manifest_hash[:12]}"
            )
        state = ModelState(config, store, header["manifest_hash"])
        if state.embedding_fingerprint != header["embedding_fingerprint"]:
            raise ProvenanceError(
                f"{path}: embedding store fingerprint does not match the model"
            )
        for entry in header["params"]:
            name, shape = entry["name"], tuple(entry["shape"])
            if name not in state.params:
                raise ModelFileError(f"{path}: unexpected parameter {name!r}")
            if state.params[name].value.shape != shape:
                raise ModelFileError(
                    f"{path}: parameter {name!r} shape {shape} != expected "
                    f"{state.params[name].value.shape}"
                )
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise ModelFileError(f"{path}: truncated data for {name!r}")
            state.params[name].value[...] = np.frombuffer(raw, dtype="<f8").reshape(shape)
    return state
