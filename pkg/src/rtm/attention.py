"""Attention over answer timesteps, at phrase or token granularity.

Phrase-level scoring mixes each answer state with the pooled question
summary (replicated across timesteps); token-level scoring mixes it with
the question state at the same timestep, zero-padded where the question is
shorter.  Scores become weights through a tanh bottleneck and a softmax
over answer positions (a raw-exp variant is kept for ablation), and the
weighted answer states are pooled into the answer context vector.
"""

from dataclasses import dataclass

import numpy as np

from . import encoder
from .numkit import Param, ShapeError, softmax, uniform_init

ATTENTION_MODES = ("phrase", "token")
TOKEN_ALIGNMENTS = ("position", "average")


@dataclass
class AttentionParams:
    """Mixing matrices for answer/question states and the scoring vector."""

    W_aw: Param
    W_qw: Param
    w_ws: Param

    @classmethod
    def init(cls, rng, dim, prefix="attn"):
        return cls(
            W_aw=Param(f"{prefix}.W_aw", uniform_init(rng, (dim, dim), dim, dim)),
            W_qw=Param(f"{prefix}.W_qw", uniform_init(rng, (dim, dim), dim, dim)),
            w_ws=Param(f"{prefix}.w_ws", uniform_init(rng, (dim,), dim, 1)),
        )

    @property
    def dim(self):
        return self.W_aw.value.shape[0]

    def params(self):
        return [self.W_aw, self.W_qw, self.w_ws]


def _check_states(states, dim, what):
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[1] != dim:
        raise ShapeError(f"{what}: expected [T x {dim}], got {states.shape}")
    return states


def phrase_scores(answer_states, c_q, p):
    """Row t = W_aw a(t) + W_qw c_q, the summary replicated at every t."""
    answer_states = _check_states(answer_states, p.dim, "phrase_scores")
    c_q = np.asarray(c_q, dtype=np.float64)
    if c_q.shape != (p.dim,):
        raise ShapeError(f"phrase_scores: c_q shape {c_q.shape} != ({p.dim},)")
    return answer_states @ p.W_aw.value.T + (p.W_qw.value @ c_q)[None, :]


def aligned_question_states(question_states, t_a, alignment="position"):
    """Question rows seen by each answer timestep.

    Position alignment pairs timestep t with question state t and zero-pads
    past the question's end; average alignment gives every answer timestep
    the mean question state.
    """
    t_q, d = question_states.shape
    if alignment == "position":
        aligned = np.zeros((t_a, d))
        n = min(t_a, t_q)
        aligned[:n] = question_states[:n]
        return aligned
    if alignment == "average":
        return np.repeat(question_states.mean(axis=0, keepdims=True), t_a, axis=0)
    raise ValueError(f"unknown token alignment {alignment!r}")


def token_scores(answer_states, question_states, p, alignment="position"):
    """Row t = W_aw a(t) + W_qw q(t), per-timestep question states."""
    answer_states = _check_states(answer_states, p.dim, "token_scores")
    question_states = _check_states(question_states, p.dim, "token_scores")
    aligned = aligned_question_states(question_states, answer_states.shape[0], alignment)
    return answer_states @ p.W_aw.value.T + aligned @ p.W_qw.value.T


def attention_weights(score_rows, p, normalize=True):
    """Per-timestep weights from score rows via w_ws . tanh(row)."""
    score_rows = _check_states(score_rows, p.dim, "attention_weights")
    logits = np.tanh(score_rows) @ p.w_ws.value
    if normalize:
        return softmax(logits)
    return np.exp(logits)


def attended_pool(answer_states, weights, mode):
    """Pool the weighted answer states; weights must sum to 1."""
    answer_states = np.asarray(answer_states, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (answer_states.shape[0],):
        raise ShapeError(
            f"attended_pool: weights {weights.shape} vs states {answer_states.shape}"
        )
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError(
            f"attended_pool: weights sum to {weights.sum()!r}, expected 1"
        )
    return encoder.pool(answer_states * weights[:, None], mode)


def attention_forward(
    answer_states,
    question_states,
    c_q,
    p,
    mode="phrase",
    pooling="max",
    normalize=True,
    alignment="position",
):
    """Full attention pass; returns (c_a, cache) for the backward pass."""
    if mode == "phrase":
        rows = phrase_scores(answer_states, c_q, p)
        aligned = None
    elif mode == "token":
        rows = token_scores(answer_states, question_states, p, alignment)
        aligned = aligned_question_states(
            question_states, answer_states.shape[0], alignment
        )
    else:
        raise ValueError(f"unknown attention mode {mode!r}")
    u = np.tanh(rows)
    logits = u @ p.w_ws.value
    if normalize:
        weights = softmax(logits)
    else:
        weights = np.exp(logits)
    weighted = answer_states * weights[:, None]
    c_a = encoder.pool(weighted, pooling)
    cache = (
        answer_states,
        question_states,
        c_q,
        mode,
        pooling,
        normalize,
        alignment,
        aligned,
        u,
        weights,
        weighted,
    )
    return c_a, cache


def attention_backward(d_ca, cache, p):
    """Backprop through pooling, weighting, scoring.

    Accumulates into p's grads; returns (d_answer_states, d_question_states,
    d_cq).  d_question_states is None in phrase mode, d_cq is None in token
    mode.
    """
    (
        answer_states,
        question_states,
        c_q,
        mode,
        pooling,
        normalize,
        alignment,
        aligned,
        u,
        weights,
        weighted,
    ) = cache
    t_a = answer_states.shape[0]

    d_weighted = encoder.pool_backward(d_ca, weighted, pooling)
    d_weights = (d_weighted * answer_states).sum(axis=1)
    d_answer = d_weighted * weights[:, None]

    if normalize:
        # softmax jacobian: dl = w * (dw - sum(w * dw))
        inner = float(weights @ d_weights)
        d_logits = weights * (d_weights - inner)
    else:
        d_logits = d_weights * weights  # d exp(l) = exp(l) dl

    p.w_ws.grad += u.T @ d_logits
    d_rows = d_logits[:, None] * (1.0 - u * u) * p.w_ws.value[None, :]

    p.W_aw.grad += d_rows.T @ answer_states
    d_answer += d_rows @ p.W_aw.value

    if mode == "phrase":
        d_rows_sum = d_rows.sum(axis=0)
        p.W_qw.grad += np.outer(d_rows_sum, c_q)
        d_cq = p.W_qw.value.T @ d_rows_sum
        return d_answer, None, d_cq

    p.W_qw.grad += d_rows.T @ aligned
    d_aligned = d_rows @ p.W_qw.value
    t_q = question_states.shape[0]
    d_question = np.zeros_like(question_states)
    if alignment == "position":
        n = min(t_a, t_q)
        d_question[:n] = d_aligned[:n]
    else:  # average alignment spreads each row over all question timesteps
        d_question += d_aligned.sum(axis=0)[None, :] / t_q
    return d_answer, d_question, None
