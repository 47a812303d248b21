"""3-way tensor similarity, the merge layer, and the output classifier.

Three stacks of bilinear slices relate question-answer, question-feature
and answer-feature context vectors; each stack yields a k-vector of
similarities through a nonlinearity.  The merge vector sandwiches those
similarities between the two context vectors and feeds a hidden layer plus
a 2-class softmax whose relevant-class probability is the ranking score.
"""

from dataclasses import dataclass

import numpy as np

from .numkit import (
    Param,
    ShapeError,
    activation,
    activation_backward,
    bilinear,
    softmax,
    uniform_init,
)

RELATIONS = ("M1", "M2", "M3")  # question-answer, question-feature, answer-feature


@dataclass
class TensorParams:
    """One (k, d, d) slice stack per relation."""

    M1: Param
    M2: Param
    M3: Param

    @classmethod
    def init(cls, rng, dim, k, eps_identity=0.01, prefix="tensor"):
        """Fan-based uniform slices, plus a small identity so that initial
        similarities correlate with plain vector agreement."""
        kw = {}
        for name in RELATIONS:
            slices = np.stack(
                [uniform_init(rng, (dim, dim), dim, dim) for _ in range(k)]
            )
            slices += eps_identity * np.eye(dim)[None, :, :]
            kw[name] = Param(f"{prefix}.{name}", slices)
        return cls(**kw)

    @property
    def dim(self):
        return self.M1.value.shape[1]

    @property
    def k(self):
        return self.M1.value.shape[0]

    def params(self):
        return [self.M1, self.M2, self.M3]


@dataclass
class ClassifierParams:
    """Hidden layer over the merge vector and the 2-class output layer."""

    W_hidden: Param
    b_hidden: Param
    W_out: Param
    b_out: Param
    hidden_activation: str = "tanh"

    @classmethod
    def init(cls, rng, input_width, hidden_units, hidden_activation="tanh", prefix="clf"):
        return cls(
            W_hidden=Param(
                f"{prefix}.W_hidden",
                uniform_init(rng, (input_width, hidden_units), input_width, hidden_units),
            ),
            b_hidden=Param(f"{prefix}.b_hidden", np.zeros(hidden_units)),
            W_out=Param(f"{prefix}.W_out", uniform_init(rng, (hidden_units, 2), hidden_units, 2)),
            b_out=Param(f"{prefix}.b_out", np.zeros(2)),
            hidden_activation=hidden_activation,
        )

    @property
    def input_width(self):
        return self.W_hidden.value.shape[0]

    def params(self):
        return [self.W_hidden, self.b_hidden, self.W_out, self.b_out]


def tsim(c_q, c_a, c_ext, tp, kind="tanh"):
    """Three activated k-vectors of bilinear similarities."""
    c_q = np.asarray(c_q, dtype=np.float64)
    c_a = np.asarray(c_a, dtype=np.float64)
    c_ext = np.asarray(c_ext, dtype=np.float64)
    d = tp.dim
    for name, vec in (("c_q", c_q), ("c_a", c_a), ("c_ext", c_ext)):
        if vec.shape != (d,):
            raise ShapeError(f"tsim: {name} shape {vec.shape} != ({d},)")
    return (
        activation(bilinear(c_q, tp.M1.value, c_a), kind),
        activation(bilinear(c_q, tp.M2.value, c_ext), kind),
        activation(bilinear(c_a, tp.M3.value, c_ext), kind),
    )


def merge(c_q, tsims, c_a):
    """[c_q ; Tsim_qa ; Tsim_qext ; Tsim_aext ; c_a], width 2d + 3k."""
    t1, t2, t3 = tsims
    return np.concatenate([c_q, t1, t2, t3, c_a])


def classify(h_merge, cp, dropout_mask=None):
    """Relevant-class probability from the merge vector."""
    s, _, _ = _classify_cached(h_merge, cp, dropout_mask)
    return s


def _classify_cached(h_merge, cp, dropout_mask=None):
    h_merge = np.asarray(h_merge, dtype=np.float64)
    if h_merge.shape != (cp.input_width,):
        raise ShapeError(
            f"classify: merge vector {h_merge.shape} != ({cp.input_width},)"
        )
    pre_hidden = cp.W_hidden.value.T @ h_merge + cp.b_hidden.value
    hidden = activation(pre_hidden, cp.hidden_activation)
    dropped = hidden if dropout_mask is None else hidden * dropout_mask
    logits = cp.W_out.value.T @ dropped + cp.b_out.value
    probs = softmax(logits)
    s = float(probs[1])
    cache = (h_merge, pre_hidden, hidden, dropped, dropout_mask, logits, probs)
    return s, probs, cache


def interaction_forward(c_q, c_a, c_ext, tp, cp, kind="tanh", dropout_mask=None):
    """tsim + merge + classify with everything needed for the backward pass."""
    pre = (
        bilinear(c_q, tp.M1.value, c_a),
        bilinear(c_q, tp.M2.value, c_ext),
        bilinear(c_a, tp.M3.value, c_ext),
    )
    tsims = tuple(activation(p, kind) for p in pre)
    h_merge = merge(c_q, tsims, c_a)
    s, probs, clf_cache = _classify_cached(h_merge, cp, dropout_mask)
    cache = (c_q, c_a, c_ext, pre, kind, clf_cache)
    return s, probs, cache


def interaction_backward(d_logits, cache, tp, cp):
    """Backprop from output logits; returns (d_cq, d_ca, d_cext)."""
    c_q, c_a, c_ext, pre, kind, clf_cache = cache
    h_merge, pre_hidden, hidden, dropped, mask, logits, probs = clf_cache

    cp.W_out.grad += np.outer(dropped, d_logits)
    cp.b_out.grad += d_logits
    d_dropped = cp.W_out.value @ d_logits
    d_hidden = d_dropped if mask is None else d_dropped * mask
    d_pre_hidden = activation_backward(pre_hidden, d_hidden, cp.hidden_activation)
    cp.W_hidden.grad += np.outer(h_merge, d_pre_hidden)
    cp.b_hidden.grad += d_pre_hidden
    d_merge = cp.W_hidden.value @ d_pre_hidden

    d = c_q.shape[0]
    k = tp.k
    d_cq = d_merge[:d].copy()
    d_t1 = d_merge[d : d + k]
    d_t2 = d_merge[d + k : d + 2 * k]
    d_t3 = d_merge[d + 2 * k : d + 3 * k]
    d_ca = d_merge[d + 3 * k :].copy()
    d_cext = np.zeros_like(c_ext)

    for d_t, pre_r, M, left, right, d_left, d_right in (
        (d_t1, pre[0], tp.M1, c_q, c_a, "q", "a"),
        (d_t2, pre[1], tp.M2, c_q, c_ext, "q", "e"),
        (d_t3, pre[2], tp.M3, c_a, c_ext, "a", "e"),
    ):
        d_pre = activation_backward(pre_r, d_t, kind)
        M.grad += d_pre[:, None, None] * np.outer(left, right)[None, :, :]
        dl = np.einsum("k,kij,j->i", d_pre, M.value, right)
        dr = np.einsum("k,kij,i->j", d_pre, M.value, left)
        if d_left == "q":
            d_cq += dl
        else:
            d_ca += dl
        if d_right == "a":
            d_ca += dr
        else:
            d_cext += dr

    return d_cq, d_ca, d_cext
