"""Bidirectional LSTM sequence encoding and pooling.

The cell is the standard formulation (input/forget/output gates plus a tanh
candidate, no peepholes).  Sequences are processed one example at a time
with zero initial states; the bidirectional encoding concatenates forward
and backward hidden states per timestep, so the context dimension is twice
the hidden size.  Each forward function has a matching backward that
accumulates parameter gradients in place.
"""

from dataclasses import dataclass

import numpy as np

from .numkit import Param, ShapeError, uniform_init

POOLING_MODES = ("max", "average")

GATES = ("i", "f", "o", "g")


@dataclass
class LSTMParams:
    """Input weights W_*, recurrent weights U_*, and biases b_* per gate."""

    W_i: Param
    W_f: Param
    W_o: Param
    W_g: Param
    U_i: Param
    U_f: Param
    U_o: Param
    U_g: Param
    b_i: Param
    b_f: Param
    b_o: Param
    b_g: Param

    @classmethod
    def init(cls, rng, input_dim, hidden_dim, prefix):
        """Uniform fan-based init; forget-gate bias starts at 1.0."""
        kw = {}
        for gate in GATES:
            kw[f"W_{gate}"] = Param(
                f"{prefix}.W_{gate}",
                uniform_init(rng, (hidden_dim, input_dim), input_dim, hidden_dim),
            )
        for gate in GATES:
            kw[f"U_{gate}"] = Param(
                f"{prefix}.U_{gate}",
                uniform_init(rng, (hidden_dim, hidden_dim), hidden_dim, hidden_dim),
            )
        for gate in GATES:
            bias = np.zeros(hidden_dim)
            if gate == "f":
                bias += 1.0
            kw[f"b_{gate}"] = Param(f"{prefix}.b_{gate}", bias)
        return cls(**kw)

    @property
    def input_dim(self):
        return self.W_i.value.shape[1]

    @property
    def hidden_dim(self):
        return self.W_i.value.shape[0]

    def params(self):
        return [getattr(self, f"{kind}_{g}") for kind in ("W", "U", "b") for g in GATES]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_step(x, h_prev, c_prev, p):
    """One cell update; returns (h, c)."""
    h, c, _ = _lstm_step_cached(x, h_prev, c_prev, p)
    return h, c


def _lstm_step_cached(x, h_prev, c_prev, p):
    if x.shape != (p.input_dim,) or h_prev.shape != (p.hidden_dim,):
        raise ShapeError(
            f"lstm_step: x {x.shape}, h_prev {h_prev.shape} incompatible with "
            f"cell ({p.input_dim}, {p.hidden_dim})"
        )
    i = _sigmoid(p.W_i.value @ x + p.U_i.value @ h_prev + p.b_i.value)
    f = _sigmoid(p.W_f.value @ x + p.U_f.value @ h_prev + p.b_f.value)
    o = _sigmoid(p.W_o.value @ x + p.U_o.value @ h_prev + p.b_o.value)
    g = np.tanh(p.W_g.value @ x + p.U_g.value @ h_prev + p.b_g.value)
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (x, h_prev, c_prev, i, f, o, g, c, tc)


def lstm_forward(seq, p):
    """Scan a [T x input_dim] sequence; returns ([T x hidden] states, cache)."""
    T = seq.shape[0]
    h = np.zeros(p.hidden_dim)
    c = np.zeros(p.hidden_dim)
    states = np.zeros((T, p.hidden_dim))
    caches = []
    for t in range(T):
        h, c, cache = _lstm_step_cached(seq[t], h, c, p)
        states[t] = h
        caches.append(cache)
    return states, caches


def lstm_backward(d_states, caches, p):
    """BPTT over one direction; accumulates into p's grads, returns d_seq."""
    T = len(caches)
    d_seq = np.zeros((T, p.input_dim))
    dh_next = np.zeros(p.hidden_dim)
    dc_next = np.zeros(p.hidden_dim)
    for t in range(T - 1, -1, -1):
        x, h_prev, c_prev, i, f, o, g, c, tc = caches[t]
        dh = d_states[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        d_pre = {
            "o": dh * tc * o * (1.0 - o),
            "f": dc * c_prev * f * (1.0 - f),
            "i": dc * g * i * (1.0 - i),
            "g": dc * i * (1.0 - g * g),
        }
        dh_next = np.zeros(p.hidden_dim)
        dx = np.zeros(p.input_dim)
        for gate in GATES:
            dp = d_pre[gate]
            getattr(p, f"W_{gate}").grad += np.outer(dp, x)
            getattr(p, f"U_{gate}").grad += np.outer(dp, h_prev)
            getattr(p, f"b_{gate}").grad += dp
            dh_next += getattr(p, f"U_{gate}").value.T @ dp
            dx += getattr(p, f"W_{gate}").value.T @ dp
        dc_next = dc * f
        d_seq[t] = dx
    return d_seq


def bilstm(seq, fwd, bwd):
    """Forward and backward scans concatenated per timestep: [T x 2h]."""
    states, _ = bilstm_forward(seq, fwd, bwd)
    return states


def bilstm_forward(seq, fwd, bwd):
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ShapeError(f"bilstm: expected [T x d_e] with T >= 1, got {seq.shape}")
    if fwd.hidden_dim != bwd.hidden_dim:
        raise ShapeError("bilstm: direction hidden sizes differ")
    f_states, f_cache = lstm_forward(seq, fwd)
    b_states_rev, b_cache = lstm_forward(seq[::-1], bwd)
    b_states = b_states_rev[::-1]
    states = np.concatenate([f_states, b_states], axis=1)
    return states, (f_cache, b_cache)


def bilstm_backward(d_states, cache, fwd, bwd):
    """Accumulate grads for both directions; returns d_seq [T x d_e]."""
    h = fwd.hidden_dim
    f_cache, b_cache = cache
    d_fwd = d_states[:, :h]
    d_bwd = d_states[:, h:]
    d_seq = lstm_backward(d_fwd, f_cache, fwd)
    d_seq_rev = lstm_backward(d_bwd[::-1], b_cache, bwd)
    return d_seq + d_seq_rev[::-1]


def pool(states, mode):
    """Columnwise max or mean over timesteps."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[0] < 1:
        raise ShapeError(f"pool: expected [T x d] with T >= 1, got {states.shape}")
    if mode == "max":
        return states.max(axis=0)
    if mode == "average":
        return states.mean(axis=0)
    raise ValueError(f"unknown pooling mode {mode!r}")


def pool_backward(d_out, states, mode):
    """Route the pooled gradient back to timesteps."""
    T, d = states.shape
    d_states = np.zeros_like(states)
    if mode == "max":
        winners = states.argmax(axis=0)  # first max wins on ties
        d_states[winners, np.arange(d)] = d_out
    elif mode == "average":
        d_states[...] = d_out / T
    else:
        raise ValueError(f"unknown pooling mode {mode!r}")
    return d_states
