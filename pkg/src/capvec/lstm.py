"""LSTM sentence encoder with explicit backprop through time.

Row-vector convention throughout: a batch state is a B x K matrix and every
weight multiplies on the right (X . W). The cell uses full K x K peephole
matrices on the input and forget gates (previous cell state) and on the
output gate (current cell state):

    I_t = sigma(X_t.W_xi + M_{t-1}.W_hi + C_{t-1}.W_ci + b_i)
    F_t = sigma(X_t.W_xf + M_{t-1}.W_hf + C_{t-1}.W_cf + b_f)
    C_t = F_t * C_{t-1} + I_t * tanh(X_t.W_xc + M_{t-1}.W_hc + b_c)
    O_t = sigma(X_t.W_xo + M_{t-1}.W_ho + C_t.W_co + b_o)
    M_t = O_t * tanh(C_t)

A sentence is encoded as the hidden state after its final real token.
Variable-length batches are right-padded under a mask; a masked step copies
both states forward unchanged, so the last step's hidden rows are exactly
the per-sentence encodings and batched encoding matches the per-sentence
loop to machine precision.
"""

from dataclasses import dataclass

import numpy as np

from .numcore import ParamStore, init_uniform, sigmoid, sigmoid_grad, tanh_grad

GATE_MATRIX_NAMES = (
    "w_xi", "w_hi", "w_ci",
    "w_xf", "w_hf", "w_cf",
    "w_xc", "w_hc",
    "w_xo", "w_ho", "w_co",
)
GATE_BIAS_NAMES = ("b_i", "b_f", "b_c", "b_o")


class LSTMParams:
    """All encoder weights, registered in a ParamStore under stable names."""

    def __init__(self, dim, rng=None, store=None, init_scale=0.08):
        if dim < 1:
            raise ValueError("hidden dimension must be positive")
        self.dim = int(dim)
        self.store = store if store is not None else ParamStore()
        for name in GATE_MATRIX_NAMES:
            arr = init_uniform(rng, (dim, dim), init_scale) if rng is not None else np.zeros((dim, dim))
            setattr(self, name, self.store.add(name, arr))
        for name in GATE_BIAS_NAMES:
            arr = init_uniform(rng, (dim,), init_scale) if rng is not None else np.zeros(dim)
            setattr(self, name, self.store.add(name, arr))

    def load_blocks(self, blocks):
        for name in GATE_MATRIX_NAMES:
            getattr(self, name)[...] = blocks[name].reshape(self.dim, self.dim)
        for name in GATE_BIAS_NAMES:
            getattr(self, name)[...] = blocks[name].reshape(self.dim)


@dataclass
class LSTMState:
    """Cell and hidden state for a batch, both B x K."""

    c: np.ndarray
    m: np.ndarray

    @classmethod
    def zeros(cls, batch, dim):
        return cls(np.zeros((batch, dim)), np.zeros((batch, dim)))


def _check_step_shapes(x_t, prev, params):
    k = params.dim
    if x_t.ndim != 2 or x_t.shape[1] != k:
        raise ValueError(f"input X_t has shape {x_t.shape}, expected (B, {k})")
    b = x_t.shape[0]
    for label, arr in (("prev.c", prev.c), ("prev.m", prev.m)):
        if arr.shape != (b, k):
            raise ValueError(f"{label} has shape {arr.shape}, expected ({b}, {k})")
    for name in GATE_MATRIX_NAMES:
        if getattr(params, name).shape != (k, k):
            raise ValueError(f"parameter {name} has shape {getattr(params, name).shape}, expected ({k}, {k})")


def lstm_step(x_t, prev, params):
    """One recurrence step; returns the next LSTMState."""
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    _check_step_shapes(x_t, prev, params)
    new_state, _ = _step_forward(x_t, prev.c, prev.m, params)
    return new_state


def _step_forward(x_t, c_prev, m_prev, p):
    i_gate = sigmoid(x_t @ p.w_xi + m_prev @ p.w_hi + c_prev @ p.w_ci + p.b_i)
    f_gate = sigmoid(x_t @ p.w_xf + m_prev @ p.w_hf + c_prev @ p.w_cf + p.b_f)
    g = np.tanh(x_t @ p.w_xc + m_prev @ p.w_hc + p.b_c)
    c_new = f_gate * c_prev + i_gate * g
    o_gate = sigmoid(x_t @ p.w_xo + m_prev @ p.w_ho + c_new @ p.w_co + p.b_o)
    tanh_c = np.tanh(c_new)
    m_new = o_gate * tanh_c
    cache = (x_t, c_prev, m_prev, i_gate, f_gate, g, c_new, o_gate, tanh_c)
    return LSTMState(c_new, m_new), cache


def lstm_forward(x_seq, mask, params):
    """Run the recurrence over a padded batch.

    x_seq: T x B x K inputs, mask: T x B with 1.0 on real tokens. Masked
    steps copy state forward unchanged. Returns (final hidden B x K, cache
    for lstm_backward).
    """
    t_steps, batch, dim = x_seq.shape
    if dim != params.dim:
        raise ValueError(f"input dim {dim} does not match encoder dim {params.dim}")
    c = np.zeros((batch, dim))
    m = np.zeros((batch, dim))
    steps = []
    for t in range(t_steps):
        m_t = mask[t][:, None]
        state, cache = _step_forward(x_seq[t], c, m, params)
        c_blend = m_t * state.c + (1.0 - m_t) * c
        m_blend = m_t * state.m + (1.0 - m_t) * m
        steps.append((cache, m_t))
        c, m = c_blend, m_blend
    return m, (steps, x_seq.shape)


def lstm_backward(cache, d_final, params):
    """Backprop a gradient on the final hidden state through all steps.

    Accumulates weight gradients into the ParamStore and returns the
    gradient with respect to the input sequence (T x B x K), which callers
    training the word table may use or discard.
    """
    steps, (t_steps, batch, dim) = cache
    p = params
    gr = p.store.grad
    d_x = np.zeros((t_steps, batch, dim))
    d_c = np.zeros((batch, dim))
    d_m = np.asarray(d_final, dtype=np.float64).copy()

    for t in range(t_steps - 1, -1, -1):
        (x_t, c_prev, m_prev, i_gate, f_gate, g, c_new, o_gate, tanh_c), m_t = steps[t]
        # undo the mask blend: masked rows pass gradients straight through
        d_m_star = m_t * d_m
        d_c_star = m_t * d_c
        d_m_prev = (1.0 - m_t) * d_m
        d_c_prev = (1.0 - m_t) * d_c

        d_o = d_m_star * tanh_c
        d_c_star = d_c_star + d_m_star * o_gate * tanh_grad(tanh_c)
        d_ao = d_o * sigmoid_grad(o_gate)
        d_c_star = d_c_star + d_ao @ p.w_co.T

        d_i = d_c_star * g
        d_f = d_c_star * c_prev
        d_g = d_c_star * i_gate
        d_c_prev += d_c_star * f_gate

        d_ai = d_i * sigmoid_grad(i_gate)
        d_af = d_f * sigmoid_grad(f_gate)
        d_ac = d_g * tanh_grad(g)

        gr("w_xi")[...] += x_t.T @ d_ai
        gr("w_hi")[...] += m_prev.T @ d_ai
        gr("w_ci")[...] += c_prev.T @ d_ai
        gr("b_i")[...] += d_ai.sum(axis=0)
        gr("w_xf")[...] += x_t.T @ d_af
        gr("w_hf")[...] += m_prev.T @ d_af
        gr("w_cf")[...] += c_prev.T @ d_af
        gr("b_f")[...] += d_af.sum(axis=0)
        gr("w_xc")[...] += x_t.T @ d_ac
        gr("w_hc")[...] += m_prev.T @ d_ac
        gr("b_c")[...] += d_ac.sum(axis=0)
        gr("w_xo")[...] += x_t.T @ d_ao
        gr("w_ho")[...] += m_prev.T @ d_ao
        gr("w_co")[...] += c_new.T @ d_ao
        gr("b_o")[...] += d_ao.sum(axis=0)

        d_c_prev += d_ai @ p.w_ci.T + d_af @ p.w_cf.T
        d_m_prev += d_ai @ p.w_hi.T + d_af @ p.w_hf.T + d_ac @ p.w_hc.T + d_ao @ p.w_ho.T
        d_x[t] = d_ai @ p.w_xi.T + d_af @ p.w_xf.T + d_ac @ p.w_xc.T + d_ao @ p.w_xo.T

        d_c, d_m = d_c_prev, d_m_prev
    return d_x


def batch_inputs(index_seqs, vocab):
    """Right-pad index sequences into (x_seq T x B x K, mask T x B)."""
    if not index_seqs or any(len(s) == 0 for s in index_seqs):
        raise ValueError("cannot encode an empty token sequence")
    batch = len(index_seqs)
    t_steps = max(len(s) for s in index_seqs)
    dim = vocab.dim
    x_seq = np.zeros((t_steps, batch, dim))
    mask = np.zeros((t_steps, batch))
    for b, seq in enumerate(index_seqs):
        for t, idx in enumerate(seq):
            x_seq[t, b] = vocab.embeddings[idx]
            mask[t, b] = 1.0
    return x_seq, mask


def encode_batch(index_seqs, vocab, params):
    """Encode many sentences at once; returns (B x K matrix, backward cache)."""
    x_seq, mask = batch_inputs(index_seqs, vocab)
    return lstm_forward(x_seq, mask, params)


def encode_sentence(indices, vocab, params):
    """Encode one sentence (sequence of vocabulary indices) into a K-vector."""
    final, _ = encode_batch([list(indices)], vocab, params)
    return final[0]
