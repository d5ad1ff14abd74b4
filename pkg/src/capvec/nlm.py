"""Next-word models for decoding from the joint space.

Three related models, all trained by exact-softmax NLL with hand-derived
gradients:

  * LBLParams: a log-bilinear model. The context words' representation
    rows are mixed by per-position matrices into a predicted next-word
    representation; logits are its dot products with every word row plus a
    bias.
  * MNLMParams: a multiplicative model. The word representation tensor is
    factored into three matrices (factor_from_pred W_fk, factor_from_cond
    W_fd, factor_to_vocab W_fv); a conditioning vector gates the factor
    activations, so word representations become a function of the
    conditioning vector. Context words are represented by columns of the
    folded embedding matrix E = W_fk^T W_fv.
  * SCNLMParams: the multiplicative model whose conditioning vector is
    replaced by a ReLU blend of forward structure (part-of-speech) tags
    and a content vector. The tag window covers the current position plus
    `forward_size` future tags, padded with <endpos> past the sentence
    end, which lets a fixed tag template steer decoding.

Conditioning vectors are inputs here (typically sentence encodings from
the joint model, or image embeddings at decode time, since the two share a
space); the models never backpropagate into them during training.
"""

from dataclasses import dataclass

import numpy as np

from . import ingest
from .numcore import ParamStore, init_uniform, make_rng, relu, stable_softmax


@dataclass
class NLMTrainConfig:
    context_size: int = 5
    forward_size: int = 3
    epochs: int = 10
    learning_rate: float = 0.1
    decay: float = 0.995
    seed: int = 0
    conditioning: str = "text"  # or "image"
    clip_norm: float = 5.0  # global gradient-norm clip; multiplicative models spike

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


def log_unigram_bias(vocab_size, counts=None, smoothing=1.0):
    """Smoothed log-frequency bias; uniform when no counts are given."""
    c = np.full(vocab_size, smoothing, dtype=np.float64)
    if counts is not None:
        for idx, n in counts.items():
            c[idx] += n
    return np.log(c / c.sum())


def pad_context(indices, pos, size, start_index):
    """The `size` indices preceding pos, left-padded with <start>."""
    lo = max(0, pos - size)
    ctx = list(indices[lo:pos])
    return [start_index] * (size - len(ctx)) + ctx


def forward_tag_window(tag_indices, pos, forward_size, end_tag_index):
    """Tags at pos..pos+forward_size, right-padded with <endpos>."""
    win = list(tag_indices[pos : pos + forward_size + 1])
    return win + [end_tag_index] * (forward_size + 1 - len(win))


class LBLParams:
    """Log-bilinear next-word model over a fixed-size word context."""

    def __init__(self, vocab_size, dim, context_size, rng=None, bias=None, init_scale=0.08):
        if context_size < 1:
            raise ValueError("context size must be >= 1")
        self.vocab_size = int(vocab_size)
        self.dim = int(dim)
        self.context_size = int(context_size)
        self.store = ParamStore()
        init = lambda shape: init_uniform(rng, shape, init_scale) if rng is not None else np.zeros(shape)
        self.r_words = self.store.add("r_words", init((vocab_size, dim)))
        self.c_ctx = [
            self.store.add(f"c_ctx_{i}", init((dim, dim))) for i in range(1, context_size + 1)
        ]
        self.b = self.store.add("b", bias if bias is not None else np.zeros(vocab_size))


def lbl_distribution(context, params):
    """P(next word | context word indices); a length-V probability vector."""
    _check_context(context, params)
    r_hat = _lbl_predict(context, params)
    return stable_softmax(params.r_words @ r_hat + params.b)


def _check_context(context, params):
    if len(context) != params.context_size:
        raise ValueError(f"context has {len(context)} words, model expects {params.context_size}")
    for w in context:
        if not (0 <= w < params.vocab_size):
            raise ValueError(f"word index {w} out of range for V={params.vocab_size}")


def _lbl_predict(context, params):
    r_hat = np.zeros(params.dim)
    for c_mat, w in zip(params.c_ctx, context):
        r_hat += c_mat @ params.r_words[w]
    return r_hat


def _lbl_nll_grad(context, target, params):
    r_hat = _lbl_predict(context, params)
    p = stable_softmax(params.r_words @ r_hat + params.b)
    nll = -np.log(p[target])
    d_logits = p.copy()
    d_logits[target] -= 1.0
    g = params.store.grad
    g("b")[...] += d_logits
    g("r_words")[...] += np.outer(d_logits, r_hat)
    d_r_hat = params.r_words.T @ d_logits
    for i, (c_mat, w) in enumerate(zip(params.c_ctx, context), start=1):
        g(f"c_ctx_{i}")[...] += np.outer(d_r_hat, params.r_words[w])
        g("r_words")[w] += c_mat.T @ d_r_hat
    return float(nll)


class FactoredTensor:
    """Three-matrix factorization of the conditioned word-representation tensor."""

    def __init__(self, vocab_size, dim, cond_dim, factors, rng=None, bias=None, store=None,
                 init_scale=0.08):
        self.vocab_size = int(vocab_size)
        self.dim = int(dim)          # K: word representation space
        self.cond_dim = int(cond_dim)  # G: conditioning vector space
        self.factors = int(factors)
        self.store = store if store is not None else ParamStore()
        init = lambda shape: init_uniform(rng, shape, init_scale) if rng is not None else np.zeros(shape)
        self.w_fk = self.store.add("w_fk", init((factors, dim)))
        self.w_fd = self.store.add("w_fd", init((factors, cond_dim)))
        self.w_fv = self.store.add("w_fv", init((factors, vocab_size)))
        self.b = self.store.add("b", bias if bias is not None else np.zeros(vocab_size))


def fold_embeddings(factored):
    """The folded K x V word embedding matrix E = W_fk^T W_fv."""
    return factored.w_fk.T @ factored.w_fv


class MNLMParams:
    """Multiplicative model: factored tensor plus word-context matrices."""

    def __init__(self, vocab_size, dim, cond_dim, factors, context_size, rng=None, bias=None,
                 init_scale=0.08):
        if context_size < 1:
            raise ValueError("context size must be >= 1")
        self.context_size = int(context_size)
        self.factored = FactoredTensor(vocab_size, dim, cond_dim, factors, rng=rng, bias=bias,
                                       init_scale=init_scale)
        self.store = self.factored.store
        init = lambda shape: init_uniform(rng, shape, init_scale) if rng is not None else np.zeros(shape)
        self.c_ctx = [
            self.store.add(f"c_ctx_{i}", init((dim, dim))) for i in range(1, context_size + 1)
        ]

    @property
    def vocab_size(self):
        return self.factored.vocab_size

    @property
    def dim(self):
        return self.factored.dim

    @property
    def cond_dim(self):
        return self.factored.cond_dim


def _mnlm_logits(context, u_vec, params, folded=None):
    ft = params.factored
    e = fold_embeddings(ft) if folded is None else folded
    r_hat = np.zeros(ft.dim)
    for c_mat, w in zip(params.c_ctx, context):
        r_hat += c_mat @ e[:, w]
    pre = ft.w_fk @ r_hat
    gate = ft.w_fd @ u_vec
    f = pre * gate
    logits = ft.w_fv.T @ f + ft.b
    return logits, (e, r_hat, pre, gate, f)


def mnlm_distribution(context, u_vec, params, folded=None):
    """P(next word | context, conditioning vector u)."""
    _check_context(context, params)
    u_vec = np.asarray(u_vec, dtype=np.float64).reshape(-1)
    if u_vec.shape[0] != params.cond_dim:
        raise ValueError(f"conditioning vector has dim {u_vec.shape[0]}, expected {params.cond_dim}")
    logits, _ = _mnlm_logits(context, u_vec, params, folded)
    return stable_softmax(logits)


def _mnlm_nll_grad(context, u_vec, target, params):
    """NLL and gradients for one position; returns (nll, d_u)."""
    ft = params.factored
    logits, (e, r_hat, pre, gate, f) = _mnlm_logits(context, u_vec, params)
    p = stable_softmax(logits)
    nll = -np.log(p[target])
    d_logits = p.copy()
    d_logits[target] -= 1.0

    g = params.store.grad
    g("b")[...] += d_logits
    g("w_fv")[...] += np.outer(f, d_logits)
    d_f = ft.w_fv @ d_logits
    d_pre = d_f * gate
    d_gate = d_f * pre
    g("w_fk")[...] += np.outer(d_pre, r_hat)
    g("w_fd")[...] += np.outer(d_gate, u_vec)
    d_u = ft.w_fd.T @ d_gate
    d_r_hat = ft.w_fk.T @ d_pre
    for i, (c_mat, w) in enumerate(zip(params.c_ctx, context), start=1):
        e_col = e[:, w]
        g(f"c_ctx_{i}")[...] += np.outer(d_r_hat, e_col)
        d_e_col = c_mat.T @ d_r_hat
        g("w_fk")[...] += np.outer(ft.w_fv[:, w], d_e_col)
        g("w_fv")[:, w] += ft.w_fk @ d_e_col
    return float(nll), d_u


class SCNLMParams:
    """Structure-content model: multiplicative core gated by tags + content.

    The attribute vector fed to the multiplicative core is
    relu(sum_j T_j tag_j + T_u u + b_struct) over the forward tag window.
    Tag embeddings live in the conditioning space (dimension G), which is
    what makes the G x G structure-context products well-typed; content
    vectors u have dimension K.
    """

    def __init__(self, vocab_size, dim, cond_dim, factors, context_size,
                 forward_size, tags, rng=None, bias=None, init_scale=0.08):
        if forward_size < 0:
            raise ValueError("forward size must be >= 0")
        tags = list(tags)
        if ingest.END_TAG not in tags:
            tags.append(ingest.END_TAG)
        self.tags = tags
        self.tag_index = {t: i for i, t in enumerate(tags)}
        self.forward_size = int(forward_size)
        self.core = MNLMParams(vocab_size, dim, cond_dim, factors, context_size, rng=rng, bias=bias,
                               init_scale=init_scale)
        self.store = self.core.store
        init = lambda shape: init_uniform(rng, shape, init_scale) if rng is not None else np.zeros(shape)
        self.tag_emb = self.store.add("tag_emb", init((len(tags), cond_dim)))
        self.t_ctx = [
            self.store.add(f"t_ctx_{j}", init((cond_dim, cond_dim)))
            for j in range(forward_size + 1)
        ]
        self.t_u = self.store.add("t_u", init((cond_dim, dim)))
        self.b_struct = self.store.add("b_struct", np.zeros(cond_dim))

    @property
    def vocab_size(self):
        return self.core.vocab_size

    @property
    def dim(self):
        return self.core.dim

    @property
    def cond_dim(self):
        return self.core.cond_dim

    @property
    def context_size(self):
        return self.core.context_size

    @property
    def end_tag_index(self):
        return self.tag_index[ingest.END_TAG]

    def tag_indices(self, tag_names):
        try:
            return [self.tag_index[t] for t in tag_names]
        except KeyError as exc:
            raise ValueError(f"unknown structure tag {exc.args[0]!r}") from None


def _scnlm_pre_attribute(u_vec, tag_window, params):
    if len(tag_window) != params.forward_size + 1:
        raise ValueError(
            f"tag window has {len(tag_window)} entries, expected {params.forward_size + 1}"
        )
    for t in tag_window:
        if not (0 <= t < len(params.tags)):
            raise ValueError(f"tag index {t} out of range")
    pre = params.t_u @ u_vec + params.b_struct
    for t_mat, t in zip(params.t_ctx, tag_window):
        pre += t_mat @ params.tag_emb[t]
    return pre


def scnlm_attribute(u_vec, tag_window, params):
    """The non-negative attribute vector blending structure and content."""
    u_vec = np.asarray(u_vec, dtype=np.float64).reshape(-1)
    if u_vec.shape[0] != params.dim:
        raise ValueError(f"content vector has dim {u_vec.shape[0]}, expected {params.dim}")
    return relu(_scnlm_pre_attribute(u_vec, tag_window, params))


def scnlm_distribution(context, tag_window, u_vec, params, folded=None):
    """P(next word | word context, forward tag window, content vector)."""
    u_hat = scnlm_attribute(u_vec, tag_window, params)
    return mnlm_distribution(context, u_hat, params.core, folded)


def _scnlm_nll_grad(context, tag_window, u_vec, target, params):
    pre = _scnlm_pre_attribute(u_vec, tag_window, params)
    u_hat = relu(pre)
    nll, d_u_hat = _mnlm_nll_grad(context, u_hat, target, params.core)
    d_pre = d_u_hat * (pre > 0)
    g = params.store.grad
    g("b_struct")[...] += d_pre
    g("t_u")[...] += np.outer(d_pre, u_vec)
    for j, (t_mat, t) in enumerate(zip(params.t_ctx, tag_window)):
        g(f"t_ctx_{j}")[...] += np.outer(d_pre, params.tag_emb[t])
        g("tag_emb")[t] += t_mat.T @ d_pre
    return nll


# ---------------------------------------------------------------------------
# training and evaluation
# ---------------------------------------------------------------------------


def _positions(model, token_indices, tag_indices, u_vec, start_index, grad):
    """Iterate NLL over every position of one sentence."""
    total = 0.0
    for pos, target in enumerate(token_indices):
        ctx = pad_context(token_indices, pos, model.context_size, start_index)
        if isinstance(model, SCNLMParams):
            window = forward_tag_window(
                tag_indices, pos, model.forward_size, model.end_tag_index
            )
            if grad:
                total += _scnlm_nll_grad(ctx, window, u_vec, target, model)
            else:
                p = scnlm_distribution(ctx, window, u_vec, model)
                total += -float(np.log(p[target]))
        elif isinstance(model, MNLMParams):
            if grad:
                total += _mnlm_nll_grad(ctx, u_vec, target, model)[0]
            else:
                total += -float(np.log(mnlm_distribution(ctx, u_vec, model)[target]))
        else:
            if grad:
                total += _lbl_nll_grad(ctx, target, model)
            else:
                total += -float(np.log(lbl_distribution(ctx, model)[target]))
    return total


def sentence_nll(model, token_indices, tag_indices, u_vec, start_index):
    """Total next-word NLL of one sentence under the model."""
    if len(token_indices) == 0:
        raise ValueError("cannot score an empty sentence")
    return _positions(model, token_indices, tag_indices, u_vec, start_index, grad=False)


def sentence_nll_grad(model, token_indices, tag_indices, u_vec, start_index):
    return _positions(model, token_indices, tag_indices, u_vec, start_index, grad=True)


def train_nlm(model, corpus, conditioning, vocab, config):
    """Stochastic gradient descent on next-word NLL.

    `corpus` is a list of CaptionRecords; `conditioning` a matching list of
    vectors (ignored by LBL models; pass None entries there). One SGD step
    per sentence, order reshuffled each epoch with the seeded generator,
    learning rate multiplied by the decay after each epoch. Returns the
    per-epoch mean NLL per token.
    """
    if len(corpus) == 0:
        raise ValueError("cannot train on an empty corpus")
    needs_u = isinstance(model, (MNLMParams, SCNLMParams))
    if needs_u:
        if conditioning is None or len(conditioning) != len(corpus):
            raise ValueError("every record needs a conditioning vector")
        for i, u in enumerate(conditioning):
            if u is None:
                raise ValueError(f"missing conditioning vector for record {i} ({corpus[i].image_id!r})")

    token_seqs = [vocab.indices(rec.tokens) for rec in corpus]
    if isinstance(model, SCNLMParams):
        tag_seqs = [model.tag_indices(rec.tags) for rec in corpus]
    else:
        tag_seqs = [None] * len(corpus)
    u_vecs = conditioning if needs_u else [None] * len(corpus)

    rng = make_rng(config.seed)
    lr = config.learning_rate
    order = np.arange(len(corpus))
    log = []
    n_tokens = sum(len(s) for s in token_seqs)
    for _ in range(config.epochs):
        rng.shuffle(order)
        total = 0.0
        for i in order:
            model.store.zero_grads()
            total += sentence_nll_grad(
                model, token_seqs[i], tag_seqs[i], u_vecs[i], vocab.start_index
            )
            _clip_gradients(model.store, config.clip_norm)
            model.store.sgd_step(lr)
        log.append(total / n_tokens)
        lr *= config.decay
    return log


def _clip_gradients(store, clip_norm):
    if clip_norm is None or clip_norm <= 0:
        return
    sq = 0.0
    for name in store.names():
        g = store.grad(name)
        sq += float((g * g).sum())
    norm = np.sqrt(sq)
    if norm > clip_norm:
        scale = clip_norm / norm
        for name in store.names():
            store.grad(name)[...] *= scale


def perplexity(model, corpus, conditioning, vocab):
    """exp(mean NLL per token) over a corpus; 1 means certainty."""
    if len(corpus) == 0:
        raise ValueError("cannot compute perplexity of an empty corpus")
    needs_u = isinstance(model, (MNLMParams, SCNLMParams))
    total, count = 0.0, 0
    for i, rec in enumerate(corpus):
        tokens = vocab.indices(rec.tokens)
        tags = model.tag_indices(rec.tags) if isinstance(model, SCNLMParams) else None
        u = conditioning[i] if needs_u else None
        total += sentence_nll(model, tokens, tags, u, vocab.start_index)
        count += len(tokens)
    return float(np.exp(total / count))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_scnlm(path, model, vocab):
    blocks = {name: arr for name, arr in model.store.items()}
    dims = {
        "V": model.vocab_size,
        "K": model.dim,
        "G": model.cond_dim,
        "F": model.core.factored.factors,
        "context": model.context_size,
        "forward": model.forward_size,
    }
    meta = {"kind": "scnlm", "tags": model.tags, "tokens": vocab.tokens}
    ingest.save_archive(path, blocks, dims, meta)


def load_scnlm(path):
    """Returns (SCNLMParams, token list) from an archive."""
    blocks, dims, meta = ingest.load_archive(path)
    if meta.get("kind") != "scnlm":
        raise ValueError(f"{path}: archive does not hold a structure-content model")
    model = SCNLMParams(
        dims["V"], dims["K"], dims["G"], dims["F"], dims["context"],
        dims["forward"], meta["tags"],
    )
    for name in model.store.names():
        arr = model.store.get(name)
        arr[...] = blocks[name].reshape(arr.shape)
    return model, meta["tokens"]
