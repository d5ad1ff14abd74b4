"""Joint image-sentence embedding trained with a pairwise ranking loss.

Images enter the shared K-dim space through a learned projection of their
precomputed feature vectors; sentences enter through either the LSTM
encoder or a linear sum-of-word-vectors encoder. Matching is cosine
similarity, and training minimizes a bidirectional margin hinge over all
contrastive pairings inside each minibatch, with the data reshuffled every
epoch so the contrastive terms are resampled.

The word table is held fixed when the LSTM encoder is used and is a
trainable parameter in linear mode.
"""

from dataclasses import dataclass

import numpy as np

from . import ingest, lstm
from .numcore import ParamStore, init_uniform, make_rng, unit_normalize


@dataclass
class TrainConfig:
    batch_size: int = 40
    learning_rate: float = 1.0
    decay: float = 0.99
    epochs: int = 10
    seed: int = 0
    contrastive: str = "minibatch"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not (0 < self.decay <= 1):
            raise ValueError("decay must be in (0, 1]")
        if self.batch_size < 2:
            raise ValueError("minibatch size must be >= 2 (contrastive terms come from the batch)")


class JointModel:
    """Shared embedding space: image projection plus a sentence encoder."""

    def __init__(self, vocab, feature_dim, margin=0.2, encoder="lstm", seed=0,
                 init_scale=0.08):
        if margin <= 0:
            raise ValueError("margin must be positive")
        if encoder not in ("lstm", "linear"):
            raise ValueError(f"unknown encoder kind {encoder!r}")
        rng = make_rng(seed)
        self.vocab = vocab
        self.margin = float(margin)
        self.encoder = encoder
        self.feature_dim = int(feature_dim)
        self.store = ParamStore()
        self.w_img = self.store.add("w_img", init_uniform(rng, (vocab.dim, feature_dim), init_scale))
        if encoder == "lstm":
            self.lstm = lstm.LSTMParams(vocab.dim, rng=rng, store=self.store, init_scale=init_scale)
        else:
            self.lstm = None
            # linear mode finetunes the word table, so it joins the store
            self.w_words = self.store.add("w_words", vocab.embeddings)
            vocab.embeddings = self.w_words

    @property
    def dim(self):
        return self.vocab.dim

    def embed_image(self, q):
        q = np.asarray(q, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.feature_dim:
            raise ValueError(
                f"feature vector has {q.shape[0]} entries, expected {self.feature_dim}"
            )
        return self.w_img @ q

    def embed_images(self, q_matrix):
        q_matrix = np.asarray(q_matrix, dtype=np.float64)
        if q_matrix.shape[1] != self.feature_dim:
            raise ValueError(
                f"feature matrix has {q_matrix.shape[1]} columns, expected {self.feature_dim}"
            )
        return q_matrix @ self.w_img.T

    def encode_captions(self, index_seqs):
        """Encode token-index sequences; returns (B x K, cache for backward)."""
        if self.encoder == "lstm":
            return lstm.encode_batch(index_seqs, self.vocab, self.lstm)
        vecs = np.stack([linear_encode_indices(seq, self.vocab) for seq in index_seqs])
        return vecs, index_seqs

    def encode_caption(self, indices):
        return self.encode_captions([list(indices)])[0][0]

    def backward_captions(self, cache, d_vecs):
        if self.encoder == "lstm":
            lstm.lstm_backward(cache, d_vecs, self.lstm)
        else:
            g = self.store.grad("w_words")
            for seq, d in zip(cache, d_vecs):
                for idx in seq:
                    g[idx] += d


def linear_encode_indices(indices, vocab):
    if len(indices) == 0:
        raise ValueError("cannot encode an empty token sequence")
    return vocab.embeddings[list(indices)].sum(axis=0)


def linear_encode(tokens, vocab):
    """Order-invariant sentence vector: the sum of its word embedding rows."""
    return linear_encode_indices([vocab.index_or_unk(t) for t in tokens], vocab)


def score(x, v):
    """Cosine similarity; both vectors are unit-normalized first."""
    return float(unit_normalize(x) @ unit_normalize(v))


def ranking_loss_core(x_raw, v_raw, margin):
    """Bidirectional margin hinge over one batch of matched pairs.

    Row i of x_raw and v_raw is a matched image/sentence pair; every other
    row of the opposite modality serves as a contrastive term. Returns
    (loss, d_loss/d_x_raw, d_loss/d_v_raw); gradients flow through the
    cosine normalization.
    """
    x_raw = np.asarray(x_raw, dtype=np.float64)
    v_raw = np.asarray(v_raw, dtype=np.float64)
    b = x_raw.shape[0]
    if b < 2:
        raise ValueError("ranking loss needs a batch of >= 2 pairs for contrastive terms")

    x_norms = np.linalg.norm(x_raw, axis=1, keepdims=True)
    v_norms = np.linalg.norm(v_raw, axis=1, keepdims=True)
    if np.any(x_norms < 1e-12) or np.any(v_norms < 1e-12):
        raise ValueError("cannot score a zero embedding vector")
    x_unit = x_raw / x_norms
    v_unit = v_raw / v_norms
    scores = x_unit @ v_unit.T
    diag = np.diag(scores)

    off = ~np.eye(b, dtype=bool)
    # image query vs contrastive sentences, then sentence query vs contrastive images
    sent_terms = np.maximum(0.0, margin - diag[:, None] + scores) * off
    img_terms = np.maximum(0.0, margin - diag[None, :] + scores) * off
    loss = float(sent_terms.sum() + img_terms.sum())

    d_scores = (sent_terms > 0).astype(np.float64) + (img_terms > 0).astype(np.float64)
    np.fill_diagonal(d_scores, -((sent_terms > 0).sum(axis=1) + (img_terms > 0).sum(axis=0)))

    d_x_unit = d_scores @ v_unit
    d_v_unit = d_scores.T @ x_unit
    d_x = (d_x_unit - (d_x_unit * x_unit).sum(axis=1, keepdims=True) * x_unit) / x_norms
    d_v = (d_v_unit - (d_v_unit * v_unit).sum(axis=1, keepdims=True) * v_unit) / v_norms
    return loss, d_x, d_v


def ranking_loss(model, q_batch, index_seqs):
    """Loss for a batch of (feature, caption) pairs, accumulating gradients.

    q_batch is B x D; index_seqs are the matched captions as vocabulary
    indices. Gradients land in the model's ParamStore.
    """
    x_raw = model.embed_images(q_batch)
    v_raw, cache = model.encode_captions(index_seqs)
    loss, d_x, d_v = ranking_loss_core(x_raw, v_raw, model.margin)
    model.store.grad("w_img")[...] += d_x.T @ q_batch
    model.backward_captions(cache, d_v)
    return loss


def train_embedding(pairs, features, model, config):
    """SGD over minibatches; returns the per-epoch mean loss per pair.

    The pair list is reshuffled each epoch with the seeded generator (this
    is what resamples the contrastive terms) and the learning rate is
    multiplied by the decay factor after every epoch. A trailing partial
    batch of fewer than 2 pairs is dropped.
    """
    for image_id, _ in pairs:
        if image_id not in features:
            raise ValueError(f"no features for image_id {image_id!r}")
    if len(pairs) < 2:
        raise ValueError("need at least 2 training pairs to form contrastive terms")

    index_cache = [model.vocab.indices(rec.tokens) for _, rec in pairs]
    q_all = np.stack([features.get(image_id) for image_id, _ in pairs])

    rng = make_rng(config.seed)
    lr = config.learning_rate
    log = []
    order = np.arange(len(pairs))
    for _ in range(config.epochs):
        rng.shuffle(order)
        total, n_seen = 0.0, 0
        for lo in range(0, len(order), config.batch_size):
            sel = order[lo : lo + config.batch_size]
            if sel.size < 2:
                continue
            model.store.zero_grads()
            loss = ranking_loss(model, q_all[sel], [index_cache[i] for i in sel])
            model.store.sgd_step(lr)
            total += loss
            n_seen += sel.size
        log.append(total / n_seen)
        lr *= config.decay
    return log


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_joint_model(path, model):
    blocks = {name: arr for name, arr in model.store.items()}
    blocks["w_tokens"] = model.vocab.embeddings
    dims = {"K": model.dim, "D": model.feature_dim, "V": model.vocab.size}
    meta = {
        "kind": "joint",
        "encoder": model.encoder,
        "margin": model.margin,
        "tokens": model.vocab.tokens,
    }
    ingest.save_archive(path, blocks, dims, meta)


def load_joint_model(path):
    blocks, dims, meta = ingest.load_archive(path)
    if meta.get("kind") != "joint":
        raise ValueError(f"{path}: archive does not hold a joint embedding model")
    vocab = ingest.Vocabulary(meta["tokens"], blocks["w_tokens"].reshape(dims["V"], dims["K"]))
    model = JointModel(
        vocab, dims["D"], margin=meta["margin"], encoder=meta["encoder"], seed=0
    )
    model.w_img[...] = blocks["w_img"].reshape(model.dim, model.feature_dim)
    if model.encoder == "lstm":
        model.lstm.load_blocks(blocks)
    else:
        model.w_words[...] = blocks["w_words"].reshape(vocab.size, vocab.dim)
        vocab.embeddings = model.w_words
    return model
