"""Finite-difference verification of every analytic gradient in one place.

Each entry builds a tiny fixed problem (dimensions chosen so the sweep
stays fast), wires the model's loss-and-backward into check_gradient, and
reports the max relative error. All training code in this package is
gated on these staying below 1e-4.
"""

from . import embedding, nlm
from .numcore import check_gradient, make_rng
from .synthetic import random_vocabulary


def lstm_ranking_check(seed=0, dim=8, batch=3):
    """LSTM encoder composed with the bidirectional ranking loss.

    Checks run at a larger weight scale than training initialization so
    the true gradients sit well above finite-difference roundoff.
    """
    rng = make_rng(seed)
    vocab = random_vocabulary(12, dim, seed=seed + 1)
    model = embedding.JointModel(vocab, dim, margin=0.2, encoder="lstm", seed=seed + 2,
                                 init_scale=0.5)
    lengths = [2, 4, 3][:batch]
    seqs = [[int(rng.integers(0, vocab.size)) for _ in range(n)] for n in lengths]
    q = rng.normal(size=(batch, dim))

    def loss_fn(store):
        return embedding.ranking_loss(model, q, seqs)

    return check_gradient(loss_fn, model.store)


def lbl_check(seed=0, vocab_size=20, dim=8, context=2):
    rng = make_rng(seed)
    model = nlm.LBLParams(vocab_size, dim, context, rng=make_rng(seed + 1))
    sentence = [int(rng.integers(0, vocab_size)) for _ in range(4)]

    def loss_fn(store):
        return nlm.sentence_nll_grad(model, sentence, None, None, start_index=0)

    return check_gradient(loss_fn, model.store)


def mnlm_check(seed=0, vocab_size=20, dim=8, cond_dim=8, factors=5, context=2):
    rng = make_rng(seed)
    model = nlm.MNLMParams(vocab_size, dim, cond_dim, factors, context,
                           rng=make_rng(seed + 1), init_scale=0.6)
    sentence = [int(rng.integers(0, vocab_size)) for _ in range(4)]
    u = rng.normal(size=cond_dim)

    def loss_fn(store):
        return nlm.sentence_nll_grad(model, sentence, None, u, start_index=0)

    return check_gradient(loss_fn, model.store)


def scnlm_check(seed=0, vocab_size=20, dim=8, cond_dim=8, factors=5, context=2, forward=2):
    rng = make_rng(seed)
    tags = ["DT", "JJ", "NN", "VB"]
    model = nlm.SCNLMParams(vocab_size, dim, cond_dim, factors, context, forward,
                            tags, rng=make_rng(seed + 1), init_scale=0.6)
    sentence = [int(rng.integers(0, vocab_size)) for _ in range(4)]
    tag_seq = [int(rng.integers(0, len(tags))) for _ in range(4)]
    u = rng.normal(size=dim)

    def loss_fn(store):
        return nlm.sentence_nll_grad(model, sentence, tag_seq, u, start_index=0)

    return check_gradient(loss_fn, model.store)


def run_gradient_suite(seed=0):
    """All four checks; returns [(name, max relative error)]."""
    return [
        ("lstm_encoder_ranking_loss", lstm_ranking_check(seed)),
        ("log_bilinear_nll", lbl_check(seed)),
        ("multiplicative_nll", mnlm_check(seed)),
        ("structure_content_nll", scnlm_check(seed)),
    ]
