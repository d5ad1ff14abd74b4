"""Synthetic desk-scale worlds for experiments and tests.

Real caption corpora are far too large to train here, so experiments run
on constructed worlds: random (feature, caption) pairs for retrieval
overfitting, a deterministic template grammar whose content vector picks
every word (so a converged decoder must reproduce sentences exactly), and
a small fully-trained pipeline world for end-to-end generation.
"""

from dataclasses import dataclass

import numpy as np

from . import embedding, ingest, kn, nlm
from .numcore import init_uniform, make_rng, unit_normalize


def random_vocabulary(n_words, dim, seed=0, prefix="w", scale=0.08):
    """Synthetic word table; stands in for pretrained embedding data."""
    tokens = [f"{prefix}{i}" for i in range(n_words)] + list(ingest.RESERVED_TOKENS)
    table = init_uniform(make_rng(seed), (len(tokens), dim), scale)
    return ingest.Vocabulary(tokens, table)


def make_retrieval_world(n_pairs=50, dim_k=16, dim_d=16, n_words=40, seed=0):
    """Random captions paired with random feature vectors.

    Returns (vocab, pairs, features): `pairs` is a list of
    (image_id, CaptionRecord) and every image has exactly one caption.
    """
    rng = make_rng(seed)
    vocab = random_vocabulary(n_words, dim_k, seed=seed + 1, scale=0.8)
    features = ingest.FeatureStore(dim_d)
    pairs = []
    words = [t for t in vocab.tokens if t not in ingest.RESERVED_TOKENS]
    for i in range(n_pairs):
        image_id = f"img{i:03d}"
        length = int(rng.integers(3, 8))
        tokens = tuple(words[int(rng.integers(0, len(words)))] for _ in range(length))
        tags = tuple("NN" for _ in tokens)
        pairs.append((image_id, ingest.CaptionRecord(image_id, tokens, tags)))
        features.add(image_id, rng.normal(size=dim_d))
    return vocab, pairs, features


@dataclass
class GrammarWorld:
    """Deterministic template grammar: u and the tag decide every word."""

    vocab: object
    records: list
    conditioning: list
    templates: list
    content_vectors: list
    sentences: dict  # (template index, content index) -> token tuple


def make_grammar_world(n_contents=3, dim_k=10, seed=0):
    """Corpus where the conditioning vector uniquely determines each word.

    Templates are part-of-speech sequences; for content index i, the word
    realizing tag T is always "T.i". Conditioning vectors are orthogonal
    scaled basis vectors, so the decoder can separate contents linearly.
    """
    templates = [
        ("DT", "JJ", "NN", "VB"),
        ("NN", "VB", "RB", "JJ"),
        ("DT", "NN", "VB", "NN"),
    ]
    tag_set = sorted({t for tpl in templates for t in tpl})
    words = [f"{tag.lower()}.{i}" for tag in tag_set for i in range(n_contents)]
    tokens = words + list(ingest.RESERVED_TOKENS)
    table = init_uniform(make_rng(seed + 1), (len(tokens), dim_k))
    vocab = ingest.Vocabulary(tokens, table)

    content_vectors = [np.zeros(dim_k) for _ in range(n_contents)]
    for i in range(n_contents):
        content_vectors[i][i] = 2.0

    records, conditioning, sentences = [], [], {}
    for ti, tpl in enumerate(templates):
        for ci in range(n_contents):
            toks = tuple(f"{t.lower()}.{ci}" for t in tpl)
            rec = ingest.CaptionRecord(f"g{ti}_{ci}", toks, tpl)
            records.append(rec)
            conditioning.append(content_vectors[ci])
            sentences[(ti, ci)] = toks
    return GrammarWorld(vocab, records, conditioning, list(templates), content_vectors, sentences)


@dataclass
class ToyWorld:
    """A complete small pipeline world for generation tests."""

    vocab: object
    records: list
    features: object
    pairs: list
    stopwords: frozenset


def make_toy_caption_world(n_images=10, dim_k=12, dim_d=10, seed=0):
    """Ten images with unique template-grammar captions and random features."""
    adjectives = ["red", "blue", "green", "small", "large", "old", "young", "dark", "pale", "wild"]
    nouns = ["car", "dog", "boat", "house", "bird", "tree", "road", "girl", "man", "lake"]
    verbs = ["moves", "waits", "turns", "rests", "runs", "floats", "stands", "leans", "plays", "drifts"]
    rng = make_rng(seed)
    records, pairs = [], []
    features = ingest.FeatureStore(dim_d)
    for i in range(n_images):
        image_id = f"toy{i:02d}"
        tokens = ("the", adjectives[i], nouns[i], verbs[i])
        tags = ("DT", "JJ", "NN", "VB")
        rec = ingest.CaptionRecord(image_id, tokens, tags)
        records.append(rec)
        pairs.append((image_id, rec))
        features.add(image_id, rng.normal(size=dim_d))
    vocab = ingest.build_vocabulary(records, 1, dim_k, make_rng(seed + 1))
    vocab.embeddings *= 10.0  # pretrained-scale word vectors, not init-scale
    return ToyWorld(vocab, records, features, pairs, frozenset({"the"}))


def train_toy_pipeline(world, seed=0, embed_epochs=400, scnlm_epochs=1000):
    """Overfit the full pipeline on a ToyWorld.

    Returns (joint model, structure-content model, Kneser-Ney model). The
    structure-content model is conditioned on the trained sentence
    embeddings, unit-normalized (the same convention generation uses for
    image embeddings, so the two conditioning sources stay comparable).
    """
    model = embedding.JointModel(world.vocab, world.features.dim, margin=0.2,
                                 encoder="lstm", seed=seed)
    config = embedding.TrainConfig(batch_size=5, learning_rate=0.5, decay=0.997,
                                   epochs=embed_epochs, seed=seed)
    embedding.train_embedding(world.pairs, world.features, model, config)

    cond = [
        unit_normalize(model.encode_caption(world.vocab.indices(rec.tokens)))
        for rec in world.records
    ]
    scnlm = nlm.SCNLMParams(
        world.vocab.size, world.vocab.dim, world.vocab.dim, 16,
        context_size=3, forward_size=1,
        tags=ingest.tag_vocabulary(world.records),
        rng=make_rng(seed + 2), init_scale=0.3,
    )
    nconfig = nlm.NLMTrainConfig(context_size=3, forward_size=1, epochs=scnlm_epochs,
                                 learning_rate=0.05, decay=0.9995, seed=seed)
    nlm.train_nlm(scnlm, world.records, cond, world.vocab, nconfig)

    kn_model = kn.build_kn_trigram([list(rec.tokens) for rec in world.records])
    return model, scnlm, kn_model
