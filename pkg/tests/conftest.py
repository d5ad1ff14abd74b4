"""Shared fixtures: trained synthetic worlds are expensive, so they are
built once per session and reused by module tests, CLI tests and the
acceptance suite."""

import time
import warnings
from dataclasses import dataclass

import numpy as np
import pytest

from capvec import embedding, generation, ingest, nlm, regularities
from capvec.numcore import make_rng
from capvec.synthetic import (
    make_grammar_world,
    make_retrieval_world,
    make_toy_caption_world,
    train_toy_pipeline,
)

warnings.filterwarnings("ignore", category=RuntimeWarning)


@dataclass
class OverfitWorld:
    vocab: object
    pairs: list
    features: object
    model: object
    train_seconds: float


@pytest.fixture(scope="session")
def overfit_world():
    """50 random pairs, K=D=16, trained to perfect retrieval."""
    t0 = time.time()
    vocab, pairs, features = make_retrieval_world(n_pairs=50, dim_k=16, dim_d=16, seed=0)
    model = embedding.JointModel(vocab, 16, margin=0.2, encoder="lstm", seed=1)
    config = embedding.TrainConfig(
        batch_size=5, learning_rate=0.5, decay=0.997, epochs=400, seed=2
    )
    embedding.train_embedding(pairs, features, model, config)
    return OverfitWorld(vocab, pairs, features, model, time.time() - t0)


@dataclass
class GrammarPipeline:
    world: object
    model: object
    perplexity: float
    train_seconds: float


@pytest.fixture(scope="session")
def grammar_pipeline():
    """Deterministic-grammar corpus with a converged structure-content model."""
    t0 = time.time()
    world = make_grammar_world(n_contents=3, dim_k=10, seed=0)
    model = nlm.SCNLMParams(
        world.vocab.size, 10, 10, 14, context_size=3, forward_size=1,
        tags=ingest.tag_vocabulary(world.records), rng=make_rng(5), init_scale=0.3,
    )
    config = nlm.NLMTrainConfig(
        context_size=3, forward_size=1, epochs=1000,
        learning_rate=0.05, decay=0.9995, seed=6,
    )
    nlm.train_nlm(model, world.records, world.conditioning, world.vocab, config)
    pp = nlm.perplexity(model, world.records, world.conditioning, world.vocab)
    return GrammarPipeline(world, model, pp, time.time() - t0)


@dataclass
class ToyPipeline:
    world: object
    joint: object
    scnlm: object
    kn: object
    word_index: object
    sentence_index: object
    pool: object
    config: object
    train_seconds: float


@pytest.fixture(scope="session")
def toy_pipeline():
    """Ten-image world with the full pipeline trained to overfit."""
    t0 = time.time()
    world = make_toy_caption_world(seed=0)
    joint, scnlm, kn_model = train_toy_pipeline(world, seed=0)
    word_ids = [world.vocab.tokens[i] for i in world.vocab.content_indices()]
    word_index = regularities.EmbeddingIndex(
        word_ids,
        world.vocab.embeddings[[world.vocab.index(t) for t in word_ids]],
        ["word"] * len(word_ids),
    )
    sent_ids, sent_vecs = [], []
    for n, rec in enumerate(world.records):
        sent_ids.append(f"cap{n:04d}")
        sent_vecs.append(joint.encode_caption(world.vocab.indices(rec.tokens)))
    sentence_index = regularities.EmbeddingIndex(
        sent_ids, np.asarray(sent_vecs), ["sentence"] * len(sent_ids)
    )
    pool = generation.PosTemplatePool.harvest(world.records)
    config = generation.GenConfig(
        n_concepts=5, candidate_count=1000, return_count=5,
        beam_width=8, per_concept=True, seed=11,
    )
    return ToyPipeline(world, joint, scnlm, kn_model, word_index, sentence_index,
                       pool, config, time.time() - t0)


@pytest.fixture(scope="session")
def cli_data_dir(tmp_path_factory, overfit_world, toy_pipeline):
    """On-disk data files and model archives for CLI tests."""
    root = tmp_path_factory.mktemp("clidata")

    w = overfit_world
    (root / "overfit_captions.tsv").write_text(
        ingest.serialize_caption_corpus([rec for _, rec in w.pairs]), encoding="utf-8"
    )
    (root / "overfit_features.txt").write_text(
        ingest.serialize_image_features(w.features), encoding="utf-8"
    )
    (root / "overfit_embeddings.txt").write_text(
        ingest.serialize_word_embeddings(w.vocab), encoding="utf-8"
    )
    embedding.save_joint_model(str(root / "overfit_joint.bin"), w.model)

    t = toy_pipeline
    (root / "toy_captions.tsv").write_text(
        ingest.serialize_caption_corpus(t.world.records), encoding="utf-8"
    )
    (root / "toy_features.txt").write_text(
        ingest.serialize_image_features(t.world.features), encoding="utf-8"
    )
    (root / "toy_stopwords.txt").write_text("the\n", encoding="utf-8")
    embedding.save_joint_model(str(root / "toy_joint.bin"), t.joint)
    nlm.save_scnlm(str(root / "toy_scnlm.bin"), t.scnlm, t.world.vocab)
    from capvec import kn as kn_mod

    kn_mod.save_kn(str(root / "toy_kn.bin"), t.kn)
    return root
