import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capvec import kn
from capvec.ingest import END_TOKEN, START_TOKEN, UNK_TOKEN
from capvec.numcore import make_rng


def random_corpus(rng, n_sentences=20, vocab=("a", "b", "c", "d", "e")):
    corpus = []
    for _ in range(n_sentences):
        n = int(rng.integers(1, 6))
        corpus.append([vocab[int(rng.integers(0, len(vocab)))] for _ in range(n)])
    return corpus


class TestCounting:
    def test_single_sentence_hand_enumeration(self):
        model = kn.build_kn_trigram([["a", "b"]])
        s, e = START_TOKEN, END_TOKEN
        assert model.trigram == {
            (s, s, "a"): 1,
            (s, "a", "b"): 1,
            ("a", "b", e): 1,
        }
        assert model.bigram[(s, s)] == 1
        assert model.bigram[(s, "a")] == 1
        assert model.bigram[("a", "b")] == 1
        assert model.unigram["a"] == 1
        assert model.n_tokens == 2

    def test_duplicated_corpus_doubles_raw_counts(self):
        corpus = random_corpus(make_rng(0))
        one = kn.build_kn_trigram(corpus)
        two = kn.build_kn_trigram(corpus + corpus)
        for key, n in one.trigram.items():
            assert two.trigram[key] == 2 * n
        for key, n in one.bigram.items():
            assert two.bigram[key] == 2 * n
        for key, n in one.unigram.items():
            assert two.unigram[key] == 2 * n
        # continuation tables count distinct contexts, so they are unchanged
        assert two.cont_bigram == one.cont_bigram
        assert two.cont_uni == one.cont_uni

    def test_marginalization_invariants_brute_force(self):
        model = kn.build_kn_trigram(random_corpus(make_rng(1)))
        for (a, b), n in model.bigram.items():
            brute = sum(c for (x, y, _z), c in model.trigram.items() if (x, y) == (a, b))
            assert brute == n
        for a, n in model.unigram.items():
            brute = sum(c for (x, _y), c in model.bigram.items() if x == a)
            assert brute == n

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            kn.build_kn_trigram([])

    def test_discount_range_enforced(self):
        with pytest.raises(ValueError):
            kn.build_kn_trigram([["a"]], discount=1.0)


class TestProbabilities:
    def test_conditionals_sum_to_one_over_random_contexts(self):
        rng = make_rng(2)
        vocab = tuple(f"t{i}" for i in range(12))
        model = kn.build_kn_trigram(random_corpus(rng, 40, vocab))
        events = model.event_vocab
        contexts = set()
        pool = list(vocab) + [START_TOKEN, END_TOKEN, UNK_TOKEN]
        while len(contexts) < 100:
            contexts.add((pool[int(rng.integers(0, len(pool)))],
                          pool[int(rng.integers(0, len(pool)))]))
        for a, b in contexts:
            total = sum(model.prob(w, a, b) for w in events)
            assert abs(total - 1.0) < 1e-9

    def test_unseen_token_finite(self):
        model = kn.build_kn_trigram([["a", "b", "a"]])
        lp = kn.kn_logprob(model, ["zebra"])
        assert math.isfinite(lp)
        lp2 = kn.kn_logprob(model, [UNK_TOKEN])
        assert lp == lp2  # OOV scores exactly as <unk>

    def test_zero_discount_maximum_likelihood_limit(self):
        # (a, b) is followed only by c, so with no discount P(c | a, b) = 1
        model = kn.build_kn_trigram([["a", "b", "c"], ["c", "a", "d"]], discount=0.0)
        assert model.prob("c", "a", "b") == pytest.approx(1.0)

    def test_logprob_non_positive(self):
        model = kn.build_kn_trigram(random_corpus(make_rng(3)))
        assert kn.kn_logprob(model, ["a", "b", "c"]) <= 0.0

    def test_empty_sentence_rejected(self):
        model = kn.build_kn_trigram([["a"]])
        with pytest.raises(ValueError):
            kn.kn_logprob(model, [])

    @given(st.integers(min_value=0, max_value=5_000))
    @settings(max_examples=25, deadline=None)
    def test_adding_occurrence_never_decreases_probability(self, seed):
        rng = make_rng(seed)
        corpus = random_corpus(rng, 12, ("a", "b", "c", "d"))
        base = kn.build_kn_trigram(corpus)
        # pick any real trigram event (skip <start>-padded contexts so the
        # added sentence reproduces the exact trigram)
        triples = [t for t in base.trigram if START_TOKEN not in t and END_TOKEN not in t]
        if not triples:
            return
        a, b, c = triples[int(rng.integers(0, len(triples)))]
        before = base.prob(c, a, b)
        grown = kn.build_kn_trigram(corpus + [[a, b, c]])
        after = grown.prob(c, a, b)
        assert after >= before - 1e-12

    def test_sentence_logprob_matches_position_sum(self):
        model = kn.build_kn_trigram(random_corpus(make_rng(4)))
        sent = ["a", "c", "b"]
        expected = (
            math.log(model.prob("a", START_TOKEN, START_TOKEN))
            + math.log(model.prob("c", START_TOKEN, "a"))
            + math.log(model.prob("b", "a", "c"))
            + math.log(model.prob(END_TOKEN, "c", "b"))
        )
        assert kn.kn_logprob(model, sent) == pytest.approx(expected, rel=1e-12)


class TestPersistence:
    def test_round_trip(self, tmp_path):
        model = kn.build_kn_trigram(random_corpus(make_rng(5)), discount=0.6)
        path = str(tmp_path / "kn.bin")
        kn.save_kn(path, model)
        loaded = kn.load_kn(path)
        assert loaded.discount == model.discount
        assert loaded.trigram == model.trigram
        assert loaded.event_vocab == model.event_vocab
        for sent in (["a", "b"], ["e", "e", "c"], ["zebra"]):
            assert kn.kn_logprob(loaded, sent) == pytest.approx(
                kn.kn_logprob(model, sent), rel=1e-15
            )
