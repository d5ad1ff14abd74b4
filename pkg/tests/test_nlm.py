import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capvec import ingest, nlm
from capvec.gradsuite import lbl_check, mnlm_check, scnlm_check
from capvec.numcore import make_rng
from capvec.synthetic import make_grammar_world, random_vocabulary

seeds = st.integers(min_value=0, max_value=10_000)


class TestLBL:
    def test_zero_params_uniform(self):
        model = nlm.LBLParams(5, 2, 1)
        np.testing.assert_allclose(nlm.lbl_distribution([3], model), np.full(5, 0.2), atol=1e-15)

    def test_matches_explicit_formula(self):
        model = nlm.LBLParams(5, 2, 1, rng=make_rng(1), init_scale=0.7)
        w = 3
        p = nlm.lbl_distribution([w], model)
        r_hat = model.c_ctx[0] @ model.r_words[w]
        logits = np.array([r_hat @ model.r_words[i] + model.b[i] for i in range(5)])
        expected = np.exp(logits) / np.exp(logits).sum()
        np.testing.assert_allclose(p, expected, atol=1e-12)

    def test_dominant_bias(self):
        model = nlm.LBLParams(6, 3, 2)
        model.b[4] = 20.0
        p = nlm.lbl_distribution([0, 1], model)
        assert p[4] > 0.999

    def test_bad_index_rejected(self):
        model = nlm.LBLParams(5, 2, 1)
        with pytest.raises(ValueError):
            nlm.lbl_distribution([7], model)

    def test_gradient_check(self):
        assert lbl_check(seed=0) < 1e-4


class TestFoldEmbeddings:
    def test_identity_product(self):
        ft = nlm.FactoredTensor(3, 3, 3, 3)
        ft.w_fk[...] = np.eye(3)
        ft.w_fv[...] = np.eye(3)
        np.testing.assert_allclose(nlm.fold_embeddings(ft), np.eye(3))

    def test_random_matches_hand_multiplication(self):
        ft = nlm.FactoredTensor(4, 3, 2, 2, rng=make_rng(2))
        e = nlm.fold_embeddings(ft)
        for k in range(3):
            for v in range(4):
                expected = sum(ft.w_fk[f, k] * ft.w_fv[f, v] for f in range(2))
                assert e[k, v] == pytest.approx(expected, abs=1e-14)

    def test_zero_factor_annihilates(self):
        ft = nlm.FactoredTensor(4, 3, 2, 2, rng=make_rng(2))
        ft.w_fk[...] = 0.0
        np.testing.assert_allclose(nlm.fold_embeddings(ft), 0.0)


def unfactored_tensor_logits(model, context, u):
    """Reference path: materialize the conditioned tensor explicitly."""
    ft = model.factored
    t_u = ft.w_fv.T @ np.diag(ft.w_fd @ u) @ ft.w_fk  # V x K
    e = ft.w_fk.T @ ft.w_fv
    r_hat = np.zeros(ft.dim)
    for c_mat, w in zip(model.c_ctx, context):
        r_hat += c_mat @ e[:, w]
    return t_u @ r_hat + ft.b


class TestMNLM:
    def test_zero_conditioning_leaves_bias_only(self):
        model = nlm.MNLMParams(5, 3, 3, 2, 1, rng=make_rng(3))
        model.factored.b[2] = 1.5
        p = nlm.mnlm_distribution([0], np.zeros(3), model)
        expected = np.exp(model.factored.b) / np.exp(model.factored.b).sum()
        np.testing.assert_allclose(p, expected, atol=1e-12)

    def test_factored_matches_unfactored_tensor(self):
        """100 random draws at V=4, K=G=2, F=2, 1e-10 tolerance."""
        rng = make_rng(4)
        for draw in range(100):
            model = nlm.MNLMParams(4, 2, 2, 2, 2, rng=make_rng(100 + draw), init_scale=0.9)
            context = [int(rng.integers(0, 4)) for _ in range(2)]
            u = rng.normal(size=2)
            reference = unfactored_tensor_logits(model, context, u)
            via_softmax = nlm.mnlm_distribution(context, u, model)
            expected = np.exp(reference - reference.max())
            expected /= expected.sum()
            np.testing.assert_allclose(via_softmax, expected, atol=1e-10)

    def test_conditioning_scale_moves_factor_output(self):
        model = nlm.MNLMParams(5, 3, 3, 2, 1, rng=make_rng(5))
        u = make_rng(6).normal(size=3)
        _, (_, _, pre, gate1, _) = nlm._mnlm_logits([2], u, model)
        _, (_, _, _, gate2, _) = nlm._mnlm_logits([2], 3.0 * u, model)
        np.testing.assert_allclose(gate2, 3.0 * gate1, atol=1e-12)

    def test_zero_gate_matrix_makes_u_irrelevant(self):
        model = nlm.MNLMParams(5, 3, 3, 2, 1, rng=make_rng(7))
        model.factored.w_fd[...] = 0.0
        rng = make_rng(8)
        p1 = nlm.mnlm_distribution([2], rng.normal(size=3), model)
        p2 = nlm.mnlm_distribution([2], rng.normal(size=3), model)
        np.testing.assert_allclose(p1, p2, atol=1e-15)

    def test_gradient_check(self):
        assert mnlm_check(seed=0) < 1e-4


class TestSCNLMAttribute:
    def make(self, seed=None, forward=2, dim=4):
        rng = make_rng(seed) if seed is not None else None
        return nlm.SCNLMParams(6, dim, dim, 3, 2, forward, ["DT", "NN", "VB"],
                               rng=rng, init_scale=0.6)

    def test_zero_params_zero_attribute(self):
        model = self.make()
        out = nlm.scnlm_attribute(np.ones(4), [0, 1, 2], model)
        np.testing.assert_allclose(out, 0.0)

    def test_relu_clips_bias(self):
        model = self.make()
        model.b_struct[...] = np.array([1.0, -1.0, 0.5, -0.5])
        out = nlm.scnlm_attribute(np.zeros(4), [0, 1, 2], model)
        np.testing.assert_allclose(out, [1.0, 0.0, 0.5, 0.0])

    def test_matches_direct_arithmetic(self):
        model = self.make(seed=9)
        rng = make_rng(10)
        u = rng.normal(size=4)
        window = [2, 0, 1]
        out = nlm.scnlm_attribute(u, window, model)
        pre = model.t_u @ u + model.b_struct
        for t_mat, t in zip(model.t_ctx, window):
            pre = pre + t_mat @ model.tag_emb[t]
        np.testing.assert_allclose(out, np.maximum(pre, 0.0), atol=1e-12)

    @given(seeds)
    @settings(max_examples=25)
    def test_always_non_negative(self, seed):
        model = self.make(seed=seed)
        rng = make_rng(seed + 1)
        out = nlm.scnlm_attribute(rng.normal(size=4), [0, 2, 1], model)
        assert np.all(out >= 0.0)

    def test_bad_tag_rejected(self):
        model = self.make()
        with pytest.raises(ValueError):
            nlm.scnlm_attribute(np.zeros(4), [0, 1, 9], model)

    def test_wrong_window_length_rejected(self):
        model = self.make()
        with pytest.raises(ValueError):
            nlm.scnlm_attribute(np.zeros(4), [0, 1], model)


class TestSCNLMDistribution:
    def test_zero_params_bias_distribution(self):
        model = nlm.SCNLMParams(5, 3, 3, 2, 1, 1, ["NN"])
        p = nlm.scnlm_distribution([0], [0, 0], np.ones(3), model)
        np.testing.assert_allclose(p, np.full(5, 0.2), atol=1e-15)

    def test_equals_mnlm_with_attribute(self):
        model = nlm.SCNLMParams(6, 4, 4, 3, 2, 1, ["DT", "NN"], rng=make_rng(11))
        rng = make_rng(12)
        u = rng.normal(size=4)
        ctx, window = [1, 3], [0, 1]
        u_hat = nlm.scnlm_attribute(u, window, model)
        np.testing.assert_allclose(
            nlm.scnlm_distribution(ctx, window, u, model),
            nlm.mnlm_distribution(ctx, u_hat, model.core),
            atol=1e-15,
        )

    def test_tag_invariance_when_structure_weights_zero(self):
        model = nlm.SCNLMParams(6, 4, 4, 3, 2, 1, ["DT", "NN", "VB"], rng=make_rng(13))
        for t_mat in model.t_ctx:
            t_mat[...] = 0.0
        model.b_struct[...] = 0.0
        u = make_rng(14).normal(size=4)
        p1 = nlm.scnlm_distribution([1, 2], [0, 1], u, model)
        p2 = nlm.scnlm_distribution([1, 2], [2, 0], u, model)
        np.testing.assert_allclose(p1, p2, atol=0.0)

    def test_gradient_check(self):
        assert scnlm_check(seed=0) < 1e-4

    @given(seeds)
    @settings(max_examples=20)
    def test_distribution_sums_to_one(self, seed):
        rng = make_rng(seed)
        model = nlm.SCNLMParams(7, 3, 3, 2, 2, 1, ["DT", "NN"],
                                rng=make_rng(seed + 1), init_scale=0.8)
        p = nlm.scnlm_distribution(
            [int(rng.integers(0, 7)), int(rng.integers(0, 7))],
            [0, 1], rng.normal(size=3), model,
        )
        assert abs(p.sum() - 1.0) < 1e-12
        assert np.all(p > 0.0)


class TestTraining:
    def test_single_repeated_sentence_memorized(self):
        vocab = random_vocabulary(7, 6, seed=15, scale=0.5)  # V=10 with reserved
        assert vocab.size == 10
        rec = ingest.CaptionRecord("i", ("w0", "w3", "w5", "w1"), ("NN", "NN", "NN", "NN"))
        model = nlm.LBLParams(vocab.size, 6, 2, rng=make_rng(16))
        config = nlm.NLMTrainConfig(context_size=2, epochs=200, learning_rate=0.4, decay=1.0, seed=17)
        log = nlm.train_nlm(model, [rec], None, vocab, config)
        assert log[-1] < 0.05  # per-token NLL near zero, probability near 1

    def test_zero_epochs_no_op(self):
        vocab = random_vocabulary(5, 4, seed=18)
        rec = ingest.CaptionRecord("i", ("w0", "w1"), ("NN", "NN"))
        model = nlm.MNLMParams(vocab.size, 4, 4, 3, 2, rng=make_rng(19))
        before = {n: a.copy() for n, a in model.store.items()}
        config = nlm.NLMTrainConfig(context_size=2, epochs=0, learning_rate=0.1)
        log = nlm.train_nlm(model, [rec], [np.ones(4)], vocab, config)
        assert log == []
        for n, a in model.store.items():
            assert np.array_equal(a, before[n])

    def test_same_seed_identical_params(self):
        world = make_grammar_world(n_contents=2, dim_k=6)
        results = []
        for _ in range(2):
            model = nlm.SCNLMParams(world.vocab.size, 6, 6, 4, 2, 1,
                                    ingest.tag_vocabulary(world.records), rng=make_rng(20))
            config = nlm.NLMTrainConfig(context_size=2, forward_size=1, epochs=3,
                                        learning_rate=0.2, seed=21)
            nlm.train_nlm(model, world.records, world.conditioning, world.vocab, config)
            results.append({n: a.copy() for n, a in model.store.items()})
        for name in results[0]:
            assert np.array_equal(results[0][name], results[1][name])

    def test_missing_conditioning_rejected(self):
        vocab = random_vocabulary(5, 4, seed=22)
        rec = ingest.CaptionRecord("i", ("w0", "w1"), ("NN", "NN"))
        model = nlm.MNLMParams(vocab.size, 4, 4, 3, 2, rng=make_rng(23))
        config = nlm.NLMTrainConfig(context_size=2, epochs=1)
        with pytest.raises(ValueError, match="conditioning"):
            nlm.train_nlm(model, [rec], [None], vocab, config)


class TestPerplexity:
    def test_uniform_model_equals_vocab_size(self):
        vocab = random_vocabulary(7, 4, seed=24)  # V = 10
        model = nlm.LBLParams(vocab.size, 4, 2)
        recs = [ingest.CaptionRecord("i", ("w0", "w4", "w6"), ("NN",) * 3)]
        assert nlm.perplexity(model, recs, None, vocab) == pytest.approx(10.0, abs=1e-9)

    def test_memorized_corpus_near_one(self):
        vocab = random_vocabulary(7, 6, seed=25, scale=0.5)
        rec = ingest.CaptionRecord("i", ("w0", "w3", "w5", "w1"), ("NN",) * 4)
        model = nlm.LBLParams(vocab.size, 6, 2, rng=make_rng(26))
        config = nlm.NLMTrainConfig(context_size=2, epochs=4000, learning_rate=2.0, decay=1.0, seed=27)
        nlm.train_nlm(model, [rec], None, vocab, config)
        assert nlm.perplexity(model, [rec], None, vocab) <= 1.0 + 1e-6

    def test_matches_brute_force_logprob_sum(self):
        vocab = random_vocabulary(6, 4, seed=28)
        model = nlm.LBLParams(vocab.size, 4, 2, rng=make_rng(29), init_scale=0.8)
        recs = [
            ingest.CaptionRecord("a", ("w0", "w2"), ("NN", "NN")),
            ingest.CaptionRecord("b", ("w1", "w4", "w3"), ("NN", "NN", "NN")),
        ]
        total, count = 0.0, 0
        for rec in recs:
            idx = vocab.indices(rec.tokens)
            for pos, target in enumerate(idx):
                ctx = nlm.pad_context(idx, pos, 2, vocab.start_index)
                total += -np.log(nlm.lbl_distribution(ctx, model)[target])
                count += 1
        expected = np.exp(total / count)
        assert nlm.perplexity(model, recs, None, vocab) == pytest.approx(expected, rel=1e-12)

    def test_empty_corpus_rejected(self):
        vocab = random_vocabulary(5, 4, seed=30)
        model = nlm.LBLParams(vocab.size, 4, 2)
        with pytest.raises(ValueError):
            nlm.perplexity(model, [], None, vocab)


class TestPersistence:
    def test_scnlm_round_trip(self, tmp_path):
        world = make_grammar_world(n_contents=2, dim_k=6)
        model = nlm.SCNLMParams(world.vocab.size, 6, 6, 4, 2, 1,
                                ingest.tag_vocabulary(world.records), rng=make_rng(31))
        path = str(tmp_path / "scnlm.bin")
        nlm.save_scnlm(path, model, world.vocab)
        loaded, tokens = nlm.load_scnlm(path)
        assert tokens == world.vocab.tokens
        assert loaded.tags == model.tags
        u = make_rng(32).normal(size=6)
        np.testing.assert_allclose(
            nlm.scnlm_distribution([1, 2], [0, 1], u, loaded),
            nlm.scnlm_distribution([1, 2], [0, 1], u, model),
            atol=1e-15,
        )
