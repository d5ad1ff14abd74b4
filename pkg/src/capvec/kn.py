"""Interpolated Kneser-Ney trigram language model.

Used as the fluency feature when ranking generated captions. A single
absolute discount D is subtracted from every observed trigram count and
the freed mass is spread over a bigram distribution built from
continuation counts (how many distinct left contexts a bigram was seen
in), which itself backs off the same way to a continuation unigram and
finally to a uniform floor over the event vocabulary. Every conditional
therefore sums to exactly 1 and assigns nonzero mass to every token,
including <unk>, whenever D > 0.

Counting convention: each sentence is padded with two <start> tokens and
one <end>; the trigram table is primary, and the stored bigram/unigram
tables are its prefix marginals, so sum-consistency holds by construction.
The event vocabulary (what can be predicted) is every corpus token plus
<end> and <unk>; <start> appears only in contexts.
"""

import math
from collections import Counter

import numpy as np

from . import ingest
from .ingest import END_TOKEN, START_TOKEN, UNK_TOKEN


class TrigramCounts:
    """Count tables plus the discount; immutable once built."""

    def __init__(self, trigram, n_tokens, discount, event_vocab):
        if not (0 <= discount < 1):
            raise ValueError("discount must lie in [0, 1)")
        self.discount = float(discount)
        self.trigram = Counter(trigram)
        self.n_tokens = int(n_tokens)
        self.event_vocab = sorted(event_vocab)
        self._event_set = set(self.event_vocab)

        self.bigram = Counter()
        for (a, b, _c), n in self.trigram.items():
            self.bigram[(a, b)] += n
        self.unigram = Counter()
        for (a, _b), n in self.bigram.items():
            self.unigram[a] += n

        # continuation tables: distinct-context type counts
        left_contexts = {}
        for (a, b, c) in self.trigram:
            left_contexts.setdefault((b, c), set()).add(a)
        self.cont_bigram = Counter({bc: len(us) for bc, us in left_contexts.items()})
        self.cont_mid_total = Counter()
        self.types_after_mid = Counter()
        for (b, c), n in self.cont_bigram.items():
            self.cont_mid_total[b] += n
            self.types_after_mid[b] += 1
        self.types_after_ctx = Counter()
        for (a, b, _c) in self.trigram:
            self.types_after_ctx[(a, b)] += 1
        self.cont_uni = Counter()
        for (_b, c) in self.cont_bigram:
            self.cont_uni[c] += 1
        self.cont_uni_total = sum(self.cont_uni.values())
        self.n_uni_types = len(self.cont_uni)

    def map_token(self, token):
        return token if token in self._event_set or token == START_TOKEN else UNK_TOKEN

    def prob_unigram(self, w):
        d = self.discount
        v = len(self.event_vocab)
        num = max(self.cont_uni.get(w, 0) - d, 0.0) + d * self.n_uni_types / v
        return num / self.cont_uni_total

    def prob_bigram(self, w, b):
        total = self.cont_mid_total.get(b, 0)
        if total == 0:
            return self.prob_unigram(w)
        d = self.discount
        seen = max(self.cont_bigram.get((b, w), 0) - d, 0.0)
        backoff = d * self.types_after_mid.get(b, 0) * self.prob_unigram(w)
        return (seen + backoff) / total

    def prob(self, w, a, b):
        """P(w | a, b) under interpolated Kneser-Ney smoothing."""
        a, b, w = self.map_token(a), self.map_token(b), self.map_token(w)
        total = self.bigram.get((a, b), 0)
        if total == 0:
            return self.prob_bigram(w, b)
        d = self.discount
        seen = max(self.trigram.get((a, b, w), 0) - d, 0.0)
        backoff = d * self.types_after_ctx.get((a, b), 0) * self.prob_bigram(w, b)
        return (seen + backoff) / total


def build_kn_trigram(corpus, discount=0.75, extra_vocab=()):
    """Count a corpus of token sequences into a TrigramCounts model.

    Sentences are padded with two <start> and one <end>. `extra_vocab`
    widens the event vocabulary (useful to pre-register the generator's
    word list so its candidates are never out of vocabulary).
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("cannot build a language model from an empty corpus")
    trigram = Counter()
    n_tokens = 0
    vocab = {END_TOKEN, UNK_TOKEN}
    vocab.update(extra_vocab)
    for sent in corpus:
        sent = list(sent)
        if not sent:
            raise ValueError("corpus contains an empty sentence")
        vocab.update(sent)
        padded = [START_TOKEN, START_TOKEN] + sent + [END_TOKEN]
        n_tokens += len(sent)
        for i in range(2, len(padded)):
            trigram[(padded[i - 2], padded[i - 1], padded[i])] += 1
    vocab.discard(START_TOKEN)
    return TrigramCounts(trigram, n_tokens, discount, vocab)


def kn_logprob(model, sentence):
    """Sum of log P(w | two-word context) over the sentence plus <end>.

    Tokens outside the model vocabulary are scored as <unk>. Finite for
    every input when the discount is positive.
    """
    sentence = list(sentence)
    if not sentence:
        raise ValueError("cannot score an empty sentence")
    a, b = START_TOKEN, START_TOKEN
    total = 0.0
    for w in sentence + [END_TOKEN]:
        w = model.map_token(w)
        total += math.log(model.prob(w, a, b))
        a, b = b, w
    return total


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_kn(path, model):
    tokens = sorted(set(model.event_vocab) | {START_TOKEN})
    index = {t: i for i, t in enumerate(tokens)}
    rows = sorted(
        (index[a], index[b], index[c], n) for (a, b, c), n in model.trigram.items()
    )
    table = np.asarray(rows, dtype=np.float64).reshape(len(rows), 4)
    blocks = {"trigram_counts": table}
    dims = {"V": len(model.event_vocab)}
    meta = {
        "kind": "kn",
        "tokens": tokens,
        "event_vocab": model.event_vocab,
        "discount": model.discount,
        "n_tokens": model.n_tokens,
    }
    ingest.save_archive(path, blocks, dims, meta)


def load_kn(path):
    blocks, _dims, meta = ingest.load_archive(path)
    if meta.get("kind") != "kn":
        raise ValueError(f"{path}: archive does not hold a Kneser-Ney model")
    tokens = meta["tokens"]
    trigram = Counter()
    for ia, ib, ic, n in blocks["trigram_counts"]:
        trigram[(tokens[int(ia)], tokens[int(ib)], tokens[int(ic)])] = int(n)
    return TrigramCounts(trigram, meta["n_tokens"], meta["discount"], meta["event_vocab"])
