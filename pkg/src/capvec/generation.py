"""Caption generation: condition, decode along a tag template, rescore.

The procedure for one image:

  1. Build candidate conditioning vectors from its embedding: the image
     embedding itself, plus a bag-of-concepts vector pooled from its
     nearest words and nearest training sentences in the shared space
     (optionally each concept separately).
  2. Repeatedly pick a conditioning vector and a part-of-speech template
     (sampled by corpus frequency, lengths 4..12) and beam-decode the most
     probable word sequence for that template from the structure-content
     model.
  3. Score every distinct candidate with a weighted sum of a translation
     feature (cosine of the candidate's sentence embedding with the image,
     shifted to [0, 1], times a multiplicative penalty for repeated
     non-stopwords) and a fluency feature (length-normalized trigram log
     probability), then return the top few.

Everything is driven by one seeded generator, so a fixed seed reproduces
the output byte for byte.
"""

from dataclasses import dataclass

import numpy as np

from . import kn as kn_mod
from . import nlm
from .numcore import make_rng, unit_normalize
from .embedding import score as cosine_score


@dataclass
class GenConfig:
    n_concepts: int = 5
    candidate_count: int = 1000
    return_count: int = 5
    beam_width: int = 8
    w_translation: float = 1.0
    w_lm: float = 0.25
    repetition_gamma: float = 0.5
    per_concept: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.return_count < 1 or self.candidate_count < self.return_count:
            raise ValueError("need candidate_count >= return_count >= 1")
        if not (0 < self.repetition_gamma <= 1):
            raise ValueError("repetition penalty base must be in (0, 1]")


@dataclass
class Candidate:
    tokens: tuple
    template: tuple
    source: str  # which conditioning vector produced it
    translation: float = 0.0
    lm: float = 0.0
    total: float = 0.0


MIN_TEMPLATE_LEN = 4
MAX_TEMPLATE_LEN = 12


class PosTemplatePool:
    """Distinct tag sequences of length 4..12 with corpus frequencies."""

    def __init__(self, templates):
        self.templates = []
        self.freqs = []
        for tpl, freq in templates:
            tpl = tuple(tpl)
            if not (MIN_TEMPLATE_LEN <= len(tpl) <= MAX_TEMPLATE_LEN):
                raise ValueError(f"template length {len(tpl)} outside [4, 12]")
            if freq < 1:
                raise ValueError("template frequency must be >= 1")
            self.templates.append(tpl)
            self.freqs.append(int(freq))
        if not self.templates:
            raise ValueError("template pool is empty")
        self._cum = np.cumsum(self.freqs)

    @classmethod
    def harvest(cls, records):
        counts = {}
        for rec in records:
            if MIN_TEMPLATE_LEN <= len(rec.tags) <= MAX_TEMPLATE_LEN:
                counts[tuple(rec.tags)] = counts.get(tuple(rec.tags), 0) + 1
        if not counts:
            raise ValueError("no caption has a tag sequence with length in [4, 12]")
        return cls(sorted(counts.items()))

    def __len__(self):
        return len(self.templates)


def sample_pos_template(pool, rng):
    """Draw a template with probability proportional to its frequency."""
    if len(pool) == 0:
        raise ValueError("template pool is empty")
    r = rng.integers(0, pool._cum[-1])
    j = int(np.searchsorted(pool._cum, r, side="right"))
    return pool.templates[j]


def conditioning_candidates(image_embedding, word_index, sentence_index, config):
    """Candidate conditioning vectors for one image.

    Always contains ("image", the embedding itself). The bag-of-concepts
    vector is the unit-normalized mean of the top-N nearest words and the
    top-N nearest training sentences; with config.per_concept each
    neighbour is also offered on its own.
    """
    if len(word_index) == 0 or len(sentence_index) == 0:
        raise ValueError("conditioning needs non-empty word and sentence indexes")
    x = unit_normalize(np.asarray(image_embedding, dtype=np.float64))
    out = [("image", x)]
    concepts = []
    for idx in (word_index, sentence_index):
        for item_id, _s in idx.nearest(x, config.n_concepts):
            concepts.append(idx.get(item_id))
    bag = unit_normalize(np.mean(concepts, axis=0))
    out.append(("bag", bag))
    if config.per_concept:
        for j, c in enumerate(concepts):
            out.append((f"concept_{j}", c))
    return out


def map_decode(scnlm, vocab, u_vec, template, beam_width):
    """Most probable word sequence for a tag template, by beam search.

    Decodes over the non-reserved vocabulary. Each position is conditioned
    on the already-chosen words, the forward tag window from the template
    and the conditioning vector. Ties are broken by token indices, so the
    result is deterministic. A beam at least as wide as V^len(template)
    never prunes and is therefore exact.

    Any non-empty template is accepted here; the [4, 12] length rule is a
    property of the harvested pool, not of the decoder.
    """
    if beam_width < 1:
        raise ValueError("beam width must be >= 1")
    if len(template) < 1:
        raise ValueError("cannot decode an empty template")
    tag_indices = scnlm.tag_indices(template)
    choices = vocab.content_indices()
    folded = nlm.fold_embeddings(scnlm.core.factored)

    beams = [(0.0, ())]
    for pos in range(len(template)):
        window = nlm.forward_tag_window(
            tag_indices, pos, scnlm.forward_size, scnlm.end_tag_index
        )
        expanded = []
        for logp, words in beams:
            ctx = nlm.pad_context(words, pos, scnlm.context_size, vocab.start_index)
            dist = nlm.scnlm_distribution(ctx, window, u_vec, scnlm, folded)
            logs = np.log(np.maximum(dist[choices], 1e-300))
            # per-beam pruning to the beam width keeps expansion linear
            keep = np.argsort(-logs, kind="stable")[:beam_width]
            for j in keep:
                expanded.append((logp + float(logs[j]), words + (choices[j],)))
        expanded.sort(key=lambda item: (-item[0], item[1]))
        beams = expanded[:beam_width]
    best_logp, best_words = beams[0]
    return [vocab.tokens[w] for w in best_words], best_logp


def score_candidate(tokens, image_embedding, joint_model, kn_model, stopwords, config):
    """Component scores for one candidate; returns (translation, lm, total).

    translation = (1 + cosine)/2 times gamma^(c-1) for every non-stopword
    appearing c > 1 times; lm = trigram log probability / token count;
    total = w_translation * translation + w_lm * lm.
    """
    tokens = list(tokens)
    if not tokens:
        raise ValueError("cannot score an empty candidate")
    v = joint_model.encode_caption(joint_model.vocab.indices(tokens))
    cos = cosine_score(image_embedding, v)
    translation = (1.0 + cos) / 2.0
    counts = {}
    for t in tokens:
        if t not in stopwords:
            counts[t] = counts.get(t, 0) + 1
    for c in counts.values():
        if c > 1:
            translation *= config.repetition_gamma ** (c - 1)
    lm = kn_mod.kn_logprob(kn_model, tokens) / len(tokens)
    total = config.w_translation * translation + config.w_lm * lm
    return translation, lm, total


def generate_captions(image_feature, joint_model, scnlm, kn_model,
                      word_index, sentence_index, pool, stopwords, config):
    """Generate, score and rank captions for one image's feature vector.

    Exactly config.candidate_count decodes are drawn (conditioning vector
    uniform, template by frequency); duplicates collapse before ranking.
    Returns the top return_count distinct candidates sorted by total score,
    ties broken lexicographically on tokens.
    """
    if scnlm is None or kn_model is None or joint_model is None:
        missing = [n for n, m in
                   (("joint", joint_model), ("scnlm", scnlm), ("kn", kn_model)) if m is None]
        raise ValueError(f"missing model(s): {', '.join(missing)}")
    x = joint_model.embed_image(image_feature)
    cond = conditioning_candidates(x, word_index, sentence_index, config)
    rng = make_rng(config.seed)

    seen = {}
    order = []
    decoded = {}  # decoding is deterministic per (conditioning, template)
    for _ in range(config.candidate_count):
        which = int(rng.integers(0, len(cond)))
        tag, u = cond[which]
        template = sample_pos_template(pool, rng)
        cache_key = (which, template)
        if cache_key not in decoded:
            decoded[cache_key] = map_decode(
                scnlm, joint_model.vocab, u, template, config.beam_width
            )
        tokens, _logp = decoded[cache_key]
        key = tuple(tokens)
        if key not in seen:
            seen[key] = Candidate(key, tuple(template), tag)
            order.append(key)

    scored = []
    for key in order:
        cand = seen[key]
        cand.translation, cand.lm, cand.total = score_candidate(
            cand.tokens, x, joint_model, kn_model, stopwords, config
        )
        scored.append(cand)
    scored.sort(key=lambda c: (-c.total, c.tokens))
    return scored[: config.return_count]


def candidates_tsv(image_id, candidates):
    """TSV lines: image_id, rank, total, translation, lm, caption."""
    lines = []
    for rank, c in enumerate(candidates, start=1):
        lines.append("\t".join([
            image_id, str(rank), repr(c.total), repr(c.translation), repr(c.lm),
            " ".join(c.tokens),
        ]))
    return "\n".join(lines) + "\n"


def generation_report(image_id, original, nearest_sentence, candidates):
    """Human-readable block: original, nearest training sentence, samples."""
    lines = [
        f"image: {image_id}",
        f"  original: {original}",
        f"  nearest training sentence: {nearest_sentence}",
        "  samples:",
    ]
    for rank, c in enumerate(candidates, start=1):
        lines.append(f"    {rank}. {' '.join(c.tokens)}  (total {c.total:.4f})")
    return "\n".join(lines) + "\n"
