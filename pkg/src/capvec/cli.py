"""Command-line entry point: train, evaluate, generate, analyze.

Subcommands: train-embed, train-scnlm, train-kn, rank, generate, analogy,
pca, gradcheck. Every flag can also come from a flat key=value config file
passed with --config; explicit flags win. Seeds default to a constant so
bare invocations reproduce. Each subcommand that writes an artifact also
writes `<artifact>.runconfig` with the fully resolved settings.
"""

import argparse
import sys

import numpy as np

from . import embedding, generation, ingest, kn, nlm, regularities, retrieval
from .numcore import make_rng, unit_normalize


def _load_config_file(path):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _write_runconfig(out_path, args):
    resolved = {k: v for k, v in sorted(vars(args).items())
                if k not in ("func", "config") and v is not None}
    lines = [f"{k}={v}" for k, v in resolved.items()]
    with open(str(out_path) + ".runconfig", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _require(args, names):
    for name in names:
        if getattr(args, name.replace("-", "_"), None) is None:
            raise ValueError(f"missing required flag --{name}")


def _fmt(x):
    return repr(float(x))


def cmd_train_embed(args):
    _require(args, ["captions", "features", "model-out"])
    features = ingest.load_image_features(args.features)
    if args.embeddings:
        vocab = ingest.load_word_embeddings(args.embeddings)
    else:
        raw = ingest.load_caption_corpus(args.captions)
        vocab = ingest.build_vocabulary(raw, 1, args.dim_k, make_rng(args.seed))
    records = ingest.load_caption_corpus(args.captions, vocab)
    pairs = [(rec.image_id, rec) for rec in records]
    model = embedding.JointModel(vocab, features.dim, margin=args.margin,
                                 encoder=args.encoder, seed=args.seed)
    config = embedding.TrainConfig(batch_size=args.batch, learning_rate=args.lr,
                                   decay=args.decay, epochs=args.epochs, seed=args.seed)
    log = embedding.train_embedding(pairs, features, model, config)
    embedding.save_joint_model(args.model_out, model)
    _write_runconfig(args.model_out, args)
    print(f"trained {args.encoder} embedding: final epoch loss {log[-1]:.6f}")
    return 0


def cmd_train_scnlm(args):
    _require(args, ["captions", "model-in", "model-out"])
    joint = embedding.load_joint_model(args.model_in)
    records = ingest.load_caption_corpus(args.captions, joint.vocab)
    # unit-norm conditioning keeps text-time and image-time vectors comparable
    cond = [
        unit_normalize(joint.encode_caption(joint.vocab.indices(rec.tokens)))
        for rec in records
    ]
    counts = {}
    for rec in records:
        for t in rec.tokens:
            idx = joint.vocab.index_or_unk(t)
            counts[idx] = counts.get(idx, 0) + 1
    model = nlm.SCNLMParams(
        joint.vocab.size, joint.vocab.dim, args.dim_g or joint.vocab.dim,
        args.factors, args.context, args.forward,
        tags=ingest.tag_vocabulary(records), rng=make_rng(args.seed),
        bias=nlm.log_unigram_bias(joint.vocab.size, counts),
        init_scale=args.init_scale,
    )
    config = nlm.NLMTrainConfig(context_size=args.context, forward_size=args.forward,
                                epochs=args.epochs, learning_rate=args.lr,
                                decay=args.decay, seed=args.seed)
    log = nlm.train_nlm(model, records, cond, joint.vocab, config)
    nlm.save_scnlm(args.model_out, model, joint.vocab)
    _write_runconfig(args.model_out, args)
    print(f"trained scnlm: final epoch NLL/token {log[-1]:.6f}")
    return 0


def cmd_train_kn(args):
    _require(args, ["model-out"])
    if args.corpus:
        with open(args.corpus, encoding="utf-8") as fh:
            sentences = [line.split() for line in fh.read().splitlines() if line.strip()]
    elif args.captions:
        records = ingest.load_caption_corpus(args.captions)
        sentences = [list(rec.tokens) for rec in records]
    else:
        raise ValueError("need --captions or --corpus to train the trigram model")
    model = kn.build_kn_trigram(sentences, discount=args.discount)
    kn.save_kn(args.model_out, model)
    _write_runconfig(args.model_out, args)
    print(f"trained kn trigram on {model.n_tokens} tokens, {len(model.trigram)} trigram types")
    return 0


def cmd_rank(args):
    _require(args, ["captions", "features", "model-in"])
    joint = embedding.load_joint_model(args.model_in)
    features = ingest.load_image_features(args.features)
    records = ingest.load_caption_corpus(args.captions, joint.vocab)
    images = [(i, joint.embed_image(v)) for i, v in features.items()]
    captions, gt = [], {}
    for n, rec in enumerate(records):
        cap_id = f"cap{n:05d}"
        captions.append((cap_id, joint.encode_caption(joint.vocab.indices(rec.tokens))))
        gt.setdefault(rec.image_id, []).append(cap_id)
    annotation, search = retrieval.rank_all(images, captions, gt)
    lines = ["direction\tR@1\tR@5\tR@10\tMedr"]
    for res in (annotation, search):
        row = retrieval.metrics_row(res)
        lines.append(res.direction + "\t" + "\t".join(f"{x:.1f}" for x in row))
    table = "\n".join(lines)
    print(table)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(table + "\n")
        _write_runconfig(args.out, args)
    return 0


def cmd_generate(args):
    _require(args, ["captions", "features", "model-in", "scnlm", "kn", "out"])
    joint = embedding.load_joint_model(args.model_in)
    scnlm, _ = nlm.load_scnlm(args.scnlm)
    kn_model = kn.load_kn(args.kn)
    features = ingest.load_image_features(args.features)
    records = ingest.load_caption_corpus(args.captions, joint.vocab)
    stop = ingest.load_stopwords(args.stopwords) if args.stopwords else frozenset()

    config = generation.GenConfig(
        n_concepts=args.concepts, candidate_count=args.candidates,
        return_count=args.top, beam_width=args.beam, w_translation=args.wt,
        w_lm=args.wlm, repetition_gamma=args.gamma, seed=args.seed,
        per_concept=args.per_concept,
    )
    pool = generation.PosTemplatePool.harvest(records)
    word_ids = [joint.vocab.tokens[i] for i in joint.vocab.content_indices()]
    word_index = regularities.EmbeddingIndex(
        word_ids, joint.vocab.embeddings[[joint.vocab.index(t) for t in word_ids]],
        ["word"] * len(word_ids),
    )
    sent_vecs, sent_ids, sent_text = [], [], {}
    for n, rec in enumerate(records):
        sid = f"cap{n:05d}"
        sent_ids.append(sid)
        sent_vecs.append(joint.encode_caption(joint.vocab.indices(rec.tokens)))
        sent_text[sid] = " ".join(rec.tokens)
    sentence_index = regularities.EmbeddingIndex(
        sent_ids, np.asarray(sent_vecs), ["sentence"] * len(sent_ids)
    )
    originals = {}
    for rec in records:
        originals.setdefault(rec.image_id, " ".join(rec.tokens))

    image_ids = [args.image] if args.image else features.ids()
    tsv_parts, report_parts = [], []
    for image_id in image_ids:
        candidates = generation.generate_captions(
            features.get(image_id), joint, scnlm, kn_model,
            word_index, sentence_index, pool, stop, config,
        )
        tsv_parts.append(generation.candidates_tsv(image_id, candidates))
        nearest_id = sentence_index.nearest(joint.embed_image(features.get(image_id)), 1)[0][0]
        report_parts.append(generation.generation_report(
            image_id, originals.get(image_id, "(none)"), sent_text[nearest_id], candidates
        ))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("".join(tsv_parts))
    with open(args.out + ".report.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(report_parts))
    _write_runconfig(args.out, args)
    print(f"wrote {args.out} for {len(image_ids)} image(s)")
    return 0


def cmd_analogy(args):
    _require(args, ["features", "model-in", "image", "minus", "plus"])
    joint = embedding.load_joint_model(args.model_in)
    if joint.encoder != "linear" and not args.force:
        raise ValueError(
            "analogy queries expect a linear-encoder archive; these regularities "
            "are not well observed with an LSTM encoder (pass --force to override)"
        )
    features = ingest.load_image_features(args.features)
    index = regularities.EmbeddingIndex(
        features.ids(),
        np.asarray([joint.embed_image(v) for _, v in features.items()]),
        ["image"] * len(features),
    )
    q = index.get(args.image)
    w_n = unit_normalize(joint.vocab.embeddings[joint.vocab.index(args.minus)])
    w_p = unit_normalize(joint.vocab.embeddings[joint.vocab.index(args.plus)])
    # retrieve a wider pool, resort by distance to its mean, show the top few
    pool_n = max(args.pool, args.top)
    results = regularities.analogy_query(q, w_n, w_p, index, top_n=pool_n,
                                         exclude_id=args.image)
    scores = dict(results)
    resorted = regularities.resort_by_mean([(i, index.get(i)) for i, _ in results])
    print("rank\timage_id\tcosine")
    for rank, item_id in enumerate(resorted[: args.top], start=1):
        print(f"{rank}\t{item_id}\t{scores[item_id]:.6f}")
    print("cosine order: " + " ".join(i for i, _ in results[: args.top]))
    return 0


def cmd_pca(args):
    _require(args, ["features", "model-in", "out"])
    joint = embedding.load_joint_model(args.model_in)
    features = ingest.load_image_features(args.features)
    ids, kinds, vecs = [], [], []
    for image_id, v in features.items():
        ids.append(image_id)
        kinds.append("image")
        vecs.append(unit_normalize(joint.embed_image(v)))
    for word in (args.words.split(",") if args.words else []):
        ids.append(word)
        kinds.append("word")
        vecs.append(unit_normalize(joint.vocab.embeddings[joint.vocab.index(word)]))
    coords, ratios = regularities.pca_project(np.asarray(vecs), components=2)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("id,kind,x,y\n")
        for i, item_id in enumerate(ids):
            fh.write(f"{item_id},{kinds[i]},{_fmt(coords[i, 0])},{_fmt(coords[i, 1])}\n")
    _write_runconfig(args.out, args)
    print(f"explained variance ratios: {ratios[0]:.4f} {ratios[1]:.4f}")
    return 0


def cmd_gradcheck(args):
    from .gradsuite import run_gradient_suite

    failed = False
    for name, err in run_gradient_suite(seed=args.seed):
        status = "PASS" if err < 1e-4 else "FAIL"
        failed = failed or err >= 1e-4
        print(f"{name}: max relative error {err:.3e} {status}")
    return 1 if failed else 0


def build_parser():
    parser = argparse.ArgumentParser(prog="capvec",
                                     description="joint image-caption embedding pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {}

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=fn)
        p.add_argument("--config", help="flat key=value config file; flags take precedence")
        p.add_argument("--seed", type=int, default=13)
        commands[name] = p
        return p

    p = add("train-embed", cmd_train_embed, help="train the joint embedding")
    p.add_argument("--captions")
    p.add_argument("--features")
    p.add_argument("--embeddings", help="pretrained word embedding file (else built from corpus)")
    p.add_argument("--model-out")
    p.add_argument("--dim-k", type=int, default=300)
    p.add_argument("--margin", type=float, default=0.2)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--decay", type=float, default=0.99)
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--encoder", choices=("lstm", "linear"), default="lstm")

    p = add("train-scnlm", cmd_train_scnlm, help="train the structure-content decoder")
    p.add_argument("--captions")
    p.add_argument("--model-in", help="joint embedding archive for conditioning")
    p.add_argument("--model-out")
    p.add_argument("--dim-g", type=int, help="attribute dimension (default: embedding dim)")
    p.add_argument("--factors", type=int, default=100)
    p.add_argument("--context", type=int, default=5)
    p.add_argument("--forward", type=int, default=3)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--decay", type=float, default=0.995)
    p.add_argument("--init-scale", type=float, default=0.3,
                   help="weight init range; the multiplicative family stalls below ~0.2")

    p = add("train-kn", cmd_train_kn, help="train the Kneser-Ney trigram model")
    p.add_argument("--captions")
    p.add_argument("--corpus", help="plain text corpus, one sentence per line")
    p.add_argument("--model-out")
    p.add_argument("--discount", type=float, default=0.75)

    p = add("rank", cmd_rank, help="evaluate bidirectional retrieval")
    p.add_argument("--captions")
    p.add_argument("--features")
    p.add_argument("--model-in")
    p.add_argument("--out")

    p = add("generate", cmd_generate, help="generate and rank captions")
    p.add_argument("--captions")
    p.add_argument("--features")
    p.add_argument("--model-in")
    p.add_argument("--scnlm")
    p.add_argument("--kn")
    p.add_argument("--stopwords")
    p.add_argument("--image", help="generate for one image id (default: all)")
    p.add_argument("--out")
    p.add_argument("--concepts", type=int, default=5)
    p.add_argument("--candidates", type=int, default=1000)
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--beam", type=int, default=8)
    p.add_argument("--wt", type=float, default=1.0)
    p.add_argument("--wlm", type=float, default=0.25)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--per-concept", action="store_true",
                   help="condition on each nearest concept separately, not just the pooled bag")

    p = add("analogy", cmd_analogy, help="multimodal vector arithmetic query")
    p.add_argument("--features")
    p.add_argument("--model-in")
    p.add_argument("--image")
    p.add_argument("--minus")
    p.add_argument("--plus")
    p.add_argument("--top", type=int, default=4)
    p.add_argument("--pool", type=int, default=12,
                   help="retrieved pool size that mean-resort reorders")
    p.add_argument("--force", action="store_true")

    p = add("pca", cmd_pca, help="2-D PCA projection to CSV")
    p.add_argument("--features")
    p.add_argument("--model-in")
    p.add_argument("--words", help="comma-separated words to project alongside images")
    p.add_argument("--out")

    add("gradcheck", cmd_gradcheck, help="finite-difference check of every model gradient")
    return parser, commands


def main(argv=None):
    parser, commands = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            defaults = _load_config_file(args.config)
            subparser = commands[args.command]
            known = {a.dest for a in subparser._actions}
            subparser.set_defaults(**{k: v for k, v in defaults.items() if k in known})
            args = parser.parse_args(argv)
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
