#!/usr/bin/env python3
"""End-to-end demo on a synthetic ten-image world.

Builds the world, writes its data files, trains all three models through
the CLI, evaluates retrieval, generates captions and runs an analogy
query, leaving every artifact under --out for inspection.

    python3 scripts/demo_pipeline.py --out runs/demo
"""

import argparse
import pathlib
import sys

from capvec import cli, ingest
from capvec.synthetic import make_toy_caption_world


def sh(argv):
    print("$ capvec " + " ".join(argv))
    code = cli.main(argv)
    if code != 0:
        sys.exit(code)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/demo")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world = make_toy_caption_world(seed=args.seed)

    captions = out / "captions.tsv"
    captions.write_text(ingest.serialize_caption_corpus(world.records), encoding="utf-8")
    features = out / "features.txt"
    features.write_text(ingest.serialize_image_features(world.features), encoding="utf-8")
    embeddings = out / "embeddings.txt"
    embeddings.write_text(ingest.serialize_word_embeddings(world.vocab), encoding="utf-8")
    stopwords = out / "stopwords.txt"
    stopwords.write_text("the\n", encoding="utf-8")

    joint = out / "joint.bin"
    sh(["train-embed", "--captions", str(captions), "--features", str(features),
        "--embeddings", str(embeddings), "--model-out", str(joint),
        "--epochs", "400", "--lr", "0.5", "--batch", "5", "--decay", "0.997",
        "--seed", str(args.seed)])

    sh(["rank", "--captions", str(captions), "--features", str(features),
        "--model-in", str(joint), "--out", str(out / "rank.tsv")])

    scnlm = out / "scnlm.bin"
    sh(["train-scnlm", "--captions", str(captions), "--model-in", str(joint),
        "--model-out", str(scnlm), "--context", "3", "--forward", "1",
        "--factors", "16", "--epochs", "1000", "--lr", "0.05", "--decay", "0.9995",
        "--seed", str(args.seed)])

    kn = out / "kn.bin"
    sh(["train-kn", "--captions", str(captions), "--model-out", str(kn)])

    sh(["generate", "--captions", str(captions), "--features", str(features),
        "--model-in", str(joint), "--scnlm", str(scnlm), "--kn", str(kn),
        "--stopwords", str(stopwords), "--candidates", "1000", "--top", "5", "--per-concept",
        "--seed", str(args.seed), "--out", str(out / "generated.tsv")])

    sh(["pca", "--features", str(features), "--model-in", str(joint),
        "--words", ",".join(world.records[0].tokens), "--out", str(out / "pca.csv")])

    print(f"\nartifacts under {out}/")
    print((out / "generated.tsv.report.txt").read_text(encoding="utf-8"))


if __name__ == "__main__":
    main()
