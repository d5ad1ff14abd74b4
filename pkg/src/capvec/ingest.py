"""Data loading: word embeddings, image features, tagged captions, stopwords.

All formats are plain UTF-8 text so fixtures can be written by hand:

  word embeddings   line 1 "V K", then V lines "token f1 ... fK"
  image features    line 1 "D=<int>", then "image_id<TAB>f1 ... fD"
  captions          per line "image_id<TAB>tok1 ... tokN<TAB>tag1 ... tagN"
  stopwords         one token per line

Serializers write the canonical form of each format (floats via repr, so
values round-trip exactly); a canonical file reloads and re-serializes to
identical bytes.

This module also owns the binary model archive used by every trained model:
a JSON manifest (format version, dims, metadata, and per-block name / rows /
cols / byte offset) followed by raw little-endian float64 blocks in manifest
order. Loading verifies every declared shape and that all values are finite.
"""

import json
import struct
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .numcore import init_uniform, make_rng, require_finite

START_TOKEN = "<start>"
END_TOKEN = "<end>"
UNK_TOKEN = "<unk>"
RESERVED_TOKENS = (START_TOKEN, END_TOKEN, UNK_TOKEN)
END_TAG = "<endpos>"

RESERVED_SEED = 0  # fixed seed for reserved-token embedding rows

ARCHIVE_MAGIC = b"CAPVEC-ARCHIVE\n"
ARCHIVE_VERSION = 1


class Vocabulary:
    """Token <-> dense index bijection plus the word embedding table.

    Indices run 0..V-1 in token order; the embedding table has one row per
    token. The reserved tokens <start>, <end> and <unk> are always present.
    """

    def __init__(self, tokens, embeddings):
        tokens = list(tokens)
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        for r in RESERVED_TOKENS:
            if r not in tokens:
                raise ValueError(f"vocabulary is missing reserved token {r!r}")
        emb = require_finite("embedding table", embeddings)
        if emb.ndim != 2 or emb.shape[0] != len(tokens):
            raise ValueError(
                f"embedding table shape {emb.shape} does not match {len(tokens)} tokens"
            )
        self.tokens = tokens
        self.embeddings = emb
        self._index = {t: i for i, t in enumerate(tokens)}

    @property
    def size(self):
        return len(self.tokens)

    @property
    def dim(self):
        return self.embeddings.shape[1]

    def __contains__(self, token):
        return token in self._index

    def index(self, token):
        try:
            return self._index[token]
        except KeyError:
            raise ValueError(f"token {token!r} not in vocabulary") from None

    def index_or_unk(self, token):
        return self._index.get(token, self._index[UNK_TOKEN])

    def indices(self, tokens):
        return [self.index_or_unk(t) for t in tokens]

    @property
    def start_index(self):
        return self._index[START_TOKEN]

    @property
    def end_index(self):
        return self._index[END_TOKEN]

    @property
    def unk_index(self):
        return self._index[UNK_TOKEN]

    def content_indices(self):
        """Indices of all non-reserved tokens, in vocabulary order."""
        reserved = set(RESERVED_TOKENS)
        return [i for i, t in enumerate(self.tokens) if t not in reserved]


@dataclass(frozen=True)
class CaptionRecord:
    """One tagged caption: equal-length token and tag sequences."""

    image_id: str
    tokens: tuple
    tags: tuple

    def __post_init__(self):
        if len(self.tokens) != len(self.tags) or len(self.tokens) < 1:
            raise ValueError(
                f"caption for {self.image_id!r} has {len(self.tokens)} tokens "
                f"but {len(self.tags)} tags"
            )


class FeatureStore:
    """image_id -> D-dimensional feature vector, with a single consistent D."""

    def __init__(self, dim):
        if dim < 1:
            raise ValueError("feature dimension must be positive")
        self.dim = int(dim)
        self._vectors = {}

    def add(self, image_id, vector):
        if image_id in self._vectors:
            raise ValueError(f"duplicate image_id {image_id!r}")
        vec = require_finite(f"features for {image_id!r}", vector).reshape(-1)
        if vec.shape[0] != self.dim:
            raise ValueError(
                f"features for {image_id!r} have {vec.shape[0]} entries, expected {self.dim}"
            )
        self._vectors[image_id] = vec

    def __contains__(self, image_id):
        return image_id in self._vectors

    def __len__(self):
        return len(self._vectors)

    def get(self, image_id):
        try:
            return self._vectors[image_id]
        except KeyError:
            raise ValueError(f"no features for image_id {image_id!r}") from None

    def ids(self):
        return list(self._vectors)

    def items(self):
        return self._vectors.items()


def _fmt(x):
    return repr(float(x))


def load_word_embeddings(path, reserved_seed=RESERVED_SEED):
    """Parse the "V K" text embedding format into a Vocabulary.

    Reserved tokens absent from the file are appended with rows drawn
    uniform [-0.08, 0.08] from a fixed seed, so two loads of the same file
    agree bit for bit.
    """
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].strip():
        raise ValueError(f"{path}: empty embedding file")
    head = lines[0].split()
    if len(head) != 2:
        raise ValueError(f"{path}: line 1 must be '<V> <K>', got {lines[0]!r}")
    declared_v, dim = int(head[0]), int(head[1])
    if declared_v < 1 or dim < 1:
        raise ValueError(f"{path}: V and K must be positive")
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != declared_v:
        raise ValueError(f"{path}: header declares {declared_v} rows, found {len(body)}")

    tokens, rows = [], []
    seen = set()
    for lineno, line in enumerate(body, start=2):
        parts = line.split()
        if len(parts) != dim + 1:
            raise ValueError(
                f"{path}:{lineno}: expected token + {dim} floats, got {len(parts) - 1} values"
            )
        token = parts[0]
        if token in seen:
            raise ValueError(f"{path}:{lineno}: duplicate token {token!r}")
        seen.add(token)
        tokens.append(token)
        rows.append([float(p) for p in parts[1:]])

    table = np.asarray(rows, dtype=np.float64)
    rng = make_rng(reserved_seed)
    for r in RESERVED_TOKENS:
        if r not in seen:
            tokens.append(r)
            table = np.vstack([table, init_uniform(rng, (1, dim))])
    return Vocabulary(tokens, table)


def serialize_word_embeddings(vocab):
    lines = [f"{vocab.size} {vocab.dim}"]
    for token, row in zip(vocab.tokens, vocab.embeddings):
        lines.append(token + " " + " ".join(_fmt(x) for x in row))
    return "\n".join(lines) + "\n"


def load_image_features(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("D="):
        raise ValueError(f"{path}: line 1 must be 'D=<int>'")
    store = FeatureStore(int(lines[0][2:]))
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            image_id, rest = line.split("\t", 1)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: expected 'image_id<TAB>floats'") from None
        values = rest.split()
        if len(values) != store.dim:
            raise ValueError(
                f"{path}:{lineno}: row {image_id!r} has {len(values)} values, expected {store.dim}"
            )
        store.add(image_id, np.array([float(v) for v in values]))
    return store


def serialize_image_features(store):
    lines = [f"D={store.dim}"]
    for image_id, vec in store.items():
        lines.append(image_id + "\t" + " ".join(_fmt(x) for x in vec))
    return "\n".join(lines) + "\n"


def load_caption_corpus(path, vocab=None):
    """Load a tagged caption TSV; tokens are lowercased.

    With a vocabulary, out-of-vocabulary tokens are replaced by <unk>
    (sequence lengths never change); without one, tokens are kept raw,
    which is how a vocabulary gets built from the corpus in the first
    place.
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh.read().splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
            image_id, tok_field, tag_field = parts
            tokens = [t.lower() for t in tok_field.split()]
            tags = tag_field.split()
            if len(tokens) != len(tags):
                raise ValueError(
                    f"{path}:{lineno}: {len(tokens)} tokens but {len(tags)} tags"
                )
            if vocab is not None:
                tokens = [t if t in vocab else UNK_TOKEN for t in tokens]
            records.append(CaptionRecord(image_id, tuple(tokens), tuple(tags)))
    return records


def serialize_caption_corpus(records):
    lines = []
    for rec in records:
        lines.append("\t".join([rec.image_id, " ".join(rec.tokens), " ".join(rec.tags)]))
    return "\n".join(lines) + "\n"


def load_stopwords(path):
    with open(path, encoding="utf-8") as fh:
        return frozenset(t.strip().lower() for t in fh if t.strip())


def build_vocabulary(records, min_count, dim, rng):
    """Vocabulary from corpus frequency, embeddings uniform [-0.08, 0.08].

    Used when no pretrained embedding file is supplied. Tokens below
    min_count are dropped (they will map to <unk> at load time).
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter(t for rec in records for t in rec.tokens)
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted(t for t, c in counts.items() if c >= min_count and t not in RESERVED_TOKENS)
    tokens = kept + list(RESERVED_TOKENS)
    table = init_uniform(rng, (len(tokens), dim))
    return Vocabulary(tokens, table)


def frequency_tagger(records, default_tag="NN"):
    """Most-frequent-tag lookup built from tagged records.

    A fixture helper only; real corpora are expected to arrive pre-tagged.
    """
    per_token = {}
    for rec in records:
        for token, tag in zip(rec.tokens, rec.tags):
            per_token.setdefault(token, Counter())[tag] += 1

    lookup = {t: c.most_common(1)[0][0] for t, c in per_token.items()}

    def tag(token):
        return lookup.get(token.lower(), default_tag)

    return tag


def tag_vocabulary(records):
    """Sorted distinct tags in a corpus, plus the reserved <endpos> tag."""
    tags = sorted({t for rec in records for t in rec.tags} - {END_TAG})
    return tags + [END_TAG]


# ---------------------------------------------------------------------------
# model archive
# ---------------------------------------------------------------------------


def save_archive(path, blocks, dims=None, meta=None):
    """Write named float64 matrices plus a JSON manifest to one file.

    `blocks` maps name -> 1-D or 2-D array; vectors are stored with
    rows=1. Block order in the file follows the mapping order.
    """
    entries = []
    payload = []
    offset = 0
    for name, arr in blocks.items():
        arr = require_finite(f"archive block {name!r}", arr)
        if arr.ndim == 1:
            rows, cols = 1, arr.shape[0]
        elif arr.ndim == 2:
            rows, cols = arr.shape
        else:
            raise ValueError(f"archive block {name!r} must be 1-D or 2-D")
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "rows": rows, "cols": cols, "offset": offset})
        payload.append(raw)
        offset += len(raw)

    manifest = {
        "format_version": ARCHIVE_VERSION,
        "dims": dict(dims or {}),
        "meta": dict(meta or {}),
        "entries": entries,
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(ARCHIVE_MAGIC)
        fh.write(struct.pack("<Q", len(manifest_bytes)))
        fh.write(manifest_bytes)
        for raw in payload:
            fh.write(raw)


def load_archive(path):
    """Read an archive back; returns (blocks, dims, meta).

    Every declared shape is verified against the actual byte extents and
    every value checked finite before anything is returned.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(ARCHIVE_MAGIC))
        if magic != ARCHIVE_MAGIC:
            raise ValueError(f"{path}: not a capvec model archive")
        (mlen,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(mlen).decode("utf-8"))
        data = fh.read()

    if manifest.get("format_version") != ARCHIVE_VERSION:
        raise ValueError(f"{path}: unsupported archive version {manifest.get('format_version')}")
    blocks = {}
    for entry in manifest["entries"]:
        name, rows, cols = entry["name"], int(entry["rows"]), int(entry["cols"])
        start = int(entry["offset"])
        nbytes = rows * cols * 8
        if start < 0 or start + nbytes > len(data):
            raise ValueError(f"{path}: block {name!r} extends past end of file")
        arr = np.frombuffer(data[start : start + nbytes], dtype="<f8").reshape(rows, cols)
        blocks[name] = require_finite(f"archive block {name!r}", arr.copy())
    return blocks, manifest["dims"], manifest["meta"]
