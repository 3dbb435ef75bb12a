"""Bag-of-words corpora with one-hot side features.

A corpus is read from CSV (one document per row) or drawn from the
synthetic product/description generator. Vocabulary terms and categorical
levels are kept in sorted order, so ids do not depend on row order and a
corpus written with :func:`write_csv` reads back unchanged.
"""

from __future__ import annotations

import csv
import logging
import string
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

CONTINUOUS = "continuous"

# (product, description) -> bag of words. Duplicates are kept: a repeated
# word is drawn proportionally more often.
REVIEW_BAGS: dict[tuple[str, str], tuple[str, ...]] = {
    ("burger", "price"): (
        "value", "pricey", "ouch", "steep", "cheap", "value", "reason", "accept",
        "unreason", "unacceptable",
    ),
    ("burger", "quality"): (
        "nasty", "fantastic", "delicious", "tasty", "juicy", "unreason", "unacceptable",
        "reason", "accept", "fresh",
    ),
    ("TV", "price"): (
        "promotion", "affordable", "value", "increase", "expensive", "tasty", "economical",
        "fancy", "okay",
    ),
    ("TV", "quality"): (
        "fabulous", "fantastic", "promising", "sharp", "large", "clear", "eco_friendly",
        "fresh", "pixilated",
    ),
}


class SchemaError(ValueError):
    """A required CSV column is missing or a side value is not in the schema."""


class EmptyCorpusError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip punctuation from token edges."""
    tokens = (tok.strip(string.punctuation) for tok in text.lower().split())
    return [tok for tok in tokens if tok]


def group_key(product: str, description: str) -> str:
    return f"{product}|{description}"


@dataclass(frozen=True)
class Vocabulary:
    terms: tuple[str, ...]

    def __post_init__(self):
        if not self.terms:
            raise ValueError("vocabulary must contain at least one term")
        if any(t == "" for t in self.terms):
            raise ValueError("empty-string term in vocabulary")
        if len(set(self.terms)) != len(self.terms):
            raise ValueError("duplicate terms in vocabulary")

    @cached_property
    def index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.terms)}

    def __len__(self) -> int:
        return len(self.terms)

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "Vocabulary":
        return cls(tuple(sorted(set(tokens))))


@dataclass(frozen=True)
class SideFeature:
    name: str
    levels: tuple[str, ...] | None  # None marks a continuous feature

    @property
    def width(self) -> int:
        return 1 if self.levels is None else len(self.levels)

    def to_json(self):
        return [self.name, CONTINUOUS if self.levels is None else list(self.levels)]

    @classmethod
    def from_json(cls, obj) -> "SideFeature":
        name, levels = obj
        return cls(name, None if levels == CONTINUOUS else tuple(levels))


@dataclass(frozen=True)
class SideSchema:
    features: tuple[SideFeature, ...] = ()

    @property
    def dim(self) -> int:
        return sum(f.width for f in self.features)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def encode(self, values: Mapping[str, str | float]) -> np.ndarray:
        """One-hot encode categorical values and append continuous ones, in schema order."""
        parts = []
        for feat in self.features:
            if feat.name not in values:
                raise SchemaError(f"missing side feature {feat.name!r}")
            raw = values[feat.name]
            if feat.levels is None:
                parts.append(np.array([float(raw)]))
                continue
            onehot = np.zeros(len(feat.levels))
            try:
                onehot[feat.levels.index(str(raw))] = 1.0
            except ValueError:
                raise SchemaError(
                    f"unknown level {raw!r} for side feature {feat.name!r}; "
                    f"known: {list(feat.levels)}"
                ) from None
            parts.append(onehot)
        return np.concatenate(parts) if parts else np.zeros(0)

    def decode(self, side: np.ndarray) -> dict[str, str | float]:
        out: dict[str, str | float] = {}
        pos = 0
        for feat in self.features:
            chunk = side[pos:pos + feat.width]
            pos += feat.width
            if feat.levels is None:
                out[feat.name] = float(chunk[0])
            else:
                out[feat.name] = feat.levels[int(np.argmax(chunk))]
        return out

    def to_json(self):
        return [f.to_json() for f in self.features]

    @classmethod
    def from_json(cls, obj) -> "SideSchema":
        return cls(tuple(SideFeature.from_json(o) for o in obj))


class Document:
    """One document: sorted distinct word ids with their counts, plus side data."""

    __slots__ = ("word_ids", "counts", "side", "label", "group")

    def __init__(self, word_ids, counts, side=None, label=None, group=None):
        self.word_ids = np.asarray(word_ids, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.side = np.zeros(0) if side is None else np.asarray(side, dtype=np.float64)
        self.label = label
        self.group = group
        if self.word_ids.shape != self.counts.shape or self.word_ids.ndim != 1:
            raise ValueError("word_ids and counts must be 1-D arrays of equal length")
        if self.word_ids.size == 0:
            raise ValueError("empty document")
        if np.any(self.counts < 1):
            raise ValueError("word counts must be >= 1")
        if np.any(np.diff(self.word_ids) <= 0):
            raise ValueError("word ids must be strictly increasing")

    @classmethod
    def from_ids(cls, ids: Iterable[int], **kwargs) -> "Document":
        cnt = Counter(int(i) for i in ids)
        keys = sorted(cnt)
        return cls(keys, [cnt[k] for k in keys], **kwargs)

    @property
    def length(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        if not isinstance(other, Document):
            return NotImplemented
        return (
            np.array_equal(self.word_ids, other.word_ids)
            and np.array_equal(self.counts, other.counts)
            and np.array_equal(self.side, other.side)
            and self.label == other.label
            and self.group == other.group
        )

    def __repr__(self):
        return f"Document(N={self.length}, distinct={self.word_ids.size}, group={self.group!r})"


@dataclass
class Corpus:
    vocabulary: Vocabulary
    documents: list[Document]
    side_schema: SideSchema = field(default_factory=SideSchema)
    skipped: int = 0

    def __post_init__(self):
        if not self.documents:
            raise EmptyCorpusError("corpus has no documents")
        V, q = len(self.vocabulary), self.side_schema.dim
        for d, doc in enumerate(self.documents):
            if doc.word_ids[-1] >= V:
                raise ValueError(f"document {d} has word id {doc.word_ids[-1]} >= V={V}")
            if doc.side.size != q:
                raise ValueError(f"document {d} side dimension {doc.side.size} != schema {q}")

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            self.vocabulary == other.vocabulary
            and self.side_schema == other.side_schema
            and self.documents == other.documents
        )

    def __len__(self) -> int:
        return len(self.documents)

    @property
    def M(self) -> int:
        return len(self.documents)

    @property
    def V(self) -> int:
        return len(self.vocabulary)

    @property
    def q(self) -> int:
        return self.side_schema.dim

    @property
    def has_side(self) -> bool:
        return self.q > 0

    @cached_property
    def side_matrix(self) -> np.ndarray:
        if self.q == 0:
            return np.zeros((self.M, 0))
        return np.vstack([doc.side for doc in self.documents])

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.array([doc.length for doc in self.documents], dtype=np.int64)

    @cached_property
    def flat(self) -> "FlatCorpus":
        return FlatCorpus.from_documents(self.documents)

    @property
    def groups(self) -> list:
        return [doc.group for doc in self.documents]

    @property
    def labels(self) -> list:
        return [doc.label for doc in self.documents]

    def subset(self, indices: Sequence[int]) -> "Corpus":
        return Corpus(self.vocabulary, [self.documents[i] for i in indices], self.side_schema)

    def word_frequencies(self) -> np.ndarray:
        freq = np.zeros(self.V)
        np.add.at(freq, self.flat.word_ids, self.flat.counts)
        return freq


@dataclass(frozen=True)
class FlatCorpus:
    """CSR layout of all (document, distinct word, count) entries."""

    indptr: np.ndarray
    word_ids: np.ndarray
    counts: np.ndarray
    doc_of_entry: np.ndarray

    @classmethod
    def from_documents(cls, docs: Sequence[Document]) -> "FlatCorpus":
        sizes = np.array([d.word_ids.size for d in docs], dtype=np.int64)
        indptr = np.concatenate([[0], np.cumsum(sizes)])
        return cls(
            indptr=indptr,
            word_ids=np.concatenate([d.word_ids for d in docs]),
            counts=np.concatenate([d.counts for d in docs]).astype(np.float64),
            doc_of_entry=np.repeat(np.arange(len(docs)), sizes),
        )


def ingest_csv(
    path,
    text_col: str = "text",
    side_cols: Sequence[str] = (),
    label_col: str | None = None,
    group_col: str | None = None,
    continuous_cols: Sequence[str] = (),
    vocabulary: Vocabulary | None = None,
    side_schema: SideSchema | None = None,
) -> Corpus:
    """Read a corpus from a UTF-8 CSV with a header row, one document per row.

    Side columns are one-hot encoded unless listed in ``continuous_cols``.
    Rows whose text has no tokens are skipped; the count is kept on
    ``Corpus.skipped``.

    Pass ``vocabulary`` and ``side_schema`` (typically from a trained model)
    to read a test corpus in the model's coordinates; a word outside the
    vocabulary or an unknown side level then raises :class:`SchemaError`.
    When ``side_schema`` is given, its feature names replace ``side_cols``.
    """
    if side_schema is not None:
        side_cols = side_schema.names
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        required = [text_col, *side_cols, *(c for c in (label_col, group_col) if c)]
        for col in required:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r} (have {header})")
        rows = list(reader)

    kept, skipped = [], 0
    for row in rows:
        toks = tokenize(row[text_col] or "")
        if toks:
            kept.append((toks, row))
        else:
            skipped += 1
    if not kept:
        raise EmptyCorpusError(f"{path}: no rows with non-empty text")
    if skipped:
        logger.info("%s: skipped %d rows with empty text", path, skipped)

    if vocabulary is None:
        vocab = Vocabulary.from_tokens(t for toks, _ in kept for t in toks)
    else:
        vocab = vocabulary
        unseen = sorted({t for toks, _ in kept for t in toks} - vocab.index.keys())
        if unseen:
            raise SchemaError(
                f"{path}: {len(unseen)} words outside the fixed vocabulary, e.g. {unseen[:5]}"
            )
    if side_schema is None:
        schema = SideSchema(tuple(
            SideFeature(col, None if col in continuous_cols
                        else tuple(sorted({row[col] for _, row in kept})))
            for col in side_cols
        ))
    else:
        schema = side_schema
    index = vocab.index
    docs = [
        Document.from_ids(
            (index[t] for t in toks),
            side=schema.encode({c: row[c] for c in side_cols}),
            label=row[label_col] if label_col else None,
            group=row[group_col] if group_col else None,
        )
        for toks, row in kept
    ]
    return Corpus(vocab, docs, schema, skipped=skipped)


def write_csv(corpus: Corpus, path, text_col: str = "text",
              label_col: str = "label", group_col: str = "group") -> None:
    """Write one row per document; label/group columns only when present."""
    has_label = any(d.label is not None for d in corpus.documents)
    has_group = any(d.group is not None for d in corpus.documents)
    header = [text_col, *corpus.side_schema.names]
    if has_label:
        header.append(label_col)
    if has_group:
        header.append(group_col)
    terms = corpus.vocabulary.terms
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for doc in corpus.documents:
            words = [terms[w] for w, c in zip(doc.word_ids, doc.counts) for _ in range(c)]
            row = [" ".join(words), *corpus.side_schema.decode(doc.side).values()]
            if has_label:
                row.append("" if doc.label is None else doc.label)
            if has_group:
                row.append("" if doc.group is None else doc.group)
            writer.writerow(row)


@dataclass
class SyntheticConfig:
    num_docs: int = 2000
    min_len: int = 1
    max_len: int = 5
    seed: int = 0
    bags: Mapping[tuple[str, str], Sequence[str]] = field(default_factory=lambda: dict(REVIEW_BAGS))
    # generative side-data prior and length rate; recorded, never sampled
    gaussian_mu: float = 0.0
    gaussian_sigma: float = 1.0
    xi: float | None = None

    def validate(self):
        if self.num_docs < 1:
            raise ValueError("num_docs must be >= 1")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("need 1 <= min_len <= max_len")
        if not self.bags or any(len(b) == 0 for b in self.bags.values()):
            raise ValueError("bags must be non-empty")
        for words in self.bags.values():
            for w in words:
                if tokenize(w) != [w]:
                    raise ValueError(f"bag word {w!r} is not a single normalized token")


def generate_synthetic(cfg: SyntheticConfig) -> Corpus:
    """Draw the product/description review corpus.

    Each document picks a (product, description) pair uniformly, a length
    uniformly in [min_len, max_len], then that many words uniformly with
    replacement from the pair's bag. Side data is the one-hot of product
    and description; ``group`` is the pair.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    pairs = list(cfg.bags)
    drawn = []
    for _ in range(cfg.num_docs):
        pair = pairs[rng.integers(len(pairs))]
        n = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        bag = cfg.bags[pair]
        drawn.append((pair, [bag[i] for i in rng.integers(len(bag), size=n)]))

    vocab = Vocabulary.from_tokens(w for _, words in drawn for w in words)
    schema = SideSchema((
        SideFeature("product", tuple(sorted({p for (p, _), _ in drawn}))),
        SideFeature("description", tuple(sorted({d for (_, d), _ in drawn}))),
    ))
    index = vocab.index
    docs = [
        Document.from_ids(
            (index[w] for w in words),
            side=schema.encode({"product": p, "description": d}),
            group=group_key(p, d),
        )
        for (p, d), words in drawn
    ]
    return Corpus(vocab, docs, schema)


def kfold_indices(num_docs: int, num_folds: int, seed: int) -> list[np.ndarray]:
    """Shuffle 0..num_docs-1 and cut into num_folds near-equal sorted folds."""
    if num_folds < 2:
        raise ValueError("num_folds must be >= 2")
    if num_docs < num_folds:
        raise ValueError(f"{num_docs} documents cannot fill {num_folds} folds")
    perm = np.random.default_rng(seed).permutation(num_docs)
    return [np.sort(f) for f in np.array_split(perm, num_folds)]


def split(corpus: Corpus, held_out_frac: float | None = None, fold: int | None = None,
          num_folds: int | None = None, seed: int = 0) -> tuple[Corpus, Corpus]:
    """Partition into (train, test).

    Either pass ``held_out_frac`` for a single random hold-out, or
    ``fold``/``num_folds`` to take one fold of a seeded k-fold partition.
    """
    M = corpus.M
    if num_folds is not None:
        if fold is None or not 0 <= fold < num_folds:
            raise ValueError(f"fold {fold} out of range for {num_folds} folds")
        folds = kfold_indices(M, num_folds, seed)
        test_idx = folds[fold]
    else:
        if held_out_frac is None or not 0.0 < held_out_frac < 1.0:
            raise ValueError("held_out_frac must be in (0, 1)")
        if M < 2:
            raise ValueError("need at least 2 documents to split")
        n_test = min(max(int(round(held_out_frac * M)), 1), M - 1)
        test_idx = np.sort(np.random.default_rng(seed).permutation(M)[:n_test])
    mask = np.ones(M, dtype=bool)
    mask[test_idx] = False
    return corpus.subset(np.flatnonzero(mask)), corpus.subset(test_idx)


def assign_labels(corpus: Corpus, mapping: Mapping[str, str]) -> Corpus:
    """Copy of the corpus with each document's label looked up from its group."""
    docs = [
        Document(d.word_ids, d.counts, d.side, label=mapping[d.group], group=d.group)
        for d in corpus.documents
    ]
    return Corpus(corpus.vocabulary, docs, corpus.side_schema, corpus.skipped)
