"""Bag-of-words / bag-of-CUIs feature matrices aligned with stay labels."""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .concepts import ConceptLexicon, cui_sequence, extract_cuis, filter_semantic_types
from .textprep import SparseVector, Vocabulary, build_vocab, preprocess, tfidf_from_counts

MATRIX_MAGIC = "# akinotes-matrix v1"


class FeatureSet(str, enum.Enum):
    WORDS = "Words"
    CUIS = "Cuis"
    WORDS_PLUS_CUIS = "WordsPlusCuis"


def assemble(word_vec: SparseVector, cui_vec: SparseVector, kind: FeatureSet,
             n_words: int | None = None, n_cuis: int | None = None) -> SparseVector:
    """One row of the requested feature set.

    The hybrid set concatenates CUI coordinates after the word block and
    re-normalizes to unit length.
    """
    kind = FeatureSet(kind)
    if n_words is not None and word_vec.dim != n_words:
        raise ValueError(f"word vector has dimension {word_vec.dim}, vocabulary has {n_words}")
    if n_cuis is not None and cui_vec.dim != n_cuis:
        raise ValueError(f"CUI vector has dimension {cui_vec.dim}, vocabulary has {n_cuis}")
    if kind is FeatureSet.WORDS:
        return word_vec
    if kind is FeatureSet.CUIS:
        return cui_vec
    offset = word_vec.dim
    joined = SparseVector(
        np.concatenate([word_vec.indices, cui_vec.indices + offset]),
        np.concatenate([word_vec.values, cui_vec.values]),
        word_vec.dim + cui_vec.dim,
    )
    return joined.normalized()


@dataclass
class FeatureMatrix:
    X: sp.csr_matrix
    row_ids: list[str]
    labels: np.ndarray
    feature_set: FeatureSet

    def __post_init__(self):
        self.X = sp.csr_matrix(self.X, dtype=np.float64)
        self.X.sort_indices()
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (self.X.shape[0] == len(self.row_ids) == len(self.labels)):
            raise ValueError("rows, row_ids and labels differ in length")
        self.feature_set = FeatureSet(self.feature_set)

    @property
    def dimension(self) -> int:
        return self.X.shape[1]

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @classmethod
    def from_rows(cls, rows: Sequence[SparseVector], row_ids, labels, feature_set, dim=None) -> "FeatureMatrix":
        if dim is None:
            dims = {r.dim for r in rows}
            if len(dims) > 1:
                raise ValueError(f"rows have mixed dimensions {sorted(dims)}")
            dim = dims.pop() if dims else 0
        elif any(r.dim != dim for r in rows):
            raise ValueError("row dimension differs from matrix dimension")
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(r) for r in rows])
        idx = np.concatenate([r.indices for r in rows]) if rows else np.empty(0, np.int64)
        val = np.concatenate([r.values for r in rows]) if rows else np.empty(0)
        X = sp.csr_matrix((val, idx, indptr), shape=(len(rows), dim))
        return cls(X, list(row_ids), labels, feature_set)

    def row(self, i: int) -> SparseVector:
        lo, hi = self.X.indptr[i], self.X.indptr[i + 1]
        return SparseVector(self.X.indices[lo:hi], self.X.data[lo:hi], self.dimension)

    @property
    def rows(self) -> list[SparseVector]:
        return [self.row(i) for i in range(self.n_rows)]

    def take(self, positions) -> "FeatureMatrix":
        positions = np.asarray(positions, dtype=np.int64)
        return FeatureMatrix(self.X[positions], [self.row_ids[i] for i in positions],
                             self.labels[positions], self.feature_set)

    def subset(self, row_ids) -> "FeatureMatrix":
        where = {r: i for i, r in enumerate(self.row_ids)}
        return self.take([where[r] for r in row_ids])

    def save(self, path) -> None:
        lines = [MATRIX_MAGIC, f"dims {self.n_rows} {self.dimension} feature_set {self.feature_set.value}"]
        for i, rid in enumerate(self.row_ids):
            r = self.row(i)
            cells = " ".join(f"{j}:{w!r}" for j, w in zip(r.indices.tolist(), r.values.tolist()))
            lines.append(f"{rid} {int(self.labels[i])} {cells}".rstrip())
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "FeatureMatrix":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != MATRIX_MAGIC:
            raise ValueError(f"{path}: not a feature matrix file")
        head = lines[1].split()
        n, dim, kind = int(head[1]), int(head[2]), head[4]
        rows, ids, labels = [], [], []
        for line in lines[2:2 + n]:
            parts = line.split()
            ids.append(parts[0])
            labels.append(int(parts[1]))
            cells = [c.split(":") for c in parts[2:]]
            rows.append(SparseVector([int(a) for a, _ in cells], [float(b) for _, b in cells], dim))
        return cls.from_rows(rows, ids, labels, kind, dim)


def _bag(tokens, lexicon, allowlist):
    bag = extract_cuis(tokens, lexicon)
    return filter_semantic_types(bag, lexicon, allowlist) if allowlist else bag


@dataclass
class Featurizer:
    """Vocabularies fitted on a training corpus, reusable on any split."""

    word_vocab: Vocabulary
    cui_vocab: Vocabulary
    lexicon: ConceptLexicon
    allowlist: tuple = ()               # semantic types kept; empty keeps all
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def fit(cls, texts: Sequence[str], lexicon: ConceptLexicon, stopwords=frozenset(),
            min_df: int = 100, cui_min_df: int | None = None, allowlist=()) -> "Featurizer":
        allowlist = tuple(allowlist)
        tokens = [preprocess(t) for t in texts]
        word_vocab = build_vocab(tokens, stopwords, min_df)
        bags = [_bag(t, lexicon, allowlist) for t in tokens]
        cui_vocab = build_vocab(bags, frozenset(), cui_min_df or min_df)
        return cls(word_vocab, cui_vocab, lexicon, allowlist)

    def vectors(self, text: str) -> tuple[SparseVector, SparseVector]:
        hit = self._cache.get(text)
        if hit is None:
            tokens = preprocess(text)
            words = tfidf_from_counts(Counter(tokens), self.word_vocab)
            cuis = tfidf_from_counts(_bag(tokens, self.lexicon, self.allowlist), self.cui_vocab)
            hit = self._cache[text] = (words, cuis)
        return hit

    def id_sequences(self, text: str) -> tuple[list[int], list[int]]:
        """In-vocabulary word and CUI ids in text order, shifted by one for the pad id."""
        tokens = preprocess(text)
        words = [self.word_vocab.index[t] + 1 for t in tokens if t in self.word_vocab.index]
        cuis = [self.cui_vocab.index[c] + 1 for c in cui_sequence(tokens, self.lexicon, self.allowlist)
                if c in self.cui_vocab.index]
        return words, cuis

    def transform(self, texts: Sequence[str], row_ids, labels, kind: FeatureSet) -> FeatureMatrix:
        kind = FeatureSet(kind)
        rows = []
        for text in texts:
            w, c = self.vectors(text)
            rows.append(assemble(w, c, kind, len(self.word_vocab), len(self.cui_vocab)))
        dim = {FeatureSet.WORDS: len(self.word_vocab), FeatureSet.CUIS: len(self.cui_vocab)}.get(
            kind, len(self.word_vocab) + len(self.cui_vocab))
        return FeatureMatrix.from_rows(rows, row_ids, labels, kind, dim)

    def feature_names(self, kind: FeatureSet) -> list[str]:
        kind = FeatureSet(kind)
        if kind is FeatureSet.WORDS:
            return list(self.word_vocab.terms)
        if kind is FeatureSet.CUIS:
            return list(self.cui_vocab.terms)
        return list(self.word_vocab.terms) + list(self.cui_vocab.terms)
