"""Note tokenization, stemming, vocabulary building and tf-idf vectors."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .porter import porter_stem

PHI_MASK = re.compile(r"\[\*\*.*?\*\*\]", re.DOTALL)
_WORD = re.compile(r"[a-z]+")
MIN_TOKEN_LEN = 2


@dataclass(frozen=True)
class SparseVector:
    """Sorted ``(index, weight)`` pairs over a fixed dimension."""

    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.shape != val.shape or idx.ndim != 1:
            raise ValueError("indices and values must be 1-D and equal length")
        if idx.size:
            if np.any(np.diff(idx) <= 0):
                raise ValueError("indices must be strictly increasing")
            if idx[0] < 0 or idx[-1] >= self.dim:
                raise ValueError(f"index out of range for dimension {self.dim}")
        if not np.all(np.isfinite(val)):
            raise ValueError("weights must be finite")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @classmethod
    def zeros(cls, dim: int) -> "SparseVector":
        return cls(np.empty(0, np.int64), np.empty(0), dim)

    @classmethod
    def from_mapping(cls, weights: dict[int, float], dim: int) -> "SparseVector":
        keys = sorted(k for k, v in weights.items() if v != 0.0)
        return cls(np.array(keys, np.int64), np.array([weights[k] for k in keys]), dim)

    def norm(self) -> float:
        if not self.values.size:
            return 0.0
        peak = float(np.abs(self.values).max())
        if peak == 0.0:
            return 0.0
        scaled = self.values / peak          # avoids underflow of tiny weights
        return peak * float(np.sqrt(np.dot(scaled, scaled)))

    def normalized(self) -> "SparseVector":
        n = self.norm()
        if n == 0.0:
            return self
        peak = float(np.abs(self.values).max())
        return SparseVector(self.indices, (self.values / peak) / (n / peak), self.dim)

    def to_dict(self) -> dict[int, float]:
        return {int(i): float(v) for i, v in zip(self.indices, self.values)}

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    def __len__(self):
        return int(self.indices.size)


def tokenize(text: str) -> list[str]:
    """Lowercase alphabetic tokens with PHI masks removed.

    Digits and punctuation separate tokens; tokens shorter than two
    characters are dropped.
    """
    text = PHI_MASK.sub(" ", text).lower()
    return [t for t in _WORD.findall(text) if len(t) >= MIN_TOKEN_LEN]


def preprocess(text: str) -> list[str]:
    """Tokenize then Porter-stem."""
    return [porter_stem(t) for t in tokenize(text)]


def stem_phrase(phrase: str) -> tuple[str, ...]:
    return tuple(porter_stem(t) for t in tokenize(phrase))


def read_term_lines(path) -> list[str]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            out.append(line.lower())
    return out


def default_data_path(name: str) -> Path:
    return Path(str(resources.files("akinotes") / "data" / name))


def load_stopwords(path=None) -> frozenset[str]:
    """Stopwords as a set of stems (the default list when ``path`` is None)."""
    words = read_term_lines(path or default_data_path("stopwords.txt"))
    return frozenset(porter_stem(w) for w in words)


@dataclass(frozen=True)
class Vocabulary:
    """Frozen term index with document frequencies from a fitting corpus."""

    terms: tuple[str, ...]
    df: tuple[int, ...]
    n_docs: int
    index: dict[str, int] = field(init=False, repr=False, compare=False)
    idf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.terms) != len(self.df):
            raise ValueError("terms and df differ in length")
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.terms)})
        if len(self.index) != len(self.terms):
            raise ValueError("duplicate terms in vocabulary")
        df = np.asarray(self.df, dtype=np.float64)
        object.__setattr__(self, "idf", np.log((1.0 + self.n_docs) / (1.0 + df)) + 1.0)

    def __len__(self):
        return len(self.terms)

    def __contains__(self, term):
        return term in self.index

    def save(self, path) -> None:
        lines = [f"#n_docs\t{self.n_docs}"]
        lines += [f"{t}\t{d}\t{w!r}" for t, d, w in zip(self.terms, self.df, self.idf.tolist())]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        rows = Path(path).read_text(encoding="utf-8").splitlines()
        if not rows or not rows[0].startswith("#n_docs\t"):
            raise ValueError(f"{path}: missing #n_docs header")
        n_docs = int(rows[0].split("\t")[1])
        terms, df = [], []
        for line in rows[1:]:
            if not line:
                continue
            term, d, _ = line.split("\t")
            terms.append(term)
            df.append(int(d))
        return cls(tuple(terms), tuple(df), n_docs)


def document_frequencies(docs: Iterable[Sequence[str]]) -> tuple[Counter, int]:
    df: Counter = Counter()
    n = 0
    for doc in docs:
        df.update(set(doc))
        n += 1
    return df, n


def build_vocab(docs: Iterable[Sequence[str]], stopwords=frozenset(), min_df: int = 100) -> Vocabulary:
    """Keep terms with document frequency >= ``min_df`` that are not stopwords.

    Terms are indexed in lexicographic order.
    """
    if min_df < 1:
        raise ValueError("min_df must be >= 1")
    df, n = document_frequencies(docs)
    if n == 0:
        raise ValueError("no documents")
    kept = sorted(t for t, c in df.items() if c >= min_df and t not in stopwords)
    return Vocabulary(tuple(kept), tuple(df[t] for t in kept), n)


def tfidf_vectorize(doc: Sequence[str], vocab: Vocabulary) -> SparseVector:
    """Raw count times smoothed idf, L2-normalized; unknown terms ignored."""
    return tfidf_from_counts(Counter(doc), vocab)


def tfidf_from_counts(counts: dict[str, float], vocab: Vocabulary) -> SparseVector:
    known = {vocab.index[t]: c for t, c in counts.items() if t in vocab.index and c}
    if not known:
        return SparseVector.zeros(len(vocab))
    idx = np.array(sorted(known), dtype=np.int64)
    tf = np.array([known[i] for i in idx], dtype=np.float64)
    vec = SparseVector(idx, tf * vocab.idf[idx], len(vocab))
    return vec.normalized()
