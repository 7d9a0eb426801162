"""Dictionary-based concept (CUI) extraction over stemmed token streams.

A lexicon maps stemmed phrases to a CUI and a semantic type.  Matching is
a greedy left-to-right longest match; a matched span is consumed, so
matches never overlap.
"""

from __future__ import annotations

import csv
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .textprep import SparseVector, Vocabulary, stem_phrase, tfidf_from_counts

CUI_PATTERN = re.compile(r"^(C\d+|CUI\d+)$")

CuiBag = Counter


@dataclass(frozen=True)
class ConceptEntry:
    cui: str
    semantic_type: str


@dataclass(frozen=True)
class ConceptLexicon:
    entries: dict[tuple[str, ...], ConceptEntry]
    max_len: int = field(init=False)
    semantic_types: dict[str, str] = field(init=False, repr=False)

    def __post_init__(self):
        types: dict[str, str] = {}
        for phrase, entry in self.entries.items():
            if not phrase:
                raise ValueError("empty term sequence in lexicon")
            if not CUI_PATTERN.match(entry.cui):
                raise ValueError(f"malformed CUI {entry.cui!r}")
            prev = types.setdefault(entry.cui, entry.semantic_type)
            if prev != entry.semantic_type:
                raise ValueError(f"{entry.cui} has conflicting semantic types {prev!r}, {entry.semantic_type!r}")
        object.__setattr__(self, "max_len", max((len(p) for p in self.entries), default=0))
        object.__setattr__(self, "semantic_types", types)

    def __len__(self):
        return len(self.entries)

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[str, str, str]]) -> "ConceptLexicon":
        """Build from ``(surface_term, cui, semantic_type)``; surfaces are stemmed."""
        entries: dict[tuple[str, ...], ConceptEntry] = {}
        for surface, cui, stype in rows:
            phrase = stem_phrase(surface)
            if not phrase:
                raise ValueError(f"surface term {surface!r} has no tokens")
            entry = ConceptEntry(cui, stype)
            if entries.get(phrase, entry) != entry:
                raise ValueError(f"phrase {' '.join(phrase)!r} maps to both {entries[phrase].cui} and {cui}")
            entries[phrase] = entry
        return cls(entries)

    @classmethod
    def load(cls, path) -> "ConceptLexicon":
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            for lineno, rec in enumerate(csv.reader(fh, delimiter="\t"), start=1):
                if not rec or rec[0].startswith("#"):
                    continue
                if len(rec) != 3:
                    raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
                rows.append((rec[0], rec[1].strip(), rec[2].strip()))
        return cls.from_rows(rows)


def match_concepts(tokens: Sequence[str], lexicon: ConceptLexicon) -> list[tuple[int, int, str]]:
    """Non-overlapping ``(start, end, cui)`` matches in token order."""
    out = []
    i, n = 0, len(tokens)
    while i < n:
        for length in range(min(lexicon.max_len, n - i), 0, -1):
            entry = lexicon.entries.get(tuple(tokens[i:i + length]))
            if entry is not None:
                out.append((i, i + length, entry.cui))
                i += length
                break
        else:
            i += 1
    return out


def extract_cuis(tokens: Sequence[str], lexicon: ConceptLexicon) -> CuiBag:
    return Counter(cui for _, _, cui in match_concepts(tokens, lexicon))


def cui_sequence(tokens: Sequence[str], lexicon: ConceptLexicon, allowlist=()) -> list[str]:
    """CUIs in order of appearance, optionally restricted by semantic type."""
    allow = set(allowlist)
    seq = [cui for _, _, cui in match_concepts(tokens, lexicon)]
    if allow:
        seq = [c for c in seq if lexicon.semantic_types[c] in allow]
    return seq


def filter_semantic_types(bag: CuiBag, lexicon: ConceptLexicon, allowlist) -> CuiBag:
    allow = set(allowlist)
    for cui in bag:
        if cui not in lexicon.semantic_types:
            raise KeyError(f"CUI {cui} not in lexicon")
    if not allow:
        return Counter(bag)
    return Counter({c: n for c, n in bag.items() if lexicon.semantic_types[c] in allow})


def cui_tfidf_vectorize(bag: CuiBag, cui_vocab: Vocabulary) -> SparseVector:
    return tfidf_from_counts(bag, cui_vocab)


def write_lexicon(path, rows: Iterable[tuple[str, str, str]]) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        for row in rows:
            w.writerow(row)
