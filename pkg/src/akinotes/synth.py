"""Seeded synthetic ICU corpus with known AKI labels.

Writes ``stays.csv``, ``notes.csv``, ``labs.csv`` (the ingest schemas),
``lexicon.tsv`` and ``truth.csv``.  Every creatinine series is checked
against :func:`akinotes.kdigo.assess` so the files always re-derive the
intended label.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .ingest import LABS_COLUMNS, NOTES_COLUMNS, STAYS_COLUMNS, load_exclusion_terms
from .kdigo import AkiStatus, CreatinineSeries, assess
from .porter import porter_stem
from .textprep import load_stopwords

FILLER_WORDS = (
    "patient pain stable noted given continue monitor plan overnight family "
    "pressure heart rate breath sounds clear abdomen soft tender afebrile alert "
    "oriented denies nausea chest xray lines tube sedation weaned extubated "
    "ambulating tolerating diet skin intact wound dressing dry warm sats room "
    "cough secretions suction vent settings mode assessment neuro labs pending"
).split()

DEFAULT_SIGNAL_TERMS = {
    # term: (P(term | AKI), P(term | no AKI))
    "lasix": (0.55, 0.05),
    "swan": (0.45, 0.04),
    "cabg": (0.50, 0.05),
    "insulin": (0.50, 0.08),
    "incisional": (0.40, 0.03),
    "pneumothorax": (0.40, 0.04),
    "labile": (0.45, 0.05),
    "urosepsis": (0.35, 0.02),
    "vasopressin": (0.45, 0.04),
    "levophed": (0.50, 0.06),
    "ambulating": (0.05, 0.35),
    "tolerating": (0.08, 0.40),
}

SEMANTIC_TYPES = ("fndg", "dsyn", "sosy", "phsu", "topp", "bpoc")
ETHNICITIES = ("WHITE", "BLACK", "HISPANIC", "ASIAN", "OTHER", "UNKNOWN")
_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass
class SynthConfig:
    n_stays: Optional[int] = 2000
    n_patients: int = 1500              # used when n_stays is None
    stays_per_patient: tuple[float, ...] = (0.78, 0.16, 0.06)   # P(1), P(2), P(3)
    prevalence: float = 0.167
    signal_terms: dict = field(default_factory=lambda: dict(DEFAULT_SIGNAL_TERMS))
    vocab_size: int = 400
    note_length: tuple[int, int] = (60, 160)
    notes_per_stay: tuple[int, int] = (1, 4)
    lexicon_fraction: float = 0.3       # background words that carry a CUI
    n_phrases: int = 40                 # two-word lexicon phrases
    phrase_rate: float = 0.02           # per-token chance of emitting a phrase
    phi_rate: float = 0.03
    minor_fraction: float = 0.0
    other_only_fraction: float = 0.0
    kidney_mention_fraction: float = 0.0
    day1_aki_fraction: float = 0.0
    late_note_rate: float = 0.2         # chance of an extra note after day 1
    max_attempts: int = 200
    seed: int = 0

    def __post_init__(self):
        self.signal_terms = {k: tuple(v) for k, v in self.signal_terms.items()}
        for term, probs in self.signal_terms.items():
            if len(probs) != 2 or not all(0.0 <= p <= 1.0 for p in probs):
                raise ValueError(f"signal term {term!r} needs two probabilities in [0, 1]")
        if not (0.0 < self.prevalence < 1.0):
            raise ValueError("prevalence must be in (0, 1)")
        for name in ("lexicon_fraction", "phrase_rate", "phi_rate", "minor_fraction",
                     "other_only_fraction", "kidney_mention_fraction", "day1_aki_fraction",
                     "late_note_rate"):
            if not (0.0 <= getattr(self, name) <= 1.0):
                raise ValueError(f"{name} must be in [0, 1]")
        self.stays_per_patient = tuple(self.stays_per_patient)
        self.note_length = tuple(self.note_length)
        self.notes_per_stay = tuple(self.notes_per_stay)


@dataclass
class SynthTables:
    stays: list[tuple]
    notes: list[tuple]
    labs: list[tuple]
    lexicon: list[tuple[str, str, str]]
    truth: list[tuple[str, str]]


def _pseudo_words(rng, n, taken_stems):
    words = []
    while len(words) < n:
        k = int(rng.integers(2, 4))
        w = "".join(rng.choice(list(_CONSONANTS)) + rng.choice(list(_VOWELS)) for _ in range(k))
        w += rng.choice(list(_CONSONANTS))
        stem = porter_stem(w)
        if stem in taken_stems:
            continue
        taken_stems.add(stem)
        words.append(w)
    return words


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _round2(x: float) -> float:
    return float(_fmt(x))


class _SeriesMaker:
    def __init__(self, rng):
        self.rng = rng

    def _times(self):
        rng = self.rng
        n1 = int(rng.integers(1, 4))
        day1 = sorted(set(_round2(t) for t in rng.uniform(0.5, 19.5, size=n1 - 1)))
        day1.append(_round2(rng.uniform(20.0, 24.0)))
        n2 = int(rng.integers(2, 6))
        later = sorted(set(_round2(t) for t in rng.uniform(24.5, 72.0, size=n2)))
        return day1, later

    def _quiet(self, b, n):
        # rises stay <= 0.25 mg/dL and below 1.45 x baseline
        c = math.floor(min(0.25, 0.44 * b) * 100) / 100
        return [_round2(b + self.rng.uniform(0.0, c)) for _ in range(n)]

    def make(self, status: AkiStatus):
        rng = self.rng
        b = _round2(rng.uniform(0.6, 1.3))
        day1, later = self._times()
        d1_vals = [b] + self._quiet(b, len(day1) - 1)
        rng.shuffle(d1_vals)
        d1_vals[int(np.argmin(d1_vals))] = b
        if status is AkiStatus.NEGATIVE:
            vals = d1_vals + self._quiet(b, len(later))
        elif status is AkiStatus.POSITIVE:
            k = int(rng.integers(0, len(later)))
            before = self._quiet(b, k)
            if rng.random() < 0.5:
                peak = max(1.5 * b, b + 0.3) + rng.uniform(0.05, 0.6)
            else:
                prior = min(d1_vals + before)
                peak = prior + 0.3 + rng.uniform(0.05, 0.4)
            peak = math.ceil(peak * 100) / 100
            after = [_round2(peak + rng.uniform(-0.05, 0.5)) for _ in range(len(later) - k - 1)]
            vals = d1_vals + before + [peak] + after
        else:  # day-1 AKI
            if len(day1) == 1:
                day1 = [_round2(rng.uniform(0.5, 10.0))] + day1
            jump = math.ceil((b + 0.35 + rng.uniform(0.0, 0.4)) * 100) / 100
            early = [b] + self._quiet(b, len(day1) - 2)
            vals = early + [jump] + [_round2(jump + rng.uniform(-0.05, 0.5)) for _ in later]
        return CreatinineSeries(tuple(zip(day1 + later, vals)))


def generate_tables(config: SynthConfig) -> SynthTables:
    rng = np.random.default_rng(config.seed)
    stop = load_stopwords()
    exclusion = load_exclusion_terms()
    signal_stems = {porter_stem(t) for t in config.signal_terms}
    filler = [w for w in FILLER_WORDS if porter_stem(w) not in signal_stems]
    taken = set(stop) | {p[0] for p in exclusion} | {porter_stem(w) for w in filler} | signal_stems
    background = filler + _pseudo_words(rng, config.vocab_size, taken)
    zipf = 1.0 / np.arange(1, len(background) + 1) ** 1.05
    zipf /= zipf.sum()

    # lexicon: signal terms, a fraction of background words, two-word phrases
    lexicon = []
    cui_n = 0

    def next_cui():
        nonlocal cui_n
        cui_n += 1
        return f"C{cui_n:07d}"

    for term in sorted(config.signal_terms):
        lexicon.append((term, next_cui(), "phsu"))
    order = rng.permutation(len(background))
    n_lex = int(round(config.lexicon_fraction * len(background)))
    for i in sorted(order[:n_lex]):
        lexicon.append((background[i], next_cui(), str(rng.choice(SEMANTIC_TYPES))))
    phrases = []
    seen = set()
    while len(phrases) < config.n_phrases and len(background) > 1:
        a, b = rng.choice(len(background), size=2, replace=False)
        key = (background[a], background[b])
        if key in seen:
            continue
        seen.add(key)
        phrases.append(key)
        lexicon.append((" ".join(key), next_cui(), str(rng.choice(SEMANTIC_TYPES))))

    # patients and stays
    spp = np.asarray(config.stays_per_patient, dtype=np.float64)
    spp /= spp.sum()
    stays_of = []
    while True:
        if config.n_stays is None and len(stays_of) >= config.n_patients:
            break
        total = sum(stays_of)
        if config.n_stays is not None and total >= config.n_stays:
            break
        k = int(rng.choice(np.arange(1, spp.size + 1), p=spp))
        if config.n_stays is not None:
            k = min(k, config.n_stays - total)
        stays_of.append(k)
    n_stays = sum(stays_of)

    statuses = np.array([AkiStatus.NEGATIVE] * n_stays, dtype=object)
    n_pos = int(round(config.prevalence * n_stays))
    perm = rng.permutation(n_stays)
    statuses[perm[:n_pos]] = AkiStatus.POSITIVE
    n_d1 = int(round(config.day1_aki_fraction * n_stays))
    statuses[perm[n_pos:n_pos + n_d1]] = AkiStatus.EXCLUDED_DAY1_AKI

    def flags(frac):
        out = np.zeros(n_stays, dtype=bool)
        out[rng.permutation(n_stays)[:int(round(frac * n_stays))]] = True
        return out

    minor = flags(config.minor_fraction)
    other_only = flags(config.other_only_fraction)
    kidney = flags(config.kidney_mention_fraction)

    maker = _SeriesMaker(rng)
    stays, notes, labs, truth = [], [], [], []
    s = 0
    for p_idx, k in enumerate(stays_of):
        pid = f"P{p_idx + 1:06d}"
        age = _round2(rng.uniform(18.0, 90.0))
        gender = str(rng.choice(["M", "F"]))
        eth = str(rng.choice(ETHNICITIES))
        for _ in range(k):
            sid = f"S{s + 1:07d}"
            status = statuses[s]
            stays.append((sid, pid, _fmt(_round2(rng.uniform(2.0, 17.9))) if minor[s] else _fmt(age), gender, eth))
            for _attempt in range(config.max_attempts):
                series = maker.make(status)
                if assess(series).status is status:
                    break
            else:
                raise RuntimeError(f"could not build a {status.value} creatinine series for {sid}")
            labs.extend((sid, _fmt(t), _fmt(v)) for t, v in series.points)
            notes.extend(_stay_notes(rng, config, sid, status, background, zipf, phrases,
                                     bool(other_only[s]), bool(kidney[s])))
            truth.append((sid, status.value))
            s += 1
    return SynthTables(stays, notes, labs, lexicon, truth)


def _stay_notes(rng, config, sid, status, background, zipf, phrases, other_only, kidney):
    lo, hi = config.notes_per_stay
    n_notes = int(rng.integers(lo, hi + 1))
    bodies = []
    for _ in range(n_notes):
        length = int(rng.integers(config.note_length[0], config.note_length[1] + 1))
        toks = [background[i] for i in rng.choice(len(background), size=length, p=zipf)]
        out = []
        for t in toks:
            r = rng.random()
            if phrases and r < config.phrase_rate:
                out.extend(phrases[int(rng.integers(len(phrases)))])
            elif r < config.phrase_rate + config.phi_rate:
                out.append("[**Known lastname 1234**]")
            elif r < config.phrase_rate + config.phi_rate + 0.02:
                out.append(f"{rng.uniform(0.5, 3.0):.1f}")
            else:
                out.append(t)
        bodies.append(out)

    positive = status is AkiStatus.POSITIVE
    for term in sorted(config.signal_terms):
        p_pos, p_neg = config.signal_terms[term]
        if rng.random() < (p_pos if positive else p_neg):
            for _ in range(int(rng.integers(1, 3))):
                body = bodies[int(rng.integers(n_notes))]
                body.insert(int(rng.integers(len(body) + 1)), term)
    if kidney:
        body = bodies[int(rng.integers(n_notes))]
        body.insert(int(rng.integers(len(body) + 1)), "dialysis")

    offsets = sorted(_round2(t) for t in rng.uniform(0.0, 24.0, size=n_notes))
    rows = []
    for i, (off, body) in enumerate(zip(offsets, bodies)):
        if other_only:
            cat = "other"
        elif i == 0:
            cat = str(rng.choice(["physician", "nursing"]))
        else:
            cat = str(rng.choice(["physician", "nursing", "other"], p=[0.35, 0.45, 0.2]))
        text = " ".join(body).capitalize() + "."
        rows.append((sid, _fmt(off), cat, text))
    if rng.random() < config.late_note_rate:
        # after day 1, so never part of the day-1 text
        late = [background[i] for i in rng.choice(len(background), size=20, p=zipf)] + ["dialysis"]
        rows.append((sid, _fmt(_round2(rng.uniform(24.5, 70.0))), "nursing", " ".join(late)))
    return rows


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def generate(config: SynthConfig, out_dir) -> dict[str, Path]:
    """Write the synthetic corpus under ``out_dir``; returns the file paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t = generate_tables(config)
    paths = {name: out / name for name in ("stays.csv", "notes.csv", "labs.csv", "lexicon.tsv", "truth.csv")}
    _write_csv(paths["stays.csv"], STAYS_COLUMNS, t.stays)
    _write_csv(paths["notes.csv"], NOTES_COLUMNS, t.notes)
    _write_csv(paths["labs.csv"], LABS_COLUMNS, t.labs)
    _write_csv(paths["truth.csv"], ("stay_id", "label"), t.truth)
    with open(paths["lexicon.tsv"], "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, delimiter="\t", lineterminator="\n").writerows(t.lexicon)
    return paths


def read_truth(path) -> dict[str, AkiStatus]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["stay_id"]: AkiStatus(row["label"]) for row in csv.DictReader(fh)}
