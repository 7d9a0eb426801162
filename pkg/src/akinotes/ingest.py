"""Table parsing and cohort assembly.

Three CSV inputs are read (stays, notes, labs), malformed rows are
collected rather than raised, and the retained ICU stays are assembled
into :class:`IcuStayRecord` objects sorted by ``stay_id``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .kdigo import AkiAssessment, AkiStatus, CreatinineSeries, KdigoConfig, assess
from .textprep import read_term_lines, default_data_path, preprocess, stem_phrase

STAYS_COLUMNS = ("stay_id", "patient_id", "age_years", "gender", "ethnicity")
NOTES_COLUMNS = ("stay_id", "chart_offset_hours", "category", "text")
LABS_COLUMNS = ("stay_id", "time_offset_hours", "creatinine_mg_dl")

NOTE_CATEGORIES = ("physician", "nursing", "other")


class SchemaError(ValueError):
    """A required column is missing from an input table."""


@dataclass(frozen=True)
class StayMeta:
    stay_id: str
    patient_id: str
    age_years: float
    gender: str
    ethnicity: str


@dataclass(frozen=True)
class NoteDocument:
    stay_id: str
    chart_offset_hours: float
    category: str
    text: str


@dataclass(frozen=True)
class Reject:
    file: str
    line: int
    reason: str


@dataclass(frozen=True)
class IcuStayRecord:
    meta: StayMeta
    day1_text: str
    creatinine: CreatinineSeries
    label: Optional[int] = None
    assessment: Optional[AkiAssessment] = None

    @property
    def stay_id(self):
        return self.meta.stay_id

    @property
    def patient_id(self):
        return self.meta.patient_id


@dataclass
class ParsedTables:
    stays: list[StayMeta]
    notes: list[NoteDocument]
    labs: dict[str, CreatinineSeries]
    rejects: list[Reject] = field(default_factory=list)


@dataclass
class ExclusionTally:
    age: int = 0
    note_type: int = 0
    kidney_terms: int = 0
    insufficient_labs: int = 0

    def total(self) -> int:
        return self.age + self.note_type + self.kidney_terms + self.insufficient_labs


@dataclass
class LabelTally:
    day1_aki: int = 0
    insufficient_data: int = 0


@dataclass(frozen=True)
class CohortConfig:
    min_age: float = 18.0
    day1_hours: float = 24.0
    labs_horizon_hours: float = 72.0


def normalize_category(raw: str) -> str:
    """Map free-form note categories onto physician / nursing / other."""
    cat = raw.strip().lower()
    if cat.startswith("physician"):
        return "physician"
    if cat.startswith("nursing"):
        return "nursing"
    return "other"


def normalize_gender(raw: str) -> str:
    g = raw.strip().upper()
    return g if g in ("M", "F") else "unknown"


def _float_field(row, name):
    try:
        value = float(row[name])
    except (TypeError, ValueError):
        raise ValueError(f"{name} not numeric") from None
    if not math.isfinite(value):
        raise ValueError(f"{name} not finite")
    return value


def _read_rows(path, required: Sequence[str]):
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.DictReader(fh)
    header = reader.fieldnames or []
    for col in required:
        if col not in header:
            fh.close()
            raise SchemaError(f"{path}: missing required column {col!r}")
    return fh, reader


def parse_stays(path, rejects: list[Reject]) -> list[StayMeta]:
    fh, reader = _read_rows(path, STAYS_COLUMNS)
    out, seen = [], set()
    name = Path(path).name
    with fh:
        for row in reader:
            line = reader.line_num
            try:
                stay_id = (row["stay_id"] or "").strip()
                if not stay_id:
                    raise ValueError("stay_id empty")
                if stay_id in seen:
                    raise ValueError(f"duplicate stay_id {stay_id}")
                age = _float_field(row, "age_years")
                if age < 0:
                    raise ValueError("age_years negative")
                patient = (row["patient_id"] or "").strip()
                if not patient:
                    raise ValueError("patient_id empty")
            except ValueError as exc:
                rejects.append(Reject(name, line, str(exc)))
                continue
            seen.add(stay_id)
            out.append(StayMeta(stay_id, patient, age, normalize_gender(row["gender"] or ""),
                                (row["ethnicity"] or "").strip()))
    return out


def parse_notes(path, rejects: list[Reject]) -> list[NoteDocument]:
    fh, reader = _read_rows(path, NOTES_COLUMNS)
    out = []
    name = Path(path).name
    with fh:
        for row in reader:
            line = reader.line_num
            try:
                stay_id = (row["stay_id"] or "").strip()
                if not stay_id:
                    raise ValueError("stay_id empty")
                offset = _float_field(row, "chart_offset_hours")
                if offset < 0:
                    raise ValueError("chart_offset_hours negative")
                text = row["text"] or ""
                if not text.strip():
                    raise ValueError("text empty")
            except ValueError as exc:
                rejects.append(Reject(name, line, str(exc)))
                continue
            out.append(NoteDocument(stay_id, offset, normalize_category(row["category"] or ""), text))
    return out


def parse_labs(path, rejects: list[Reject], horizon_hours: float = 72.0) -> dict[str, CreatinineSeries]:
    """Creatinine series per stay; measurements outside [0, horizon] are skipped."""
    fh, reader = _read_rows(path, LABS_COLUMNS)
    points: dict[str, dict[float, float]] = {}
    name = Path(path).name
    with fh:
        for row in reader:
            line = reader.line_num
            try:
                stay_id = (row["stay_id"] or "").strip()
                if not stay_id:
                    raise ValueError("stay_id empty")
                t = _float_field(row, "time_offset_hours")
                v = _float_field(row, "creatinine_mg_dl")
                if v <= 0:
                    raise ValueError("creatinine_mg_dl not positive")
                if t in points.get(stay_id, {}):
                    raise ValueError(f"duplicate time_offset_hours {t:g} for stay {stay_id}")
            except ValueError as exc:
                rejects.append(Reject(name, line, str(exc)))
                continue
            if 0.0 <= t <= horizon_hours:
                points.setdefault(stay_id, {})[t] = v
    return {sid: CreatinineSeries(tuple(sorted(p.items()))) for sid, p in sorted(points.items())}


def parse_tables(stays_path, notes_path, labs_path) -> ParsedTables:
    rejects: list[Reject] = []
    stays = parse_stays(stays_path, rejects)
    notes = parse_notes(notes_path, rejects)
    labs = parse_labs(labs_path, rejects)
    return ParsedTables(stays, notes, labs, rejects)


def load_exclusion_terms(path=None) -> list[tuple[str, ...]]:
    """Stemmed exclusion phrases; the packaged kidney list when ``path`` is None."""
    terms = read_term_lines(path or default_data_path("kidney_terms.txt"))
    return [p for p in (stem_phrase(t) for t in terms) if p]


def contains_phrase(tokens: Sequence[str], phrases: Iterable[tuple[str, ...]]) -> bool:
    phrases = list(phrases)
    singles = {p[0] for p in phrases if len(p) == 1}
    if singles.intersection(tokens):
        return True
    multi = [p for p in phrases if len(p) > 1]
    if not multi:
        return False
    firsts = {p[0] for p in multi}
    for i, tok in enumerate(tokens):
        if tok in firsts:
            for p in multi:
                if tuple(tokens[i:i + len(p)]) == p:
                    return True
    return False


def day1_notes(notes: Iterable[NoteDocument], day1_hours: float = 24.0) -> list[NoteDocument]:
    """Notes charted within day 1, in chart-time order.

    Ties are broken on category then text so file order never matters.
    """
    kept = [n for n in notes if n.chart_offset_hours <= day1_hours]
    return sorted(kept, key=lambda n: (n.chart_offset_hours, n.category, n.text))


def build_cohort(
    meta: Sequence[StayMeta],
    notes: Sequence[NoteDocument],
    labs: dict[str, CreatinineSeries],
    exclusion_terms: Sequence[tuple[str, ...]],
    config: CohortConfig = CohortConfig(),
) -> tuple[list[IcuStayRecord], ExclusionTally]:
    """Apply the inclusion rules in order: age, note type, kidney terms, labs.

    Each excluded stay is counted once, under the first rule it fails.
    """
    by_stay: dict[str, list[NoteDocument]] = {}
    for n in notes:
        by_stay.setdefault(n.stay_id, []).append(n)

    tally = ExclusionTally()
    records = []
    for m in sorted(meta, key=lambda s: s.stay_id):
        if m.age_years < config.min_age:
            tally.age += 1
            continue
        day1 = day1_notes(by_stay.get(m.stay_id, ()), config.day1_hours)
        if not any(n.category in ("physician", "nursing") for n in day1):
            tally.note_type += 1
            continue
        text = "\n".join(n.text for n in day1)
        if contains_phrase(preprocess(text), exclusion_terms):
            tally.kidney_terms += 1
            continue
        series = labs.get(m.stay_id)
        if series is None or not any(t <= config.labs_horizon_hours for t in series.times):
            tally.insufficient_labs += 1
            continue
        records.append(IcuStayRecord(m, text, series))
    return records, tally


def label_cohort(
    records: Sequence[IcuStayRecord],
    kdigo_config: KdigoConfig = KdigoConfig(),
    insufficient: str = "exclude",
) -> tuple[list[IcuStayRecord], LabelTally]:
    """Attach KDIGO labels; drop day-1 AKI and (by default) unlabelable stays."""
    if insufficient not in ("exclude", "negative"):
        raise ValueError("insufficient must be 'exclude' or 'negative'")
    tally = LabelTally()
    out = []
    for rec in records:
        a = assess(rec.creatinine, kdigo_config)
        if a.status is AkiStatus.EXCLUDED_DAY1_AKI:
            tally.day1_aki += 1
            continue
        if a.status is AkiStatus.INSUFFICIENT_DATA:
            if insufficient == "exclude":
                tally.insufficient_data += 1
                continue
            label = 0
        else:
            label = int(a.status is AkiStatus.POSITIVE)
        out.append(replace(rec, label=label, assessment=a))
    return out, tally


def write_rejects(path, rejects: Sequence[Reject]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file", "line", "reason"])
        for r in rejects:
            w.writerow([r.file, r.line, r.reason])


def save_cohort(path, records: Sequence[IcuStayRecord]) -> None:
    """One JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {
                "meta": asdict(rec.meta),
                "day1_text": rec.day1_text,
                "creatinine": [list(p) for p in rec.creatinine.points],
                "label": rec.label,
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def load_cohort(path) -> list[IcuStayRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            out.append(IcuStayRecord(
                StayMeta(**obj["meta"]),
                obj["day1_text"],
                CreatinineSeries(tuple(tuple(p) for p in obj["creatinine"])),
                obj.get("label"),
            ))
    return out
