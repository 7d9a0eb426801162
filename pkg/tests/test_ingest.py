import csv
import random

import pytest

from akinotes.ingest import (CohortConfig, NoteDocument, SchemaError, StayMeta, build_cohort, contains_phrase,
                             day1_notes, label_cohort, load_cohort, load_exclusion_terms, normalize_category,
                             parse_labs, parse_notes, parse_stays, parse_tables, save_cohort, write_rejects)
from akinotes.kdigo import AkiStatus, CreatinineSeries


def write(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def meta(sid, age=60.0, pid=None):
    return StayMeta(sid, pid or "P" + sid, age, "M", "WHITE")


def note(sid, text, offset=2.0, cat="nursing"):
    return NoteDocument(sid, offset, cat, text)


FLAT = CreatinineSeries(((2.0, 1.0), (30.0, 1.05)))
TERMS = load_exclusion_terms()


class TestParsing:
    def test_three_notes(self, tmp_path):
        p = write(tmp_path / "notes.csv", ["stay_id", "chart_offset_hours", "category", "text"],
                  [["S1", "1", "Nursing/other", "a"], ["S1", "2", "Physician ", "b, \"quoted\"\nline"],
                   ["S2", "3", "Radiology", "c"]])
        rejects = []
        notes = parse_notes(p, rejects)
        assert len(notes) == 3 and rejects == []
        assert [n.category for n in notes] == ["nursing", "physician", "other"]
        assert notes[1].text == 'b, "quoted"\nline'

    def test_empty_text_rejected(self, tmp_path):
        p = write(tmp_path / "notes.csv", ["stay_id", "chart_offset_hours", "category", "text"],
                  [["S1", "1", "nursing", "  "], ["S1", "2", "nursing", "ok"]])
        rejects = []
        assert len(parse_notes(p, rejects)) == 1
        assert len(rejects) == 1 and rejects[0].reason == "text empty" and rejects[0].line == 2

    def test_non_numeric_lab(self, tmp_path):
        p = write(tmp_path / "labs.csv", ["stay_id", "time_offset_hours", "creatinine_mg_dl"],
                  [["S1", "2", "abc"], ["S1", "30", "1.2"], ["S1", "90", "1.4"]])
        rejects = []
        labs = parse_labs(p, rejects)
        assert [r.reason for r in rejects] == ["creatinine_mg_dl not numeric"]
        assert labs["S1"].points == ((30.0, 1.2),)

    def test_duplicate_lab_time(self, tmp_path):
        p = write(tmp_path / "labs.csv", ["stay_id", "time_offset_hours", "creatinine_mg_dl"],
                  [["S1", "2", "1.0"], ["S1", "2.0", "1.1"]])
        rejects = []
        parse_labs(p, rejects)
        assert len(rejects) == 1 and "duplicate" in rejects[0].reason

    def test_stays_rejects(self, tmp_path):
        p = write(tmp_path / "stays.csv", ["stay_id", "patient_id", "age_years", "gender", "ethnicity"],
                  [["S1", "P1", "40", "f", "X"], ["S1", "P1", "41", "M", "X"], ["S2", "P2", "-3", "M", "X"],
                   ["S3", "", "50", "M", "X"], ["S4", "P4", "70", "?", "X"]])
        rejects = []
        stays = parse_stays(p, rejects)
        assert [s.stay_id for s in stays] == ["S1", "S4"]
        assert stays[0].gender == "F" and stays[1].gender == "unknown"
        assert len(rejects) == 3

    def test_missing_column_is_fatal(self, tmp_path):
        p = write(tmp_path / "labs.csv", ["stay_id", "time_offset_hours"], [["S1", "2"]])
        with pytest.raises(SchemaError, match="creatinine_mg_dl"):
            parse_labs(p, [])

    def test_rejects_report(self, tmp_path):
        p = write(tmp_path / "notes.csv", ["stay_id", "chart_offset_hours", "category", "text"],
                  [["S1", "x", "nursing", "a"]])
        rejects = []
        parse_notes(p, rejects)
        write_rejects(tmp_path / "rejects.csv", rejects)
        rows = list(csv.reader(open(tmp_path / "rejects.csv")))
        assert rows == [["file", "line", "reason"], ["notes.csv", "2", "chart_offset_hours not numeric"]]


class TestCohortRules:
    def test_minor_excluded(self):
        recs, tally = build_cohort([meta("S1", age=17)], [note("S1", "fine")], {"S1": FLAT}, TERMS)
        assert recs == [] and tally.age == 1

    def test_other_only_excluded(self):
        recs, tally = build_cohort([meta("S1")], [note("S1", "fine", cat="other")], {"S1": FLAT}, TERMS)
        assert recs == [] and tally.note_type == 1

    def test_late_nursing_note_does_not_count(self):
        notes = [note("S1", "fine", cat="other"), note("S1", "fine", offset=30)]
        recs, tally = build_cohort([meta("S1")], notes, {"S1": FLAT}, TERMS)
        assert tally.note_type == 1

    def test_kidney_term_excluded(self):
        recs, tally = build_cohort([meta("S1")], [note("S1", "started on dialysis")], {"S1": FLAT}, TERMS)
        assert recs == [] and tally.kidney_terms == 1

    def test_multiword_term_on_stems(self):
        assert contains_phrase(["acut", "renal", "failur"], TERMS)
        assert not contains_phrase(["renal", "acut", "failur"], TERMS)

    def test_late_kidney_mention_ignored(self):
        notes = [note("S1", "fine"), note("S1", "dialysis", offset=40)]
        recs, _ = build_cohort([meta("S1")], notes, {"S1": FLAT}, TERMS)
        assert len(recs) == 1 and "dialysis" not in recs[0].day1_text

    def test_no_labs(self):
        recs, tally = build_cohort([meta("S1")], [note("S1", "fine")], {}, TERMS)
        assert recs == [] and tally.insufficient_labs == 1

    def test_first_failing_rule_counts_once(self):
        recs, tally = build_cohort([meta("S1", age=10)], [note("S1", "dialysis", cat="other")], {}, TERMS)
        assert (tally.age, tally.note_type, tally.kidney_terms, tally.insufficient_labs) == (1, 0, 0, 0)

    def test_day1_concatenation_order(self):
        notes = [note("S1", "third", offset=20), note("S1", "first", offset=1), note("S1", "second", offset=5)]
        recs, _ = build_cohort([meta("S1")], notes, {"S1": FLAT}, TERMS)
        assert recs[0].day1_text == "first\nsecond\nthird"

    def test_custom_age(self):
        recs, _ = build_cohort([meta("S1", age=17)], [note("S1", "fine")], {"S1": FLAT}, TERMS,
                               CohortConfig(min_age=16))
        assert len(recs) == 1


class TestCohortProperties:
    def test_shuffled_notes_give_identical_text(self, small_corpus):
        paths, records, _ = small_corpus
        tables = parse_tables(paths["stays.csv"], paths["notes.csv"], paths["labs.csv"])
        shuffled = list(tables.notes)
        random.Random(3).shuffle(shuffled)
        again, _ = build_cohort(tables.stays, shuffled, tables.labs, TERMS)
        base, _ = build_cohort(tables.stays, tables.notes, tables.labs, TERMS)
        assert [r.day1_text for r in again] == [r.day1_text for r in base]
        assert [r.stay_id for r in again] == sorted(r.stay_id for r in again)

    def test_tally_accounts_for_every_stay(self, small_corpus):
        paths, _, _ = small_corpus
        tables = parse_tables(paths["stays.csv"], paths["notes.csv"], paths["labs.csv"])
        recs, tally = build_cohort(tables.stays, tables.notes, tables.labs, TERMS)
        assert tally.total() + len(recs) == len(tables.stays)
        assert tally.age > 0 and tally.note_type > 0 and tally.kidney_terms > 0

    def test_extra_exclusion_term_never_grows_cohort(self, small_corpus):
        paths, _, _ = small_corpus
        tables = parse_tables(paths["stays.csv"], paths["notes.csv"], paths["labs.csv"])
        base, _ = build_cohort(tables.stays, tables.notes, tables.labs, TERMS)
        more, _ = build_cohort(tables.stays, tables.notes, tables.labs, TERMS + [("pain",)])
        assert {r.stay_id for r in more} <= {r.stay_id for r in base}
        assert len(more) < len(base)

    def test_removing_a_note_never_readmits(self, small_corpus):
        # without term exclusion, since dropping a note that mentions dialysis rightly readmits
        paths, _, _ = small_corpus
        tables = parse_tables(paths["stays.csv"], paths["notes.csv"], paths["labs.csv"])
        base, _ = build_cohort(tables.stays, tables.notes, tables.labs, [])
        kept = {r.stay_id for r in base}
        dropped = [n for i, n in enumerate(tables.notes) if i % 3]
        fewer, _ = build_cohort(tables.stays, dropped, tables.labs, [])
        assert {r.stay_id for r in fewer} - kept == set()


class TestLabeling:
    def test_day1_aki_and_insufficient(self):
        recs, _ = build_cohort(
            [meta("S1"), meta("S2"), meta("S3")],
            [note("S1", "a"), note("S2", "a"), note("S3", "a")],
            {"S1": CreatinineSeries(((1, 0.8), (20, 1.2))), "S2": CreatinineSeries(((3, 1.0),)), "S3": FLAT},
            TERMS)
        out, tally = label_cohort(recs)
        assert [r.stay_id for r in out] == ["S3"] and out[0].label == 0
        assert (tally.day1_aki, tally.insufficient_data) == (1, 1)
        out, _ = label_cohort(recs, insufficient="negative")
        assert [(r.stay_id, r.label) for r in out] == [("S2", 0), ("S3", 0)]
        assert out[0].assessment.status is AkiStatus.INSUFFICIENT_DATA

    def test_bad_policy(self):
        with pytest.raises(ValueError):
            label_cohort([], insufficient="drop")

    def test_cohort_round_trip(self, tmp_path, small_corpus):
        _, records, _ = small_corpus
        save_cohort(tmp_path / "c.jsonl", records)
        back = load_cohort(tmp_path / "c.jsonl")
        assert [(r.meta, r.day1_text, r.creatinine, r.label) for r in back] == \
               [(r.meta, r.day1_text, r.creatinine, r.label) for r in records]

    def test_day1_notes_cutoff(self):
        kept = day1_notes([note("S", "a", 24.0), note("S", "b", 24.01)])
        assert [n.text for n in kept] == ["a"]

    @pytest.mark.parametrize("raw,expected", [("Physician ", "physician"), ("NURSING/OTHER", "nursing"),
                                              ("Discharge summary", "other"), ("", "other")])
    def test_categories(self, raw, expected):
        assert normalize_category(raw) == expected
