import csv
from collections import defaultdict

import numpy as np
import pytest

from akinotes.ingest import parse_labs
from akinotes.kdigo import AkiStatus, assess
from akinotes.synth import SynthConfig, generate, generate_tables, read_truth
from akinotes.textprep import porter_stem

from .oracles import kdigo_oracle


def lab_points(labs):
    by_stay = defaultdict(list)
    for sid, t, v in labs:
        by_stay[sid].append((float(t), float(v)))
    return by_stay


class TestConfig:
    @pytest.mark.parametrize("kwargs", [
        {"prevalence": 0.0}, {"prevalence": 1.0}, {"signal_terms": {"lasix": (1.2, 0.1)}},
        {"signal_terms": {"lasix": (0.5,)}}, {"phi_rate": -0.1}, {"minor_fraction": 2.0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            SynthConfig(**kwargs)


@pytest.fixture(scope="module")
def balanced():
    return generate_tables(SynthConfig(n_stays=1000, prevalence=0.5, seed=11))


class TestGenerate:
    def test_labels_round_trip(self, balanced):
        truth = dict(balanced.truth)
        for sid, pts in lab_points(balanced.labs).items():
            status, _ = kdigo_oracle([(round(t * 100), round(v * 100)) for t, v in pts])
            assert status == truth[sid]

    def test_prevalence(self, balanced):
        labels = [lab for _, lab in balanced.truth]
        assert abs(labels.count("Positive") / len(labels) - 0.5) <= 0.02

    @pytest.mark.parametrize("seed", [1, 2])
    def test_default_prevalence(self, seed):
        t = generate_tables(SynthConfig(n_stays=1200, seed=seed, vocab_size=50))
        labels = [lab for _, lab in t.truth]
        assert abs(labels.count("Positive") / len(labels) - 0.167) <= 0.02

    def test_negatives_keep_safety_margin(self, balanced):
        truth = dict(balanced.truth)
        for sid, pts in lab_points(balanced.labs).items():
            if truth[sid] != "Negative":
                continue
            base = min(v for t, v in pts if t <= 24.0)
            assert max(v for _, v in pts) < 1.45 * base + 1e-9
            for t1, v1 in pts:
                for t2, v2 in pts:
                    if 0 < t2 - t1 <= 48.0:
                        assert v2 - v1 <= 0.25 + 1e-9

    def test_signal_rates(self, balanced):
        truth = dict(balanced.truth)
        docs = defaultdict(str)
        for sid, _, _, text in balanced.notes:
            docs[sid] += " " + text.lower()
        pos = [sid for sid, lab in truth.items() if lab == "Positive"]
        neg = [sid for sid, lab in truth.items() if lab == "Negative"]
        rate_pos = np.mean([" lasix" in docs[s] for s in pos])
        rate_neg = np.mean([" lasix" in docs[s] for s in neg])
        assert rate_pos == pytest.approx(0.55, abs=0.06)
        assert rate_neg == pytest.approx(0.05, abs=0.03)

    def test_background_avoids_signal_stems(self, balanced):
        signal = {porter_stem(t) for t in SynthConfig().signal_terms}
        surfaces = [surface for surface, _, _ in balanced.lexicon]
        owners = defaultdict(set)
        for s in surfaces:
            if " " not in s:
                owners[porter_stem(s)].add(s)
        for stem in signal:
            assert len(owners[stem]) == 1

    def test_files_byte_identical(self, tmp_path):
        cfg = SynthConfig(n_stays=150, seed=4, vocab_size=60)
        a = generate(cfg, tmp_path / "a")
        b = generate(cfg, tmp_path / "b")
        for name in a:
            assert a[name].read_bytes() == b[name].read_bytes()

    def test_different_seed_differs(self, tmp_path):
        a = generate(SynthConfig(n_stays=50, seed=1, vocab_size=40), tmp_path / "a")
        b = generate(SynthConfig(n_stays=50, seed=2, vocab_size=40), tmp_path / "b")
        assert a["notes.csv"].read_bytes() != b["notes.csv"].read_bytes()

    def test_files_parse_through_ingest(self, tmp_path):
        paths = generate(SynthConfig(n_stays=120, seed=5, vocab_size=40, day1_aki_fraction=0.1), tmp_path)
        rejects = []
        series = parse_labs(paths["labs.csv"], rejects)
        truth = read_truth(paths["truth.csv"])
        assert not rejects
        assert set(series) == set(truth)
        assert {assess(s).status for s in series.values()} == set(truth.values())
        for sid, s in series.items():
            assert assess(s).status is truth[sid]
        assert AkiStatus.EXCLUDED_DAY1_AKI in set(truth.values())

    def test_patient_count_mode(self):
        t = generate_tables(SynthConfig(n_stays=None, n_patients=30, seed=0, vocab_size=30))
        assert len({row[1] for row in t.stays}) == 30

    def test_notes_in_first_day_or_late(self, balanced):
        with_late = 0
        for _, offset, _, text in balanced.notes:
            if float(offset) > 24.0:
                with_late += 1
                assert "dialysis" in text
        assert with_late > 0
