import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from akinotes.porter import porter_stem
from akinotes.textprep import (SparseVector, Vocabulary, build_vocab, default_data_path, load_stopwords,
                               preprocess, read_term_lines, tfidf_vectorize, tokenize)

REFERENCE_WORDS = """
caresses ponies ties caress cats feed agreed plastered bled motoring sing conflated troubled sized
hopping tanned falling hissing fizzed failing filing happy sky relational conditional rational
valenci hesitanci digitizer conformabli radicalli differentli vileli analogousli vietnamization
predication operator feudalism decisiveness hopefulness callousness formaliti sensitiviti
sensibiliti triplicate formative formalize electriciti electrical hopeful goodness revival
allowance inference airliner gyroscopic adjustable defensible irritant replacement adjustment
dependent adoption homologou communism activate angulariti homologous effective bowdlerize
probate rate cease controll roll generalizations oscillators creatinine dialysis hemodialysis
nephrectomy intubated extubated sedation pressors vasopressin levophed ambulating tolerating
urosepsis pneumothorax incisional insulin lasix labile swan cabg oliguria anuria hypotension
""".split()


@pytest.fixture(scope="module")
def nltk_stem():
    nltk_porter = pytest.importorskip("nltk.stem.porter")
    stemmer = nltk_porter.PorterStemmer(mode=nltk_porter.PorterStemmer.ORIGINAL_ALGORITHM)
    return stemmer.stem


class TestTokenize:
    @pytest.mark.parametrize("text,expected", [
        ("Pt s/p CABG. [**Name**] stable.", ["pt", "cabg", "stable"]),
        ("", []),
        ("creatinine 1.4 rising", ["creatinine", "rising"]),
        ("[**2101-3-4**] a b cd", ["cd"]),
        ("Multi\nline [**Known\nlastname**] mask", ["multi", "line", "mask"]),
    ])
    def test_examples(self, text, expected):
        assert tokenize(text) == expected

    @given(st.text())
    def test_tokens_are_lowercase_alpha(self, text):
        for tok in tokenize(text):
            assert len(tok) >= 2
            assert tok.isascii() and tok.isalpha() and tok == tok.lower()


class TestPorter:
    @pytest.mark.parametrize("word,stem", [
        ("caresses", "caress"), ("relational", "relat"), ("operator", "oper"),
        ("ponies", "poni"), ("hopping", "hop"), ("generalizations", "gener"), ("at", "at"),
    ])
    def test_examples(self, word, stem):
        assert porter_stem(word) == stem

    def test_reference_vocabulary(self, nltk_stem):
        words = sorted(set(REFERENCE_WORDS) | set(read_term_lines(default_data_path("stopwords.txt"))))
        mismatches = [(w, porter_stem(w), nltk_stem(w)) for w in words if len(w) > 2
                      and porter_stem(w) != nltk_stem(w)]
        assert mismatches == []

    @settings(max_examples=500, deadline=None)
    @given(st.text(alphabet="abcdefghijklmnopqrstuvwxyz", min_size=3, max_size=14))
    def test_random_strings(self, nltk_stem, word):
        assert porter_stem(word) == nltk_stem(word)

    def test_restemming_matches_reference(self, nltk_stem):
        stems = sorted({porter_stem(w) for w in REFERENCE_WORDS})
        assert [porter_stem(s) for s in stems if len(s) > 2] == [nltk_stem(s) for s in stems if len(s) > 2]

    def test_not_idempotent_in_general(self):
        # a second pass can strip more: agreed -> agre -> agr
        assert porter_stem("agreed") == "agre"
        assert porter_stem("agre") == "agr"


class TestStopwords:
    def test_default_list_size(self):
        assert len(read_term_lines(default_data_path("stopwords.txt"))) == 313

    def test_loaded_as_stems(self):
        stop = load_stopwords()
        assert "the" in stop and porter_stem("becoming") in stop


class TestVocabulary:
    def test_min_df_threshold(self):
        docs = [["renal", "fail"], ["renal"], ["cardiac"]]
        v = build_vocab(docs, min_df=2)
        assert v.terms == ("renal",)

    def test_stopword_removed(self):
        v = build_vocab([["the", "kidney"]], stopwords=frozenset({"the"}), min_df=1)
        assert "the" not in v and "kidney" in v

    def test_identity_with_min_df_one(self):
        docs = [["b", "a"], ["c", "a"]]
        assert build_vocab(docs, min_df=1).terms == ("a", "b", "c")

    def test_no_documents(self):
        with pytest.raises(ValueError, match="no documents"):
            build_vocab([], min_df=1)

    def test_round_trip(self, tmp_path):
        v = build_vocab([["x", "y"], ["y"]], min_df=1)
        v.save(tmp_path / "v.tsv")
        w = Vocabulary.load(tmp_path / "v.tsv")
        assert w == v
        np.testing.assert_array_equal(w.idf, v.idf)


class TestTfidf:
    def test_hand_example(self):
        docs = [preprocess("renal renal failure"), preprocess("cardiac failure")]
        v = build_vocab(docs, min_df=1)
        vec = tfidf_vectorize(docs[0], v).to_dict()
        idf_renal = math.log(3 / 2) + 1
        raw = np.array([2 * idf_renal, 1.0])
        expect = raw / np.linalg.norm(raw)
        assert vec[v.index["renal"]] == pytest.approx(expect[0], abs=1e-12)
        assert vec[v.index[porter_stem("failure")]] == pytest.approx(expect[1], abs=1e-12)
        assert expect[0] == pytest.approx(0.9422, abs=1e-4)
        assert expect[1] == pytest.approx(0.3352, abs=1e-4)

    def test_oov_only(self):
        v = build_vocab([["a"]], min_df=1)
        assert len(tfidf_vectorize(["zzz"], v)) == 0

    def test_single_term_unit_weight(self):
        v = build_vocab([["a"], ["b"]], min_df=1)
        assert tfidf_vectorize(["a"] * 7, v).to_dict() == {0: 1.0}

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.lists(st.sampled_from(list("abcdefg")), max_size=12), min_size=1, max_size=8))
    def test_vector_invariants(self, docs):
        v = build_vocab(docs, min_df=1)
        for d in docs:
            vec = tfidf_vectorize(d, v)
            assert np.all(vec.values > 0) and np.all(np.isfinite(vec.values))
            assert vec.norm() == 0.0 or abs(vec.norm() - 1.0) < 1e-9
            doubled = tfidf_vectorize(d + d, v)
            np.testing.assert_allclose(doubled.values, vec.values, rtol=1e-12)
        shuffled = build_vocab(list(reversed(docs)), min_df=1)
        assert shuffled == v


class TestSparseVector:
    def test_rejects_unsorted(self):
        with pytest.raises(ValueError):
            SparseVector([2, 1], [1.0, 1.0], 3)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            SparseVector([3], [1.0], 3)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            SparseVector([0], [np.inf], 3)

    def test_zero_normalizes_to_zero(self):
        assert len(SparseVector.zeros(4).normalized()) == 0
