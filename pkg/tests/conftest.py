import pytest

from akinotes.concepts import ConceptLexicon
from akinotes.ingest import build_cohort, label_cohort, load_exclusion_terms, parse_tables
from akinotes.synth import DEFAULT_SIGNAL_TERMS, SynthConfig, generate

_ACCEPTANCE: list[str] = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {name}"
    if detail:
        line += f" | {detail}"
    _ACCEPTANCE.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)


def load_corpus(paths):
    tables = parse_tables(paths["stays.csv"], paths["notes.csv"], paths["labs.csv"])
    records, _ = build_cohort(tables.stays, tables.notes, tables.labs, load_exclusion_terms())
    records, _ = label_cohort(records)
    return records, ConceptLexicon.load(paths["lexicon.tsv"])


def null_signal_terms():
    return {t: ((a + b) / 2, (a + b) / 2) for t, (a, b) in DEFAULT_SIGNAL_TERMS.items()}


@pytest.fixture(scope="session")
def signal_corpus(tmp_path_factory):
    """n=2000 stays, prevalence 0.167, strong planted signal, seed 0."""
    paths = generate(SynthConfig(n_stays=2000, seed=0), tmp_path_factory.mktemp("signal"))
    return paths, *load_corpus(paths)


@pytest.fixture(scope="session")
def null_corpus(tmp_path_factory):
    paths = generate(SynthConfig(n_stays=2000, seed=0, signal_terms=null_signal_terms()),
                     tmp_path_factory.mktemp("null"))
    return paths, *load_corpus(paths)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    cfg = SynthConfig(n_stays=400, seed=7, minor_fraction=0.03, other_only_fraction=0.03,
                      kidney_mention_fraction=0.03, day1_aki_fraction=0.03)
    paths = generate(cfg, tmp_path_factory.mktemp("small"))
    return paths, *load_corpus(paths)
