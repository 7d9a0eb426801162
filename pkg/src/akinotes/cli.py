"""Command-line front end.

Every subcommand reads one JSON config (``--config``), writes its artifacts
under ``--out`` with fixed names and records a manifest entry in
``manifest.json``.  Exit codes: 0 ok, 1 input error, 2 usage, 3 internal.
Errors are printed to stderr as a single JSON line.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy

from . import __version__
from .concepts import ConceptLexicon
from .config import ALGORITHMS, FEATURE_SETS, SAMPLINGS, ConfigError, PipelineConfig
from .evaluation import (derive_seed, patient_split, report_json, report_table, run_grid, sampling_ratio,
                         undersample, write_ranked_features)
from .features import FeatureMatrix, FeatureSet, Featurizer
from .ingest import (SchemaError, build_cohort, label_cohort, load_cohort, load_exclusion_terms, parse_labs,
                     parse_tables, save_cohort, write_rejects)
from .kdigo import assess
from .models import SequenceData, fit_model, load_model, save_model
from .synth import generate
from .textprep import Vocabulary, load_stopwords

EXIT_OK, EXIT_INPUT, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2, 3
RAW_FILES = ("stays.csv", "notes.csv", "labs.csv")


class InputError(Exception):
    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(message)
        self.path = path


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error("usage", message)
        raise SystemExit(EXIT_USAGE)


def _emit_error(kind: str, message: str, path: Optional[str] = None) -> None:
    obj = {"error": kind, "message": message}
    if path is not None:
        obj["path"] = path
    print(json.dumps(obj, sort_keys=True), file=sys.stderr)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _require(path: Path) -> Path:
    if not path.is_file():
        raise InputError(f"missing input file {path}", str(path))
    return path


class Run:
    """Shared state for one invocation: config, directories and the manifest entry."""

    def __init__(self, args):
        self.args = args
        self.command = args.command
        if args.config is not None:
            cfg_path = Path(args.config)
            if not cfg_path.is_file():
                raise InputError(f"config file not found: {cfg_path}", str(cfg_path))
            self.config = PipelineConfig.load(cfg_path)
        else:
            self.config = PipelineConfig()
        if args.seed is not None:
            self.config = replace(self.config, seed=args.seed, synth=replace(self.config.synth, seed=args.seed))
        self.out = Path(args.out)
        self.data = Path(args.data) if args.data else self.out
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.outputs: list[Path] = []

    def input(self, path: Path) -> Path:
        _require(path)
        self.inputs[str(path)] = _sha256(path)
        return path

    def output(self, name: str) -> Path:
        path = self.out / name
        self.outputs.append(path)
        return path

    def write_manifest(self) -> None:
        path = self.out / "manifest.json"
        manifest = {"runs": {}}
        if path.is_file():
            try:
                manifest = json.loads(path.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                manifest = {"runs": {}}
        argv = {k: v for k, v in sorted(vars(self.args).items()) if k not in ("func",) and v is not None}
        manifest.setdefault("runs", {})[self.command] = {
            "arguments": argv,
            "config": self.config.to_dict(),
            "config_sha256": self.config.digest(),
            "seed": self.config.seed,
            "versions": {"akinotes": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__},
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": {p.name: _sha256(p) for p in sorted(self.outputs) if p.is_file()},
        }
        path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    # shared loaders

    def lexicon(self) -> ConceptLexicon:
        p = Path(self.config.text.lexicon_path) if self.config.text.lexicon_path else self.data / "lexicon.tsv"
        return ConceptLexicon.load(self.input(p))

    def stopwords(self):
        p = self.config.text.stopwords_path
        return load_stopwords(self.input(Path(p)) if p else None)

    def exclusion_terms(self):
        p = self.config.cohort.exclusion_terms_path
        return load_exclusion_terms(self.input(Path(p)) if p else None)

    def cohort(self):
        """Records and exclusion counts, built from the raw tables or ``cohort.jsonl``."""
        raw = [self.data / n for n in RAW_FILES]
        if all(p.is_file() for p in raw):
            tables = parse_tables(*(self.input(p) for p in raw))
            records, tally = build_cohort(tables.stays, tables.notes, tables.labs, self.exclusion_terms(),
                                          self.config.cohort.cohort_config())
            return records, tables.rejects, {"excluded_" + k: v for k, v in vars(tally).items()}
        cohort_path = self.data / "cohort.jsonl"
        if cohort_path.is_file():
            return load_cohort(self.input(cohort_path)), [], {}
        missing = next(p for p in raw if not p.is_file())
        raise InputError(f"missing input file {missing}", str(missing))

    def labeled(self):
        records, _, summary = self.cohort()
        records, tally = label_cohort(records, self.config.kdigo, self.config.cohort.insufficient)
        summary.update({"excluded_day1_aki": tally.day1_aki, "excluded_insufficient_data": tally.insufficient_data})
        if not records:
            raise InputError("no stays left after cohort rules and labeling")
        return records, summary


# --- subcommands ----------------------------------------------------------

def cmd_synth(run: Run) -> None:
    cfg = run.config.synth
    if run.args.n_stays is not None:
        cfg = replace(cfg, n_stays=run.args.n_stays)
    paths = generate(cfg, run.out)
    run.outputs.extend(paths.values())


def cmd_cohort(run: Run) -> None:
    records, rejects, summary = run.cohort()
    save_cohort(run.output("cohort.jsonl"), records)
    write_rejects(run.output("rejects.csv"), rejects)
    summary.update({"n_stays": len(records), "n_rejected_rows": len(rejects)})
    run.output("cohort_summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n",
                                                  encoding="utf-8")


def cmd_label(run: Run) -> None:
    labs_path = run.input(run.data / "labs.csv")
    rejects = []
    series = parse_labs(labs_path, rejects, run.config.kdigo.horizon_hours)
    with open(run.output("labels.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stay_id", "status", "onset_hours", "baseline"])
        for sid in sorted(series):
            a = assess(series[sid], run.config.kdigo)
            onset = "" if a.onset_hours is None else repr(float(a.onset_hours))
            base = "" if a.baseline_mg_dl != a.baseline_mg_dl else repr(float(a.baseline_mg_dl))
            w.writerow([sid, a.status.value, onset, base])
    write_rejects(run.output("label_rejects.csv"), rejects)


def _split(run: Run, records):
    return patient_split([(r.stay_id, r.patient_id) for r in records], run.config.eval.split_ratio,
                         derive_seed(run.config.seed, "split"))


def cmd_featurize(run: Run) -> None:
    records, _ = run.labeled()
    plan = _split(run, records)
    t = run.config.text
    by_id = {r.stay_id: r for r in records}
    train = [by_id[s] for s in plan.train]
    fz = Featurizer.fit([r.day1_text for r in train], run.lexicon(), run.stopwords(), t.min_df, t.cui_min_df,
                        t.semantic_allowlist)
    fz.word_vocab.save(run.output("vocab_words.tsv"))
    fz.cui_vocab.save(run.output("vocab_cuis.tsv"))
    run.output("split.json").write_text(plan.to_json() + "\n", encoding="utf-8")
    for side, ids in (("train", plan.train), ("test", plan.test)):
        recs = [by_id[s] for s in ids]
        for name in run.config.eval.feature_sets:
            m = fz.transform([r.day1_text for r in recs], list(ids), [r.label for r in recs], FeatureSet(name))
            m.save(run.output(f"{side}_{name}.txt"))


def _featurizer_from_disk(run: Run) -> Featurizer:
    return Featurizer(Vocabulary.load(run.input(run.data / "vocab_words.tsv")),
                      Vocabulary.load(run.input(run.data / "vocab_cuis.tsv")),
                      run.lexicon(), tuple(run.config.text.semantic_allowlist))


def _sequences(run: Run, matrix: FeatureMatrix) -> SequenceData:
    fz = _featurizer_from_disk(run)
    records, _ = run.labeled()
    by_id = {r.stay_id: r for r in records}
    missing = [s for s in matrix.row_ids if s not in by_id]
    if missing:
        raise InputError(f"stay {missing[0]} from the matrix is not in the cohort")
    seqs = [fz.id_sequences(by_id[s].day1_text) for s in matrix.row_ids]
    return SequenceData([w for w, _ in seqs], [c for _, c in seqs], len(fz.word_vocab) + 1,
                        len(fz.cui_vocab) + 1, {term: i + 1 for i, term in enumerate(fz.word_vocab.terms)})


def _model_name(algorithm, feature_set, sampling):
    tag = "" if sampling == "none" else "_rus" + sampling.replace(":", "-")
    return f"model_{algorithm}_{feature_set}{tag}.json"


def cmd_train(run: Run) -> None:
    a = run.args
    matrix = FeatureMatrix.load(run.input(run.data / f"train_{a.feature_set}.txt"))
    ratio = sampling_ratio(a.sampling)
    if ratio is not None:
        matrix = undersample(matrix, ratio, derive_seed(run.config.seed, "rus", "heldout", a.sampling))
    seqs = _sequences(run, matrix) if a.algorithm == "CNN" else None
    seed = derive_seed(run.config.seed, "fit", "heldout", a.feature_set, a.algorithm, a.sampling)
    trained = fit_model(a.algorithm, matrix, run.config, seed, seqs)
    save_model(run.output(_model_name(a.algorithm, a.feature_set, a.sampling)), trained)


def cmd_predict(run: Run) -> None:
    a = run.args
    model_path = Path(a.model) if a.model else run.data / _model_name(a.algorithm, a.feature_set, a.sampling)
    trained = load_model(run.input(model_path))
    matrix_path = Path(a.matrix) if a.matrix else run.data / f"test_{trained.feature_set.value}.txt"
    matrix = FeatureMatrix.load(run.input(matrix_path))
    if matrix.feature_set is not trained.feature_set:
        raise InputError(f"model was trained on {trained.feature_set.value}, matrix holds "
                         f"{matrix.feature_set.value}", str(matrix_path))
    seqs = _sequences(run, matrix) if trained.kind == "cnn" else None
    scores = trained.scores(matrix, seqs)
    with open(run.output("predictions.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stay_id", "label", "score"])
        for sid, y, s in zip(matrix.row_ids, matrix.labels.tolist(), scores.tolist()):
            w.writerow([sid, y, repr(float(s))])


def _write_report(run: Run, report: dict, stem: str) -> None:
    run.output(f"{stem}.json").write_text(report_json(report), encoding="utf-8")
    run.output(f"{stem}.txt").write_text(report_table(report), encoding="utf-8")
    if report["top_features"]:
        write_ranked_features(run.output("ranked_features.csv"), report)


def _grid(run: Run, modes) -> dict:
    records, summary = run.labeled()
    return run_grid(records, run.config, run.lexicon(), run.stopwords(), modes, summary)


def cmd_evaluate(run: Run) -> None:
    modes = ("heldout", "cv") if run.config.eval.cv else ("heldout",)
    _write_report(run, _grid(run, modes), "report")


def cmd_cv(run: Run) -> None:
    _write_report(run, _grid(run, ("cv",)), "cv_report")


def cmd_report(run: Run) -> None:
    src = run.input(run.data / (run.args.source or "report.json"))
    try:
        report = json.loads(src.read_text(encoding="utf-8"))
        stem = src.stem
        run.output(f"{stem}.txt").write_text(report_table(report), encoding="utf-8")
        if report.get("top_features"):
            write_ranked_features(run.output("ranked_features.csv"), report)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"{src}: not a report file ({exc})", str(src)) from exc


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic corpus (stays, notes, labs, lexicon, truth)"),
    "cohort": (cmd_cohort, "apply the inclusion rules and write cohort.jsonl"),
    "label": (cmd_label, "KDIGO-label every stay in labs.csv and write labels.csv"),
    "featurize": (cmd_featurize, "split patients, fit vocabularies on train, write feature matrices"),
    "train": (cmd_train, "fit one algorithm on a featurized train matrix"),
    "predict": (cmd_predict, "score a feature matrix with a saved model"),
    "evaluate": (cmd_evaluate, "run the evaluation grid and write report.json/report.txt"),
    "cv": (cmd_cv, "run the grid as k-fold cross-validation on the train split"),
    "report": (cmd_report, "re-render report.txt and ranked_features.csv from a report JSON"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="akinotes", description="AKI prediction from first-day ICU notes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (func, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text,
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.set_defaults(func=func)
        p.add_argument("--config", help="JSON config file; built-in defaults when omitted")
        p.add_argument("--seed", type=int, help="master seed, overrides the config")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--data", help="input directory (defaults to --out)")
        if name == "synth":
            p.add_argument("--n-stays", type=int, help="number of stays, overrides synth.n_stays")
        if name in ("train", "predict"):
            p.add_argument("--algorithm", choices=ALGORITHMS, default="L2-LR")
            p.add_argument("--feature-set", choices=FEATURE_SETS, default="Words")
            p.add_argument("--sampling", choices=SAMPLINGS, default="none")
        if name == "predict":
            p.add_argument("--model", help="model file (default: derived from the flags above)")
            p.add_argument("--matrix", help="matrix file (default: test_<feature set>.txt)")
        if name == "report":
            p.add_argument("--source", help="report JSON name inside --data (default report.json)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        run = Run(args)
        args.func(run)
        run.write_manifest()
    except InputError as exc:
        _emit_error("input", str(exc), exc.path)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        _emit_error("input", f"missing input file {exc.filename}", str(exc.filename))
        return EXIT_INPUT
    except (ConfigError, SchemaError) as exc:
        _emit_error("input", str(exc))
        return EXIT_INPUT
    except Exception as exc:
        _emit_error("internal", f"{type(exc).__name__}: {exc}")
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
