"""Patient-level splits, cross-validation, under-sampling, metrics and the grid runner."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .concepts import ConceptLexicon
from .config import PipelineConfig
from .features import FeatureMatrix, FeatureSet, Featurizer
from .linear_models import top_features
from .models import LINEAR_SPECS, SequenceData, TrainedModel, fit_model

REPORT_VERSION = 1


# --- splitting ------------------------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    train: tuple[str, ...]
    test: tuple[str, ...]
    seed: int
    ratio: float

    @property
    def achieved_ratio(self) -> float:
        return len(self.train) / (len(self.train) + len(self.test))

    def to_json(self) -> str:
        return json.dumps({"ratio": self.ratio, "seed": self.seed, "test": list(self.test),
                           "train": list(self.train)}, sort_keys=True)


def _group_by_patient(stays: Sequence[tuple[str, str]]) -> dict[str, list[str]]:
    groups: dict[str, list[str]] = defaultdict(list)
    seen = set()
    for sid, pid in stays:
        if sid in seen:
            raise ValueError(f"duplicate stay_id {sid!r}")
        seen.add(sid)
        groups[pid].append(sid)
    return {p: sorted(s) for p, s in groups.items()}


def patient_split(stays: Sequence[tuple[str, str]], ratio: float = 0.7, seed: int = 0) -> SplitPlan:
    """Shuffle patients and fill the train side up to ``round(ratio * n_stays)``.

    ``stays`` holds ``(stay_id, patient_id)`` pairs.  A patient is only
    placed in train when all of their stays still fit under the target, so
    every patient lands wholly on one side.
    """
    if not (0.0 < ratio < 1.0):
        raise ValueError("ratio must be in (0, 1)")
    groups = _group_by_patient(stays)
    if len(groups) < 2:
        raise ValueError("need at least 2 patients to split")
    n = sum(len(s) for s in groups.values())
    target = min(max(round(ratio * n), 1), n - 1)
    patients = sorted(groups)
    order = np.random.default_rng(seed).permutation(len(patients))
    train, test = [], []
    filled = 0
    for i in order:
        p = patients[i]
        if filled + len(groups[p]) <= target:
            train.append(p)
            filled += len(groups[p])
        else:
            test.append(p)
    if not train:
        train.append(test.pop(0))
    if not test:
        test.append(train.pop())
    return SplitPlan(tuple(sorted(s for p in train for s in groups[p])),
                     tuple(sorted(s for p in test for s in groups[p])), seed, ratio)


def kfold(stays: Sequence[tuple[str, str]], k: int = 5, seed: int = 0,
          labels: Optional[dict[str, int]] = None) -> list[tuple[str, ...]]:
    """Patient-atomic folds, stratified by whether a patient has any positive stay.

    Patients are visited in a seeded order, positives first, and each goes
    to the fold holding the fewest patients of its stratum, then the fewest
    stays, then the lowest index.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    groups = _group_by_patient(stays)
    if len(groups) < k:
        raise ValueError(f"need at least {k} patients for {k} folds, got {len(groups)}")
    labels = labels or {}
    patients = sorted(groups)
    order = [patients[i] for i in np.random.default_rng(seed).permutation(len(patients))]
    stratum = {p: int(any(labels.get(s, 0) for s in groups[p])) for p in patients}
    order.sort(key=lambda p: -stratum[p])       # stable: keeps the shuffle within strata
    per_stratum = np.zeros((2, k), dtype=np.int64)
    sizes = np.zeros(k, dtype=np.int64)
    folds: list[list[str]] = [[] for _ in range(k)]
    for p in order:
        st = stratum[p]
        f = min(range(k), key=lambda j: (per_stratum[st, j], sizes[j], j))
        folds[f].extend(groups[p])
        per_stratum[st, f] += 1
        sizes[f] += len(groups[p])
    return [tuple(sorted(f)) for f in folds]


def undersample(matrix: FeatureMatrix, ratio: float, seed: int = 0) -> FeatureMatrix:
    """Keep every positive and at most ``ratio`` negatives per positive.

    ``ratio`` is the negative count per positive, so 1:3 is ``ratio=3``.
    Output rows are sorted by stay id.
    """
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    y = matrix.labels
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("undersampling needs both classes")
    keep = min(neg.size, int(round(ratio * pos.size)))
    chosen = np.random.default_rng(seed).choice(neg, size=keep, replace=False)
    rows = np.concatenate([pos, chosen])
    rows = sorted(rows.tolist(), key=lambda i: matrix.row_ids[i])
    return matrix.take(rows)


def sampling_ratio(name: str) -> Optional[float]:
    """``"1:3"`` -> 3.0; ``"none"`` -> None."""
    if name == "none":
        return None
    a, b = name.split(":")
    return float(b) / float(a)


# --- metrics --------------------------------------------------------------

def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with half credit for ties."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


class Prf(NamedTuple):
    precision: float
    recall: float
    f1: float
    undefined: tuple = ()       # metrics whose denominator was zero


def prf(scores, labels, threshold: float = 0.5) -> Prf:
    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must be in (0, 1)")
    pred = np.asarray(scores, dtype=np.float64) >= threshold
    y = np.asarray(labels).astype(bool)
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    flags = []
    if tp + fp == 0:
        flags.append("precision")
    if tp + fn == 0:
        flags.append("recall")
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    if p + r == 0:
        flags.append("f1")
        f = 0.0
    else:
        f = 2 * p * r / (p + r)
    return Prf(p, r, f, tuple(flags))


# --- grid -----------------------------------------------------------------

def derive_seed(master: int, *parts) -> int:
    key = "|".join([str(master)] + [str(p) for p in parts]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "big")


@dataclass
class _Fold:
    """Features for one train/test partition, shared by every grid cell."""

    featurizer: Featurizer
    matrices: dict           # (FeatureSet, "train"|"test") -> FeatureMatrix
    sequences: dict          # "train"|"test" -> SequenceData


def _prepare(records, train_ids, test_ids, cfg: PipelineConfig, lexicon, stopwords, need_sequences) -> _Fold:
    by_id = {r.stay_id: r for r in records}
    train = [by_id[s] for s in train_ids]
    test = [by_id[s] for s in test_ids]
    t = cfg.text
    fz = Featurizer.fit([r.day1_text for r in train], lexicon, stopwords, t.min_df, t.cui_min_df,
                        t.semantic_allowlist)
    matrices, sequences = {}, {}
    for side, recs in (("train", train), ("test", test)):
        texts = [r.day1_text for r in recs]
        ids = [r.stay_id for r in recs]
        labels = [int(r.label) for r in recs]
        for name in cfg.eval.feature_sets:
            kind = FeatureSet(name)
            matrices[kind, side] = fz.transform(texts, ids, labels, kind)
        if need_sequences:
            seqs = [fz.id_sequences(x) for x in texts]
            sequences[side] = SequenceData(
                [w for w, _ in seqs], [c for _, c in seqs], len(fz.word_vocab) + 1, len(fz.cui_vocab) + 1,
                {term: i + 1 for i, term in enumerate(fz.word_vocab.terms)})
    return _Fold(fz, matrices, sequences)


def _run_cell(fold: _Fold, kind, algorithm, sampling, cfg, master, fold_tag):
    train = fold.matrices[kind, "train"]
    test = fold.matrices[kind, "test"]
    seqs = fold.sequences.get("train")
    ratio = sampling_ratio(sampling)
    if ratio is not None:
        train = undersample(train, ratio, derive_seed(master, "rus", fold_tag, sampling))
        if seqs is not None:
            where = {r: i for i, r in enumerate(fold.matrices[kind, "train"].row_ids)}
            seqs = seqs.take([where[r] for r in train.row_ids])
    seed = derive_seed(master, "fit", fold_tag, kind.value, algorithm, sampling)
    trained = fit_model(algorithm, train, cfg, seed, seqs)
    scores = trained.scores(test, fold.sequences.get("test"))
    m = prf(scores, test.labels, cfg.eval.threshold)
    metrics = {"auc": roc_auc(scores, test.labels), "precision": m.precision, "recall": m.recall,
               "f1": m.f1}
    return trained, metrics, list(m.undefined), train


def _grid(cfg: PipelineConfig):
    for fs in cfg.eval.feature_sets:
        for alg in cfg.eval.algorithms:
            for sampling in cfg.eval.samplings:
                yield FeatureSet(fs), alg, sampling


def _error_text(exc: Exception) -> str:
    return f"{type(exc).__name__}: {exc}"


def run_heldout(records, plan: SplitPlan, cfg: PipelineConfig, lexicon: ConceptLexicon, stopwords):
    """One row per grid cell, fitted on the train split and scored on the test split."""
    fold = _prepare(records, plan.train, plan.test, cfg, lexicon, stopwords, "CNN" in cfg.eval.algorithms)
    rows, rankings = [], []
    for kind, alg, sampling in _grid(cfg):
        row = {"mode": "heldout", "feature_set": kind.value, "algorithm": alg, "sampling": sampling}
        try:
            trained, metrics, undefined, used = _run_cell(fold, kind, alg, sampling, cfg, cfg.seed, "heldout")
        except Exception as exc:  # recorded, the grid continues
            row.update({"auc": None, "precision": None, "recall": None, "f1": None, "error": _error_text(exc)})
            rows.append(row)
            continue
        row.update(metrics)
        row["n_train"] = used.n_rows
        row["n_train_pos"] = int(used.labels.sum())
        if undefined:
            row["undefined"] = undefined
        rows.append(row)
        if alg in LINEAR_SPECS:
            names = fold.featurizer.feature_names(kind)
            top = top_features(trained.model, names, cfg.eval.top_k)
            rankings.append({"feature_set": kind.value, "algorithm": alg, "sampling": sampling,
                             "features": [[t, w] for t, w in top]})
    return rows, rankings, fold


def run_cv(records, train_ids: Sequence[str], cfg: PipelineConfig, lexicon: ConceptLexicon, stopwords):
    """Per-cell mean and sample sd over k patient-level folds of the train split."""
    by_id = {r.stay_id: r for r in records}
    pairs = [(s, by_id[s].patient_id) for s in train_ids]
    labels = {s: int(by_id[s].label) for s in train_ids}
    folds = kfold(pairs, cfg.eval.k_folds, derive_seed(cfg.seed, "kfold"), labels)
    per_cell: dict = defaultdict(list)
    errors: dict = {}
    for i, held in enumerate(folds):
        held_set = set(held)
        fit_ids = [s for s in sorted(train_ids) if s not in held_set]
        fold = _prepare(records, fit_ids, held, cfg, lexicon, stopwords, "CNN" in cfg.eval.algorithms)
        for kind, alg, sampling in _grid(cfg):
            key = (kind, alg, sampling)
            if key in errors:
                continue
            try:
                _, metrics, _, _ = _run_cell(fold, kind, alg, sampling, cfg, cfg.seed, f"fold{i}")
            except Exception as exc:
                errors[key] = f"fold {i}: {_error_text(exc)}"
                continue
            per_cell[key].append(metrics)
    rows = []
    for key in _grid(cfg):
        kind, alg, sampling = key
        row = {"mode": "cv", "feature_set": kind.value, "algorithm": alg, "sampling": sampling,
               "k_folds": len(folds)}
        if key in errors:
            row.update({"auc": None, "precision": None, "recall": None, "f1": None, "error": errors[key]})
        else:
            for metric in ("auc", "precision", "recall", "f1"):
                vals = np.array([m[metric] for m in per_cell[key]])
                row[metric] = float(vals.mean())
                row[metric + "_sd"] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        rows.append(row)
    return rows, folds


def cohort_summary(records, plan: Optional[SplitPlan] = None) -> dict:
    labels = {r.stay_id: int(r.label) for r in records}
    out = {
        "n_stays": len(records),
        "n_patients": len({r.patient_id for r in records}),
        "n_positive": sum(labels.values()),
        "prevalence": sum(labels.values()) / len(records) if records else 0.0,
    }
    if plan is not None:
        out.update({
            "n_train": len(plan.train), "n_test": len(plan.test),
            "n_train_positive": sum(labels[s] for s in plan.train),
            "n_test_positive": sum(labels[s] for s in plan.test),
            "split_ratio_achieved": plan.achieved_ratio,
        })
    return out


def run_grid(records, cfg: PipelineConfig, lexicon: ConceptLexicon, stopwords=frozenset(),
             modes: Sequence[str] = ("heldout",), extra_summary: Optional[dict] = None) -> dict:
    """Evaluate every (feature set, algorithm, sampling) cell; returns the report dict.

    ``modes`` picks held-out rows, CV rows or both; the vocabulary is always
    fitted on the rows a model trains on.
    """
    if not records:
        raise ValueError("empty cohort")
    if any(r.label is None for r in records):
        raise ValueError("cohort is not labeled")
    bad = set(modes) - {"heldout", "cv"}
    if bad or not modes:
        raise ValueError(f"modes must be drawn from heldout, cv; got {sorted(bad) or 'nothing'}")
    plan = patient_split([(r.stay_id, r.patient_id) for r in records], cfg.eval.split_ratio,
                         derive_seed(cfg.seed, "split"))
    rows, rankings = [], []
    vocab_sizes = {}
    if "heldout" in modes:
        h_rows, rankings, fold = run_heldout(records, plan, cfg, lexicon, stopwords)
        rows += h_rows
        vocab_sizes = {"words": len(fold.featurizer.word_vocab), "cuis": len(fold.featurizer.cui_vocab)}
    if "cv" in modes:
        c_rows, _ = run_cv(records, plan.train, cfg, lexicon, stopwords)
        rows += c_rows
    summary = cohort_summary(records, plan)
    summary.update(extra_summary or {})
    return {
        "report_version": REPORT_VERSION,
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "cohort": summary,
        "vocabulary": vocab_sizes,
        "rows": rows,
        "top_features": rankings,
    }


# --- output ---------------------------------------------------------------

def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def _cell(row, metric):
    v = row.get(metric)
    if v is None:
        return "-"
    if row["mode"] == "cv":
        return f"{v:.4f}±{row[metric + '_sd']:.4f}"
    return f"{v:.4f}"


def report_table(report: dict) -> str:
    """Fixed-width text table, one block per evaluation mode."""
    lines = []
    c = report["cohort"]
    lines.append(f"stays {c['n_stays']}  patients {c['n_patients']}  positive {c['n_positive']}"
                 f"  prevalence {c['prevalence']:.4f}")
    for mode, title in (("heldout", "Held-out test split"), ("cv", "Cross-validation on train split (mean±sd)")):
        rows = [r for r in report["rows"] if r["mode"] == mode]
        if not rows:
            continue
        width = 17 if mode == "cv" else 9
        lines.append("")
        lines.append(title)
        head = f"{'Feature set':<15} {'Algorithm':<9} {'RUS':<5}" + "".join(
            f" {h:>{width}}" for h in ("AUC", "Precision", "Recall", "F1"))
        lines.append(head)
        lines.append("-" * len(head))
        for r in rows:
            line = f"{r['feature_set']:<15} {r['algorithm']:<9} {r['sampling']:<5}" + "".join(
                f" {_cell(r, m):>{width}}" for m in ("auc", "precision", "recall", "f1"))
            if r.get("error"):
                line += f"  error: {r['error']}"
            lines.append(line)
    return "\n".join(lines) + "\n"


def write_ranked_features(path, report: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature_set", "algorithm", "sampling", "rank", "term_or_cui", "weight"])
        for entry in report["top_features"]:
            for rank, (term, weight) in enumerate(entry["features"], start=1):
                w.writerow([entry["feature_set"], entry["algorithm"], entry["sampling"], rank, term, repr(weight)])
