"""Algorithm registry: fit any grid algorithm, score it, and persist it.

Models are saved in a versioned JSON container tagged with the model kind,
the algorithm name and the feature set it was trained on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .config import PipelineConfig
from .features import FeatureMatrix, FeatureSet
from .linear_models import (LinearModel, Loss, NbModel, Penalty, SolverOptions, train_linear,
                            train_nb)
from .neural import CnnConfig, CnnDataset, CnnModel, init_model, load_embeddings, train_cnn
from .trees import ForestModel, ForestParams, GbdtModel, GbdtParams, train_gbdt, train_random_forest

CONTAINER_FORMAT = "akinotes-model"
CONTAINER_VERSION = 1

LINEAR_SPECS = {
    "L2-SVM": (Loss.HINGE, Penalty.L2),
    "L1-SVM": (Loss.HINGE, Penalty.L1),
    "L2-LR": (Loss.LOGISTIC, Penalty.L2),
    "L1-LR": (Loss.LOGISTIC, Penalty.L1),
}
_KIND = {"NB": "nb", "RF": "rf", "GBDT": "gbdt", "CNN": "cnn", **{a: "linear" for a in LINEAR_SPECS}}
_CLASSES = {"nb": NbModel, "linear": LinearModel, "rf": ForestModel, "gbdt": GbdtModel, "cnn": CnnModel}
_CHANNELS = {
    FeatureSet.WORDS: ("word",),
    FeatureSet.CUIS: ("cui",),
    FeatureSet.WORDS_PLUS_CUIS: ("word", "cui"),
}


@dataclass
class SequenceData:
    """Id sequences for the CNN, aligned with the rows of a feature matrix."""

    word_ids: list
    cui_ids: list
    word_vocab_size: int       # including the pad id
    cui_vocab_size: int
    word_index: Optional[dict] = None

    def take(self, positions) -> "SequenceData":
        return replace(self, word_ids=[self.word_ids[i] for i in positions],
                       cui_ids=[self.cui_ids[i] for i in positions])


@dataclass
class TrainedModel:
    algorithm: str
    feature_set: FeatureSet
    model: object

    @property
    def kind(self) -> str:
        return _KIND[self.algorithm]

    def scores(self, matrix: FeatureMatrix, sequences: Optional[SequenceData] = None) -> np.ndarray:
        """Positive-class probability per row."""
        if self.kind == "cnn":
            if sequences is None:
                raise ValueError("the CNN needs id sequences to score")
            return self.model.predict_proba(sequences.word_ids, sequences.cui_ids)
        return self.model.predict_proba(matrix)

    def to_dict(self) -> dict:
        return {
            "format": CONTAINER_FORMAT,
            "version": CONTAINER_VERSION,
            "kind": self.kind,
            "algorithm": self.algorithm,
            "feature_set": self.feature_set.value,
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedModel":
        if d.get("format") != CONTAINER_FORMAT:
            raise ValueError("not a model container")
        if d.get("version") != CONTAINER_VERSION:
            raise ValueError(f"unsupported model container version {d.get('version')!r}")
        algorithm = d["algorithm"]
        if _KIND.get(algorithm) != d["kind"]:
            raise ValueError(f"algorithm {algorithm!r} does not match kind {d['kind']!r}")
        return cls(algorithm, FeatureSet(d["feature_set"]), _CLASSES[d["kind"]].from_dict(d["model"]))


def save_model(path, trained: TrainedModel) -> None:
    Path(path).write_text(json.dumps(trained.to_dict(), sort_keys=True) + "\n", encoding="utf-8")


def load_model(path) -> TrainedModel:
    with open(path, encoding="utf-8") as fh:
        return TrainedModel.from_dict(json.load(fh))


def cnn_config(cfg: PipelineConfig, feature_set: FeatureSet, sequences: SequenceData, seed: int) -> CnnConfig:
    c = cfg.cnn
    return CnnConfig(
        embed_dim=c.embed_dim, filter_widths=tuple(c.filter_widths), filters_per_width=c.filters_per_width,
        word_vocab_size=sequences.word_vocab_size, cui_vocab_size=sequences.cui_vocab_size,
        max_seq_len=c.max_seq_len, dropout_rate=c.dropout_rate, lr=c.lr, epochs=c.epochs,
        batch_size=c.batch_size, seed=seed, channels=_CHANNELS[FeatureSet(feature_set)],
    )


def fit_model(algorithm: str, train: FeatureMatrix, cfg: PipelineConfig, seed: int,
              sequences: Optional[SequenceData] = None) -> TrainedModel:
    """Fit ``algorithm`` on ``train`` with hyperparameters from ``cfg``."""
    if algorithm not in _KIND:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if algorithm == "NB":
        model = train_nb(train, cfg.nb.alpha)
    elif algorithm in LINEAR_SPECS:
        loss, penalty = LINEAR_SPECS[algorithm]
        lam = cfg.linear.lambda_l1 if penalty is Penalty.L1 else cfg.linear.lambda_l2
        model = train_linear(train, loss, penalty, lam,
                             SolverOptions(cfg.linear.max_iter, cfg.linear.tol, seed))
    elif algorithm == "RF":
        r = cfg.rf
        model = train_random_forest(train, ForestParams(r.n_trees, r.max_depth, r.min_leaf, r.mtry, True, seed))
    elif algorithm == "GBDT":
        g = cfg.gbdt
        model = train_gbdt(train, GbdtParams(g.n_rounds, g.max_depth, g.eta, g.min_leaf, g.subsample, seed))
    else:
        if sequences is None:
            raise ValueError("the CNN needs id sequences to train")
        ccfg = cnn_config(cfg, train.feature_set, sequences, seed)
        embeddings = None
        if cfg.cnn.embeddings_path and "word" in ccfg.channels and sequences.word_index:
            embeddings = {"word": load_embeddings(cfg.cnn.embeddings_path, sequences.word_index,
                                                  ccfg.embed_dim, ccfg.word_vocab_size, seed)}
        model, _ = train_cnn(init_model(ccfg, seed, embeddings),
                             CnnDataset(sequences.word_ids, sequences.cui_ids, train.labels), ccfg)
    return TrainedModel(algorithm, train.feature_set, model)
