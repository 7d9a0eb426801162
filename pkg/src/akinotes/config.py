"""One JSON configuration file with a section per pipeline stage.

Unknown sections or keys are rejected so typos never pass silently.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Optional

from .ingest import CohortConfig
from .kdigo import KdigoConfig
from .synth import SynthConfig

ALGORITHMS = ("NB", "L2-SVM", "L1-SVM", "L2-LR", "L1-LR", "RF", "GBDT", "CNN")
SAMPLINGS = ("none", "1:1", "1:2", "1:3")
FEATURE_SETS = ("Words", "Cuis", "WordsPlusCuis")


class ConfigError(ValueError):
    pass


@dataclass
class CohortSection:
    min_age: float = 18.0
    day1_hours: float = 24.0
    labs_horizon_hours: float = 72.0
    insufficient: str = "exclude"        # or "negative"
    exclusion_terms_path: Optional[str] = None

    def cohort_config(self) -> CohortConfig:
        return CohortConfig(self.min_age, self.day1_hours, self.labs_horizon_hours)


@dataclass
class TextSection:
    min_df: int = 100
    cui_min_df: Optional[int] = None     # falls back to min_df
    stopwords_path: Optional[str] = None
    lexicon_path: Optional[str] = None   # default: lexicon.tsv in the data directory
    semantic_allowlist: list = field(default_factory=list)


@dataclass
class LinearSection:
    lambda_l2: float = 1e-3
    lambda_l1: float = 5e-4
    max_iter: int = 5000
    tol: float = 1e-8


@dataclass
class NbSection:
    alpha: float = 1.0


@dataclass
class RfSection:
    n_trees: int = 200
    max_depth: int = 12
    min_leaf: int = 1
    mtry: Optional[int] = None


@dataclass
class GbdtSection:
    n_rounds: int = 100
    max_depth: int = 3
    eta: float = 0.1
    min_leaf: int = 1
    subsample: float = 1.0


@dataclass
class CnnSection:
    embed_dim: int = 100
    filter_widths: list = field(default_factory=lambda: [3, 4, 5])
    filters_per_width: int = 100
    max_seq_len: int = 4000
    dropout_rate: float = 0.5
    lr: float = 0.05
    epochs: int = 10
    batch_size: int = 32
    embeddings_path: Optional[str] = None


@dataclass
class EvalSection:
    split_ratio: float = 0.7
    k_folds: int = 5
    threshold: float = 0.5
    top_k: int = 30
    feature_sets: list = field(default_factory=lambda: list(FEATURE_SETS))
    algorithms: list = field(default_factory=lambda: [a for a in ALGORITHMS if a != "CNN"])
    samplings: list = field(default_factory=lambda: ["none", "1:1"])
    cv: bool = False

    def validate(self):
        if not (0.0 < self.split_ratio < 1.0):
            raise ConfigError("eval.split_ratio must be in (0, 1)")
        if self.k_folds < 2:
            raise ConfigError("eval.k_folds must be >= 2")
        if not (0.0 < self.threshold < 1.0):
            raise ConfigError("eval.threshold must be in (0, 1)")
        for name, allowed in (("feature_sets", FEATURE_SETS), ("algorithms", ALGORITHMS),
                              ("samplings", SAMPLINGS)):
            values = getattr(self, name)
            if not values:
                raise ConfigError(f"eval.{name} must not be empty")
            bad = [v for v in values if v not in allowed]
            if bad:
                raise ConfigError(f"eval.{name}: unknown {bad}; choose from {list(allowed)}")


@dataclass
class PipelineConfig:
    seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    cohort: CohortSection = field(default_factory=CohortSection)
    kdigo: KdigoConfig = field(default_factory=KdigoConfig)
    text: TextSection = field(default_factory=TextSection)
    linear: LinearSection = field(default_factory=LinearSection)
    nb: NbSection = field(default_factory=NbSection)
    rf: RfSection = field(default_factory=RfSection)
    gbdt: GbdtSection = field(default_factory=GbdtSection)
    cnn: CnnSection = field(default_factory=CnnSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def __post_init__(self):
        if self.cohort.insufficient not in ("exclude", "negative"):
            raise ConfigError("cohort.insufficient must be 'exclude' or 'negative'")
        if self.text.min_df < 1:
            raise ConfigError("text.min_df must be >= 1")
        self.eval.validate()

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        kwargs = {}
        known = {f.name: f for f in fields(cls)}
        for key, value in d.items():
            if key not in known:
                raise ConfigError(f"unknown config section {key!r}")
            if key == "seed":
                kwargs[key] = int(value)
                continue
            section_type = type(known[key].default_factory())
            kwargs[key] = _section(section_type, key, value)
        try:
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _section(section_type, name, value):
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    allowed = {f.name for f in fields(section_type) if f.init}
    unknown = sorted(set(value) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in section {name!r}")
    try:
        return section_type(**value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {name!r}: {exc}") from exc


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if is_dataclass(obj):
        return _plain(asdict(obj))
    return obj
