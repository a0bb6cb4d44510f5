"""The eight detector families behind one benign-probability contract.

Every trained :class:`DetectorModel` answers ``benign_proba(X) -> P_b`` for a
batch of permission vectors. A sample is called malware when ``P_b <= 0.5``,
so an exact tie fails closed.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..core import LabeledDataset, Vocabulary, make_vocabulary, split_kfold
from ..errors import IndexOutOfRange, SingleClassDataset, UnsupportedModel, VocabularyMismatch
from .boosting import AdaBoostSAMMER, GradientBoosting
from .linear import LinearSVM, LogisticRegression
from .mlp import MLP
from .trees import DecisionTree, Forest

ALGORITHMS = ("LR", "SVM", "DT", "RF", "AB", "GB", "ET", "DNN")
TREE_BASED = ("DT", "RF", "ET", "AB", "GB")
MODEL_FORMAT = "permevade.detector/1"

DEFAULT_HYPERPARAMETERS = {
    "LR": {"C": 1.0, "max_iter": 500, "tol": 1e-6, "class_weight": "balanced"},
    "SVM": {"C": 1.0, "max_iter": 1000, "tol": 1e-6, "class_weight": "balanced"},
    "DT": {"max_depth": None, "min_samples_split": 2},
    "RF": {"n_estimators": 100, "max_depth": None, "min_samples_split": 2,
           "max_features": "sqrt", "bootstrap": True},
    "AB": {"n_estimators": 100, "learning_rate": 1.0, "max_depth": 1},
    "GB": {"n_estimators": 100, "learning_rate": 0.1, "max_depth": 3, "min_samples_split": 2},
    # max_depth 0 means unlimited
    "ET": {"n_estimators": 10, "max_depth": 0, "min_samples_split": 2,
           "max_features": "sqrt", "bootstrap": False},
    "DNN": {"hidden": 100, "batch_size": 200, "learning_rate": 1e-3, "alpha": 1e-4,
            "max_iter": 200, "tol": 1e-4, "n_iter_no_change": 10},
}

_POSITIVE = ("C", "max_iter", "tol", "n_estimators", "learning_rate", "hidden", "batch_size")


@dataclass(frozen=True)
class DetectorSpec:
    algorithm: str
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        defaults = DEFAULT_HYPERPARAMETERS[self.algorithm]
        unknown = set(self.hyperparameters) - set(defaults)
        if unknown:
            raise ValueError(f"{self.algorithm} does not accept {sorted(unknown)}")
        merged = {**defaults, **self.hyperparameters}
        for key in _POSITIVE:
            if key in merged and not merged[key] > 0:
                raise ValueError(f"{self.algorithm}.{key} must be positive, got {merged[key]!r}")
        if merged.get("max_depth") is not None and merged["max_depth"] < 0:
            raise ValueError("max_depth must be non-negative or None")
        object.__setattr__(self, "hyperparameters", merged)

    def to_dict(self):
        return {"algorithm": self.algorithm, "hyperparameters": dict(self.hyperparameters), "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(d["algorithm"], dict(d.get("hyperparameters", {})), int(d.get("seed", 0)))


def _estimator_hyper(spec):
    h = dict(spec.hyperparameters)
    if spec.algorithm in ("RF", "ET") and h.get("max_depth") == 0:
        h["max_depth"] = None
    return h


_CLASSES = {"LR": LogisticRegression, "SVM": LinearSVM, "DT": DecisionTree, "RF": Forest,
            "ET": Forest, "AB": AdaBoostSAMMER, "GB": GradientBoosting, "DNN": MLP}


def _build_estimator(spec: DetectorSpec):
    return _CLASSES[spec.algorithm](seed=spec.seed, **_estimator_hyper(spec))


class DetectorModel:
    """A trained detector bound to an ordered feature list."""

    def __init__(self, spec: DetectorSpec, estimator, vocabulary: Vocabulary,
                 feature_indices=None, model_id=None, training_log=None):
        self.spec = spec
        self.estimator = estimator
        self.vocabulary = vocabulary
        self.feature_indices = None if feature_indices is None else [int(i) for i in feature_indices]
        self.training_log = dict(training_log or {})
        self.model_id = model_id or f"{spec.algorithm}-{self.digest()[:10]}"

    @property
    def n_features(self):
        return self.vocabulary.size

    @property
    def algorithm(self):
        return self.spec.algorithm

    def benign_proba(self, X):
        X = np.asarray(X)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise VocabularyMismatch(f"model {self.model_id} expects {self.n_features} features, got {X.shape[1]}")
        if hasattr(self.estimator, "benign_proba"):
            p = self.estimator.benign_proba(X)
        else:
            p = 1.0 - self.estimator.malware_proba(X)
        return np.clip(p, 0.0, 1.0)

    def to_dict(self, include_id=True):
        d = {
            "format": MODEL_FORMAT,
            "spec": self.spec.to_dict(),
            "features": list(self.vocabulary.names),
            "feature_indices": self.feature_indices,
            "params": self.estimator.params(),
            "training_log": self.training_log,
        }
        if include_id:
            d["model_id"] = self.model_id
        return d

    def digest(self):
        blob = json.dumps(self.to_dict(include_id=False), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model format {d.get('format')!r}")
        spec = DetectorSpec.from_dict(d["spec"])
        est = _CLASSES[spec.algorithm].from_params(d["params"], seed=spec.seed, **_estimator_hyper(spec))
        return cls(spec, est, make_vocabulary(d["features"]), d.get("feature_indices"),
                   d.get("model_id"), d.get("training_log"))


def save_model(model: DetectorModel, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_model(path) -> DetectorModel:
    with open(path, encoding="utf-8") as fh:
        return DetectorModel.from_dict(json.load(fh))


def train_model(spec: DetectorSpec, train: LabeledDataset, model_id=None, feature_indices=None) -> DetectorModel:
    counts = train.class_counts()
    if counts[0] == 0 or counts[1] == 0:
        raise SingleClassDataset(f"training data must contain both classes, got {counts}")
    est = _build_estimator(spec)
    est.fit(train.X, train.y)
    log = {"n_train": len(train), "class_counts": [counts[0], counts[1]]}
    for attr in ("converged_", "n_iter_"):
        if getattr(est, attr, None) is not None:
            log[attr.rstrip("_")] = getattr(est, attr)
    return DetectorModel(spec, est, train.vocabulary, feature_indices, model_id, log)


def predict_benign_prob(model, x):
    """P_b for one vector (returns float) or a batch (returns array)."""
    x = np.asarray(x)
    p = model.benign_proba(x if x.ndim == 2 else x[None, :])
    return float(p[0]) if x.ndim == 1 else p


# ------------------------------------------------------------------ metrics

@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self):
        return (self.tp + self.tn) / self.total if self.total else 0.0

    def to_dict(self):
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn, "accuracy": self.accuracy}


def accuracy(tp, tn, fp, fn):
    return Metrics(tp, fp, tn, fn).accuracy


def evaluate(model, test: LabeledDataset, threshold: float = 0.5) -> Metrics:
    """Malware is the positive class; ``P_b <= threshold`` predicts malware."""
    if len(test) == 0:
        raise ValueError("test set is empty")
    pred_mal = model.benign_proba(test.X) <= threshold
    actual_mal = test.y == 1
    return Metrics(tp=int(np.sum(pred_mal & actual_mal)), fp=int(np.sum(pred_mal & ~actual_mal)),
                   tn=int(np.sum(~pred_mal & ~actual_mal)), fn=int(np.sum(~pred_mal & actual_mal)))


@dataclass
class CVResult:
    mean_accuracy: float
    folds: list


def cross_validate(spec: DetectorSpec, dataset: LabeledDataset, k: int = 5, seed: int = 0) -> CVResult:
    assignment = split_kfold(dataset, k, seed)
    folds = []
    for f in range(k):
        model = train_model(spec, dataset.take(assignment.train_indices(f)))
        folds.append(evaluate(model, dataset.take(assignment.test_indices(f))))
    return CVResult(float(np.mean([m.accuracy for m in folds])), folds)


# ---------------------------------------------------------- importance

@dataclass(frozen=True)
class ImportanceRanking:
    scores: np.ndarray
    order: tuple

    @classmethod
    def from_scores(cls, scores):
        scores = np.asarray(scores, dtype=float)
        # descending score, ties -> lower index
        order = tuple(int(i) for i in np.lexsort((np.arange(len(scores)), -scores)))
        return cls(scores, order)

    def to_dict(self, vocabulary=None):
        d = {"scores": [float(s) for s in self.scores], "order": list(self.order)}
        if vocabulary is not None:
            d["names"] = [vocabulary.names[i] for i in self.order]
        return d


def feature_importance(model: DetectorModel) -> ImportanceRanking:
    """Normalized mean impurity decrease per feature for tree-based detectors."""
    if model.algorithm not in TREE_BASED:
        raise UnsupportedModel(f"feature importance needs a tree model, got {model.algorithm}")
    return ImportanceRanking.from_scores(model.estimator.feature_importances())


def select_top_k(ranking: ImportanceRanking, k: int) -> list:
    if not 1 <= k <= len(ranking.order):
        raise IndexOutOfRange(f"k={k} outside [1, {len(ranking.order)}]")
    return list(ranking.order[:k])
