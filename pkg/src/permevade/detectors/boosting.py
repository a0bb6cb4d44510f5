"""Boosted tree ensembles: real-valued AdaBoost (SAMME.R) and log-loss gradient boosting."""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from .trees import Tree, grow_tree

_EPS = np.finfo(float).eps


class AdaBoostSAMMER:
    """Two-class SAMME.R with depth-limited Gini trees (stumps by default).

    Each stage contributes half the log-odds of its weighted leaf class
    fractions; the ensemble probability is the sigmoid of the stage-averaged
    log-odds. Always fits exactly ``n_estimators`` stages.
    """

    def __init__(self, n_estimators=100, learning_rate=1.0, max_depth=1, seed=0):
        if n_estimators < 1 or learning_rate <= 0:
            raise ValueError("n_estimators and learning_rate must be positive")
        self.n_estimators = n_estimators
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.seed = seed
        self.trees_ = []

    @staticmethod
    def _log_odds(tree, X):
        p1 = np.clip(tree.predict(X), _EPS, 1 - _EPS)
        return np.log(p1) - np.log1p(-p1)

    def fit(self, X, y, sample_weight=None):
        X = np.asarray(X, dtype=np.uint8)
        y = np.asarray(y, dtype=float)
        n = X.shape[0]
        w = np.full(n, 1.0 / n) if sample_weight is None else np.asarray(sample_weight, float) / np.sum(sample_weight)
        sign = np.where(y == 1, 1.0, -1.0)
        self.trees_ = []
        for _ in range(self.n_estimators):
            tree = grow_tree(X, y, w, max_depth=self.max_depth)
            self.trees_.append(tree)
            # w_i *= exp(-lr/2 * (log p_true - log p_other))
            w = w * np.exp(-0.5 * self.learning_rate * sign * self._log_odds(tree, X))
            total = w.sum()
            if not np.isfinite(total) or total <= 0:
                w = np.full(n, 1.0 / n)
            else:
                w = w / total
        self.n_features_ = X.shape[1]
        return self

    def decision_function(self, X):
        return np.mean([self._log_odds(t, X) for t in self.trees_], axis=0)

    def malware_proba(self, X):
        return expit(self.decision_function(X))

    @property
    def trees(self):
        return self.trees_

    def feature_importances(self):
        imp = np.zeros(self.n_features_)
        for t in self.trees_:
            ti = t.importances(self.n_features_)
            if ti.sum() > 0:
                imp += ti / ti.sum()
        return imp / imp.sum() if imp.sum() > 0 else imp

    def params(self):
        return {"n_features": self.n_features_, "trees": [t.to_dict() for t in self.trees_]}

    @classmethod
    def from_params(cls, params, **hyper):
        obj = cls(**hyper)
        obj.n_features_ = params["n_features"]
        obj.trees_ = [Tree.from_dict(t) for t in params["trees"]]
        return obj


class GradientBoosting:
    """Binomial-deviance gradient boosting with Friedman-MSE regression trees.

    Starts from the prior log-odds; every stage fits a depth-limited tree to
    the residuals ``y - p`` and replaces each leaf by its Newton step
    ``sum(r) / sum(p (1 - p))``.
    """

    def __init__(self, n_estimators=100, learning_rate=0.1, max_depth=3, min_samples_split=2, seed=0):
        if n_estimators < 1 or learning_rate <= 0 or max_depth < 1:
            raise ValueError("n_estimators, learning_rate and max_depth must be positive")
        self.n_estimators = n_estimators
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.seed = seed
        self.trees_ = []

    def fit(self, X, y, sample_weight=None):
        X = np.asarray(X, dtype=np.uint8)
        y = np.asarray(y, dtype=float)
        w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        prior = np.clip(np.average(y, weights=w), _EPS, 1 - _EPS)
        self.init_ = float(np.log(prior / (1 - prior)))
        F = np.full(len(y), self.init_)
        self.trees_ = []
        for _ in range(self.n_estimators):
            p = expit(F)
            resid = y - p
            tree = grow_tree(X, resid, w, criterion="friedman_mse", max_depth=self.max_depth,
                             min_samples_split=self.min_samples_split)
            leaves = tree.apply(X)
            num = np.bincount(leaves, weights=w * resid, minlength=tree.node_count)
            den = np.bincount(leaves, weights=w * p * (1 - p), minlength=tree.node_count)
            is_leaf = tree.feature == -1
            step = np.zeros(tree.node_count)
            ok = is_leaf & (np.abs(den) > 1e-150)
            step[ok] = num[ok] / den[ok]
            tree.value = np.where(is_leaf, step, tree.value)
            F = F + self.learning_rate * tree.value[leaves]
            self.trees_.append(tree)
        self.n_features_ = X.shape[1]
        return self

    def decision_function(self, X):
        F = np.full(np.asarray(X).shape[0], self.init_)
        for t in self.trees_:
            F = F + self.learning_rate * t.predict(X)
        return F

    def malware_proba(self, X):
        return expit(self.decision_function(X))

    @property
    def trees(self):
        return self.trees_

    def feature_importances(self):
        imp = np.zeros(self.n_features_)
        for t in self.trees_:
            imp += t.importances(self.n_features_)
        return imp / imp.sum() if imp.sum() > 0 else imp

    def params(self):
        return {"n_features": self.n_features_, "init": self.init_,
                "trees": [t.to_dict() for t in self.trees_]}

    @classmethod
    def from_params(cls, params, **hyper):
        obj = cls(**hyper)
        obj.n_features_ = params["n_features"]
        obj.init_ = params["init"]
        obj.trees_ = [Tree.from_dict(t) for t in params["trees"]]
        return obj
