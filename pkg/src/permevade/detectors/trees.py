"""Decision trees over binary features, and the bagging ensembles built from them.

Every split tests a single bit: rows with the bit clear go left, rows with
it set go right. On 0/1 inputs that is the only distinct split a feature
offers, so a feature is never reused along one root-to-leaf path and tree
depth is bounded by the feature count.
"""
from __future__ import annotations

import math

import numpy as np

LEAF = -1


class Tree:
    """Flat-array tree. ``value`` is P(malware) for classifiers, the leaf output for regressors."""

    def __init__(self, feature, left, right, value, impurity, weight):
        self.feature = np.asarray(feature, dtype=np.intp)
        self.left = np.asarray(left, dtype=np.intp)
        self.right = np.asarray(right, dtype=np.intp)
        self.value = np.asarray(value, dtype=float)
        self.impurity = np.asarray(impurity, dtype=float)
        self.weight = np.asarray(weight, dtype=float)

    @property
    def node_count(self):
        return len(self.feature)

    @property
    def depth(self):
        depth = np.zeros(self.node_count, dtype=int)
        for i in range(self.node_count):     # pre-order: parents precede children
            if self.feature[i] != LEAF:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X):
        """Leaf index reached by every row of ``X``."""
        X = np.asarray(X)
        node = np.zeros(X.shape[0], dtype=np.intp)
        active = np.arange(X.shape[0])
        while active.size:
            f = self.feature[node[active]]
            internal = f != LEAF
            active, f = active[internal], f[internal]
            if not active.size:
                break
            bit = X[active, f]
            cur = node[active]
            node[active] = np.where(bit == 1, self.right[cur], self.left[cur])
        return node

    def predict(self, X):
        return self.value[self.apply(X)]

    def importances(self, n_features):
        """Total weighted impurity decrease per feature (unnormalized)."""
        imp = np.zeros(n_features)
        for i in np.flatnonzero(self.feature != LEAF):
            l, r = self.left[i], self.right[i]
            imp[self.feature[i]] += (self.weight[i] * self.impurity[i]
                                     - self.weight[l] * self.impurity[l]
                                     - self.weight[r] * self.impurity[r])
        return np.maximum(imp, 0.0)

    def to_dict(self, node=0):
        rec = {"value": float(self.value[node]), "impurity": float(self.impurity[node]),
               "weight": float(self.weight[node])}
        if self.feature[node] != LEAF:
            rec["feature"] = int(self.feature[node])
            rec["left"] = self.to_dict(self.left[node])
            rec["right"] = self.to_dict(self.right[node])
        return rec

    @classmethod
    def from_dict(cls, rec):
        cols = {k: [] for k in ("feature", "left", "right", "value", "impurity", "weight")}

        def visit(r):
            i = len(cols["feature"])
            for k in cols:
                cols[k].append(LEAF)
            cols["value"][i] = r["value"]
            cols["impurity"][i] = r["impurity"]
            cols["weight"][i] = r["weight"]
            if "feature" in r:
                cols["feature"][i] = r["feature"]
                cols["left"][i] = visit(r["left"])
                cols["right"][i] = visit(r["right"])
            return i

        visit(rec)
        return cls(**cols)


def _resolve_max_features(max_features, n_features):
    if max_features is None:
        return n_features
    if max_features == "sqrt":
        return max(1, int(math.sqrt(n_features)))
    if max_features == "log2":
        return max(1, int(math.log2(n_features)))
    if isinstance(max_features, float):
        return max(1, int(max_features * n_features))
    return max(1, min(int(max_features), n_features))


def grow_tree(X, y, sample_weight=None, *, criterion="gini", max_depth=None,
              min_samples_split=2, max_features=None, rng=None):
    """Greedy top-down induction.

    ``criterion="gini"`` expects y in {0, 1} and stores weighted P(y=1) per
    node. ``criterion="friedman_mse"`` treats y as real-valued and stores the
    weighted mean. With ``max_features`` set, features are visited in a random
    order and the best split among the first ``max_features`` non-constant
    ones is taken; otherwise all features are scanned and ties go to the
    lowest feature index. Any valid split is taken even if it does not
    reduce impurity, so growth only stops at pure or constant nodes.
    """
    X = np.asarray(X, dtype=np.uint8)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    keep = w > 0
    X, y, w = X[keep], y[keep], w[keep]
    m = _resolve_max_features(max_features, k)
    if m < k and rng is None:
        raise ValueError("feature subsampling needs an rng")
    regression = criterion == "friedman_mse"
    if criterion not in ("gini", "friedman_mse"):
        raise ValueError(f"unknown criterion {criterion!r}")

    cols = {c: [] for c in ("feature", "left", "right", "value", "impurity", "weight")}

    def node_stats(wy, wsum, wyy):
        mean = wy / wsum
        if regression:
            return mean, max(wyy / wsum - mean * mean, 0.0)
        return mean, 2.0 * mean * (1.0 - mean)      # gini for two classes

    def best_split(Xn, yn, wn, wsum, wy):
        if m < k:
            order = rng.permutation(k)
        else:
            order = np.arange(k)
        Xo = Xn[:, order].astype(float)
        w_r = wn @ Xo
        wy_r = (wn * yn) @ Xo
        w_l = wsum - w_r
        wy_l = wy - wy_r
        valid = (w_r > 0) & (w_l > 0)
        if not valid.any():
            return None
        if m < k:
            # only the first m non-constant features in the random order are eligible
            eligible = np.cumsum(valid) <= m
            valid &= eligible
        with np.errstate(divide="ignore", invalid="ignore"):
            if regression:
                diff = wy_l / w_l - wy_r / w_r
                score = w_l * w_r * diff * diff / wsum
            else:
                p_l, p_r = wy_l / w_l, wy_r / w_r
                child = w_l * 2 * p_l * (1 - p_l) + w_r * 2 * p_r * (1 - p_r)
                score = -child
        score = np.where(valid, score, -np.inf)
        return int(order[int(np.argmax(score))])

    def build(rows, depth):
        Xn, yn, wn = X[rows], y[rows], w[rows]
        wsum = wn.sum()
        wy = wn @ yn
        wyy = wn @ (yn * yn)
        value, impurity = node_stats(wy, wsum, wyy)
        i = len(cols["feature"])
        for c, v in (("feature", LEAF), ("left", LEAF), ("right", LEAF),
                     ("value", value), ("impurity", impurity), ("weight", wsum)):
            cols[c].append(v)
        if (impurity <= 1e-15 or len(rows) < min_samples_split
                or (max_depth is not None and depth >= max_depth)):
            return i
        f = best_split(Xn, yn, wn, wsum, wy)
        if f is None:
            return i
        bit = Xn[:, f] == 1
        cols["feature"][i] = f
        cols["left"][i] = build(rows[~bit], depth + 1)
        cols["right"][i] = build(rows[bit], depth + 1)
        return i

    if len(y) == 0:
        raise ValueError("cannot grow a tree on zero weighted samples")
    build(np.arange(len(y)), 0)
    return Tree(**cols)


class DecisionTree:
    """Single Gini tree; predicts P(malware) as the leaf class fraction."""

    kind = "DT"

    def __init__(self, max_depth=None, min_samples_split=2, max_features=None, seed=0):
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.max_features = max_features
        self.seed = seed
        self.tree_ = None

    def fit(self, X, y, sample_weight=None):
        rng = np.random.default_rng(self.seed)
        self.tree_ = grow_tree(X, y, sample_weight, max_depth=self.max_depth,
                               min_samples_split=self.min_samples_split,
                               max_features=self.max_features, rng=rng)
        self.n_features_ = np.asarray(X).shape[1]
        return self

    def malware_proba(self, X):
        return self.tree_.predict(X)

    @property
    def trees(self):
        return [self.tree_]

    def feature_importances(self):
        imp = self.tree_.importances(self.n_features_)
        return imp / imp.sum() if imp.sum() > 0 else imp

    def params(self):
        return {"n_features": self.n_features_, "tree": self.tree_.to_dict()}

    @classmethod
    def from_params(cls, params, **hyper):
        obj = cls(**hyper)
        obj.n_features_ = params["n_features"]
        obj.tree_ = Tree.from_dict(params["tree"])
        return obj


class Forest:
    """Averaging ensemble of Gini trees.

    ``bootstrap=True`` with sqrt feature sampling is a random forest. With
    ``bootstrap=False`` it is the extra-trees variant: each tree sees all rows
    and picks, per node, the best of a random subset of features. On binary
    inputs the random cut point that extra-trees draws between a feature's
    min and max always separates 0 from 1, so no threshold draw is needed.
    """

    def __init__(self, n_estimators=100, max_depth=None, min_samples_split=2,
                 max_features="sqrt", bootstrap=True, seed=0):
        if n_estimators < 1:
            raise ValueError("n_estimators must be positive")
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.seed = seed
        self.trees_ = []

    def fit(self, X, y, sample_weight=None):
        X = np.asarray(X, dtype=np.uint8)
        n = X.shape[0]
        base = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        rng = np.random.default_rng(self.seed)
        self.trees_ = []
        for _ in range(self.n_estimators):
            w = base
            if self.bootstrap:
                w = base * np.bincount(rng.integers(0, n, n), minlength=n)
            self.trees_.append(grow_tree(X, y, w, max_depth=self.max_depth,
                                         min_samples_split=self.min_samples_split,
                                         max_features=self.max_features, rng=rng))
        self.n_features_ = X.shape[1]
        return self

    def malware_proba(self, X):
        return np.mean([t.predict(X) for t in self.trees_], axis=0)

    @property
    def trees(self):
        return self.trees_

    def feature_importances(self):
        per_tree = []
        for t in self.trees_:
            imp = t.importances(self.n_features_)
            if imp.sum() > 0:
                per_tree.append(imp / imp.sum())
        if not per_tree:
            return np.zeros(self.n_features_)
        avg = np.mean(per_tree, axis=0)
        return avg / avg.sum()

    def params(self):
        return {"n_features": self.n_features_, "trees": [t.to_dict() for t in self.trees_]}

    @classmethod
    def from_params(cls, params, **hyper):
        obj = cls(**hyper)
        obj.n_features_ = params["n_features"]
        obj.trees_ = [Tree.from_dict(t) for t in params["trees"]]
        return obj
