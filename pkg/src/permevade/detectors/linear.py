"""L2-regularized linear detectors.

Both models keep a *benign-oriented* margin ``z = w.x + b``: larger means
more benign. Class weights are inverse class frequency ("balanced").
"""
from __future__ import annotations

import logging

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit

log = logging.getLogger(__name__)


def balanced_weights(y):
    y = np.asarray(y)
    n = len(y)
    counts = np.bincount(y.astype(int), minlength=2)
    per_class = n / (2.0 * counts.astype(float))
    return per_class[y.astype(int)]


class _LinearBase:
    def __init__(self, C=1.0, max_iter=500, tol=1e-6, class_weight="balanced", seed=0):
        if C <= 0 or max_iter < 1 or tol <= 0:
            raise ValueError("C, max_iter and tol must be positive")
        self.C = C
        self.max_iter = max_iter
        self.tol = tol
        self.class_weight = class_weight
        self.seed = seed
        self.coef_ = None
        self.intercept_ = 0.0
        self.converged_ = None
        self.n_iter_ = 0

    def margin(self, X):
        return np.asarray(X, dtype=float) @ self.coef_ + self.intercept_

    def _solve(self, fun, k):
        res = minimize(fun, np.zeros(k + 1), jac=True, method="L-BFGS-B",
                       options={"maxiter": self.max_iter, "gtol": self.tol, "ftol": 64 * np.finfo(float).eps})
        self.converged_ = bool(res.success)
        self.n_iter_ = int(res.nit)
        if not res.success:
            log.warning("%s did not converge in %d iterations: %s",
                        type(self).__name__, self.max_iter, res.message)
        self.coef_ = res.x[:k].copy()
        self.intercept_ = float(res.x[k])

    def _weights(self, y):
        if self.class_weight == "balanced":
            return balanced_weights(y)
        return np.ones(len(y))

    def params(self):
        return {"coef": self.coef_.tolist(), "intercept": self.intercept_,
                "converged": self.converged_, "n_iter": self.n_iter_}

    @classmethod
    def from_params(cls, params, **hyper):
        obj = cls(**hyper)
        obj.coef_ = np.array(params["coef"], dtype=float)
        obj.intercept_ = float(params["intercept"])
        obj.converged_ = params.get("converged")
        obj.n_iter_ = params.get("n_iter", 0)
        return obj


class LogisticRegression(_LinearBase):
    """Minimizes ``0.5 |w|^2 + C sum_i s_i logloss_i``; the intercept is unpenalized."""

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        t = 1.0 - np.asarray(y, dtype=float)          # 1 = benign
        s = self._weights(y)
        k = X.shape[1]

        def fun(theta):
            w, b = theta[:k], theta[k]
            z = X @ w + b
            loss = -np.sum(s * (t * log_expit(z) + (1 - t) * log_expit(-z)))
            g = s * (expit(z) - t)
            obj = 0.5 * w @ w + self.C * loss
            grad = np.append(w + self.C * (X.T @ g), self.C * g.sum())
            return obj, grad

        self._solve(fun, k)
        return self

    def benign_proba(self, X):
        return expit(self.margin(X))


class LinearSVM(_LinearBase):
    """Squared-hinge linear SVM with a logistic link fit on its training margins.

    The link ``P_b = sigmoid(a z + c)`` is fit by Platt's method (regularized
    targets) so that every detector exposes a benign probability.
    """

    def __init__(self, C=1.0, max_iter=1000, tol=1e-6, class_weight="balanced", seed=0):
        super().__init__(C=C, max_iter=max_iter, tol=tol, class_weight=class_weight, seed=seed)
        self.platt_ = (1.0, 0.0)

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        sgn = np.where(np.asarray(y) == 0, 1.0, -1.0)   # benign = +1
        s = self._weights(y)
        k = X.shape[1]

        def fun(theta):
            w, b = theta[:k], theta[k]
            slack = np.maximum(0.0, 1.0 - sgn * (X @ w + b))
            obj = 0.5 * w @ w + self.C * np.sum(s * slack * slack)
            g = -2.0 * self.C * s * slack * sgn
            return obj, np.append(w + X.T @ g, g.sum())

        self._solve(fun, k)
        self.platt_ = platt_fit(self.margin(X), sgn > 0)
        return self

    def benign_proba(self, X):
        a, c = self.platt_
        return expit(a * self.margin(X) + c)

    def params(self):
        out = super().params()
        out["platt"] = list(self.platt_)
        return out

    @classmethod
    def from_params(cls, params, **hyper):
        obj = super().from_params(params, **hyper)
        obj.platt_ = tuple(params["platt"])
        return obj


def platt_fit(margins, positive):
    """Fit ``sigmoid(a m + c)`` to boolean targets with Platt's smoothed labels."""
    margins = np.asarray(margins, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    n_pos, n_neg = positive.sum(), (~positive).sum()
    t = np.where(positive, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))

    def fun(theta):
        a, c = theta
        z = a * margins + c
        loss = -np.sum(t * log_expit(z) + (1 - t) * log_expit(-z))
        g = expit(z) - t
        return loss, np.array([g @ margins, g.sum()])

    res = minimize(fun, np.array([1.0, 0.0]), jac=True, method="L-BFGS-B")
    return float(res.x[0]), float(res.x[1])
