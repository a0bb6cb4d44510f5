"""One-hidden-layer ReLU network trained with Adam on mini-batches."""
from __future__ import annotations

import logging

import numpy as np
from scipy.special import expit, log_expit

log = logging.getLogger(__name__)


def init_params(n_in, n_hidden, rng):
    """Glorot-uniform weights; biases drawn from the same range."""
    b1 = np.sqrt(6.0 / (n_in + n_hidden))
    b2 = np.sqrt(6.0 / (n_hidden + 1))
    return {
        "W1": rng.uniform(-b1, b1, (n_in, n_hidden)),
        "b1": rng.uniform(-b1, b1, n_hidden),
        "W2": rng.uniform(-b2, b2, (n_hidden, 1)),
        "b2": rng.uniform(-b2, b2, 1),
    }


def forward(params, X):
    h_pre = X @ params["W1"] + params["b1"]
    h = np.maximum(h_pre, 0.0)
    z = (h @ params["W2"] + params["b2"])[:, 0]
    return h_pre, h, z


def loss_and_grad(params, X, y, alpha):
    """Mean binary cross-entropy on the malware logit plus ``alpha/(2n) * |W|^2``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    h_pre, h, z = forward(params, X)
    loss = -np.mean(y * log_expit(z) + (1 - y) * log_expit(-z))
    loss += 0.5 * alpha * (np.sum(params["W1"] ** 2) + np.sum(params["W2"] ** 2)) / n
    dz = (expit(z) - y) / n
    grads = {
        "W2": h.T @ dz[:, None] + alpha * params["W2"] / n,
        "b2": np.array([dz.sum()]),
    }
    dh = dz[:, None] * params["W2"][:, 0][None, :] * (h_pre > 0)
    grads["W1"] = X.T @ dh + alpha * params["W1"] / n
    grads["b1"] = dh.sum(axis=0)
    return float(loss), grads


class MLP:
    def __init__(self, hidden=100, batch_size=200, learning_rate=1e-3, alpha=1e-4,
                 max_iter=200, tol=1e-4, n_iter_no_change=10, beta1=0.9, beta2=0.999,
                 epsilon=1e-8, seed=0):
        if hidden < 1 or batch_size < 1 or learning_rate <= 0 or max_iter < 1:
            raise ValueError("hidden, batch_size, learning_rate and max_iter must be positive")
        self.hidden = hidden
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.alpha = alpha
        self.max_iter = max_iter
        self.tol = tol
        self.n_iter_no_change = n_iter_no_change
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.seed = seed

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        rng = np.random.default_rng(self.seed)
        params = init_params(X.shape[1], self.hidden, rng)
        m = {k: np.zeros_like(v) for k, v in params.items()}
        v = {k: np.zeros_like(v) for k, v in params.items()}
        t = 0
        best, stall = np.inf, 0
        self.loss_curve_ = []
        self.converged_ = False
        n = X.shape[0]
        bs = min(self.batch_size, n)
        for epoch in range(self.max_iter):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                loss, grads = loss_and_grad(params, X[idx], y[idx], self.alpha)
                total += loss * len(idx)
                t += 1
                for key in params:
                    m[key] = self.beta1 * m[key] + (1 - self.beta1) * grads[key]
                    v[key] = self.beta2 * v[key] + (1 - self.beta2) * grads[key] ** 2
                    lr = self.learning_rate * np.sqrt(1 - self.beta2 ** t) / (1 - self.beta1 ** t)
                    params[key] = params[key] - lr * m[key] / (np.sqrt(v[key]) + self.epsilon)
            epoch_loss = total / n
            self.loss_curve_.append(epoch_loss)
            if epoch_loss > best - self.tol:
                stall += 1
            else:
                stall = 0
            best = min(best, epoch_loss)
            if stall >= self.n_iter_no_change:
                self.converged_ = True
                break
        if not self.converged_:
            log.warning("MLP reached max_iter=%d before the loss plateaued", self.max_iter)
        self.n_iter_ = len(self.loss_curve_)
        self.params_ = params
        return self

    def malware_proba(self, X):
        return expit(forward(self.params_, np.asarray(X, dtype=float))[2])

    def params(self):
        out = {k: v.tolist() for k, v in self.params_.items()}
        out["n_iter"] = self.n_iter_
        out["converged"] = self.converged_
        return out

    @classmethod
    def from_params(cls, params, **hyper):
        obj = cls(**hyper)
        obj.params_ = {k: np.array(params[k], dtype=float) for k in ("W1", "b1", "W2", "b2")}
        obj.n_iter_ = params.get("n_iter", 0)
        obj.converged_ = params.get("converged")
        return obj
