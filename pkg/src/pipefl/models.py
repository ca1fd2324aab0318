"""Small differentiable models over flat parameter vectors.

Every model exposes ``loss(w, X, y)`` as the mean per-sample loss and
``grad(w, X, y)`` as its exact gradient, so a client gradient is the
full-batch average over its shard.
"""

from __future__ import annotations

import numpy as np


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


class Model:
    name = "model"
    is_classifier = True

    def __init__(self, feature_dim: int):
        self.feature_dim = feature_dim

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def init(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(self.dim)

    def loss(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict(self, w: np.ndarray, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def accuracy(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> float | None:
        if not self.is_classifier:
            return None
        return float(np.mean(self.predict(w, X) == y))


class LinearRegression(Model):
    """Squared loss ``(w.x - y)^2`` without intercept."""

    name = "linear"
    is_classifier = False

    @property
    def dim(self) -> int:
        return self.feature_dim

    def loss(self, w, X, y):
        r = X @ w - y
        return float(np.mean(r * r))

    def grad(self, w, X, y):
        return 2.0 * X.T @ (X @ w - y) / len(y)

    def predict(self, w, X):
        return X @ w


class LogisticRegression(Model):
    """Binary logistic regression with labels in {0, 1}; the last weight is the bias."""

    name = "logistic"

    @property
    def dim(self) -> int:
        return self.feature_dim + 1

    def _margin(self, w, X):
        return X @ w[:-1] + w[-1]

    def loss(self, w, X, y):
        z = self._margin(w, X)
        # log(1 + e^z) - y z, computed without overflow
        return float(np.mean(np.logaddexp(0.0, z) - y * z))

    def grad(self, w, X, y):
        r = 0.5 * (1.0 + np.tanh(0.5 * self._margin(w, X))) - y
        n = len(y)
        return np.concatenate([X.T @ r / n, [r.sum() / n]])

    def predict(self, w, X):
        return (self._margin(w, X) > 0).astype(np.int64)


class SoftmaxRegression(Model):
    """Multinomial logistic regression; parameters are ``W`` (C x d) then ``b`` (C)."""

    name = "softmax"

    def __init__(self, feature_dim: int, n_classes: int):
        super().__init__(feature_dim)
        self.n_classes = n_classes

    @property
    def dim(self) -> int:
        return self.n_classes * (self.feature_dim + 1)

    def _unpack(self, w):
        C, d = self.n_classes, self.feature_dim
        return w[: C * d].reshape(C, d), w[C * d :]

    def _logits(self, w, X):
        W, b = self._unpack(w)
        return X @ W.T + b

    def loss(self, w, X, y):
        logp = _log_softmax(self._logits(w, X))
        return float(-np.mean(logp[np.arange(len(y)), y]))

    def grad(self, w, X, y):
        p = np.exp(_log_softmax(self._logits(w, X)))
        p[np.arange(len(y)), y] -= 1.0
        p /= len(y)
        return np.concatenate([(p.T @ X).ravel(), p.sum(axis=0)])

    def predict(self, w, X):
        return np.argmax(self._logits(w, X), axis=1)


class MLP(Model):
    """One tanh hidden layer followed by a softmax output."""

    name = "mlp"

    def __init__(self, feature_dim: int, n_classes: int, hidden: int = 32):
        super().__init__(feature_dim)
        self.n_classes = n_classes
        self.hidden = hidden

    @property
    def dim(self) -> int:
        d, h, c = self.feature_dim, self.hidden, self.n_classes
        return h * d + h + c * h + c

    def _unpack(self, w):
        d, h, c = self.feature_dim, self.hidden, self.n_classes
        i = 0
        W1 = w[i : i + h * d].reshape(h, d)
        i += h * d
        b1 = w[i : i + h]
        i += h
        W2 = w[i : i + c * h].reshape(c, h)
        i += c * h
        return W1, b1, W2, w[i:]

    def init(self, rng):
        d, h, c = self.feature_dim, self.hidden, self.n_classes
        W1 = rng.normal(0.0, 1.0 / np.sqrt(d), (h, d))
        W2 = rng.normal(0.0, 1.0 / np.sqrt(h), (c, h))
        return np.concatenate([W1.ravel(), np.zeros(h), W2.ravel(), np.zeros(c)])

    def _forward(self, w, X):
        W1, b1, W2, b2 = self._unpack(w)
        H = np.tanh(X @ W1.T + b1)
        return H, H @ W2.T + b2

    def loss(self, w, X, y):
        _, logits = self._forward(w, X)
        logp = _log_softmax(logits)
        return float(-np.mean(logp[np.arange(len(y)), y]))

    def grad(self, w, X, y):
        W1, b1, W2, b2 = self._unpack(w)
        H, logits = self._forward(w, X)
        dz2 = np.exp(_log_softmax(logits))
        dz2[np.arange(len(y)), y] -= 1.0
        dz2 /= len(y)
        dW2 = dz2.T @ H
        db2 = dz2.sum(axis=0)
        dz1 = (dz2 @ W2) * (1.0 - H * H)
        dW1 = dz1.T @ X
        db1 = dz1.sum(axis=0)
        return np.concatenate([dW1.ravel(), db1, dW2.ravel(), db2])

    def predict(self, w, X):
        return np.argmax(self._forward(w, X)[1], axis=1)


def build_model(kind: str, feature_dim: int, n_classes: int = 2, hidden: int = 32) -> Model:
    if kind == "linear":
        return LinearRegression(feature_dim)
    if kind == "logistic":
        if n_classes != 2:
            raise ValueError(f"logistic model is binary, data has {n_classes} classes")
        return LogisticRegression(feature_dim)
    if kind == "softmax":
        return SoftmaxRegression(feature_dim, n_classes)
    if kind == "mlp":
        return MLP(feature_dim, n_classes, hidden)
    raise ValueError(f"unknown model kind {kind!r}")
