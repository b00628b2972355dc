"""Flat-parameter models with hand-derived gradients.

Every model works on a single real parameter vector ``theta`` so the
federated engine and the OTA codec can treat updates as plain vectors.
"""

import numpy as np

from ..errors import InvalidInputError


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


class Model:
    """Base class: subclasses define ``dim``, ``loss_and_grad`` and ``predict``."""

    task = "classification"
    dim: int

    def check(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.dim,):
            raise InvalidInputError(f"expected parameter vector of length {self.dim}, got shape {theta.shape}")
        return theta

    def init(self, rng):
        return np.zeros(self.dim)

    def loss(self, theta, X, y):
        return self.loss_and_grad(theta, X, y)[0]

    def grad(self, theta, X, y):
        return self.loss_and_grad(theta, X, y)[1]

    def accuracy(self, theta, X, y):
        return float(np.mean(self.predict(theta, X) == y))


class LinearRegression(Model):
    """Squared loss ``0.5 * mean((X w + b - y)^2)``; ``theta = [w, b]``."""

    task = "regression"

    def __init__(self, num_features):
        self.num_features = num_features
        self.dim = num_features + 1

    def loss_and_grad(self, theta, X, y):
        theta = self.check(theta)
        r = X @ theta[:-1] + theta[-1] - y
        n = X.shape[0]
        grad = np.empty(self.dim)
        grad[:-1] = X.T @ r / n
        grad[-1] = r.sum() / n
        return 0.5 * float(r @ r) / n, grad

    def predict(self, theta, X):
        theta = self.check(theta)
        return X @ theta[:-1] + theta[-1]

    def accuracy(self, theta, X, y):
        return float("nan")


class LogisticRegression(Model):
    """Multinomial logistic regression with mean cross-entropy.

    ``theta`` packs the ``(p, C)`` weight matrix row-major followed by ``C``
    biases.
    """

    def __init__(self, num_features, num_classes):
        self.num_features = num_features
        self.num_classes = num_classes
        self.dim = (num_features + 1) * num_classes

    def _unpack(self, theta):
        p, C = self.num_features, self.num_classes
        return theta[: p * C].reshape(p, C), theta[p * C :]

    def loss_and_grad(self, theta, X, y):
        theta = self.check(theta)
        W, b = self._unpack(theta)
        n = X.shape[0]
        logits = X @ W + b
        logp = _log_softmax(logits)
        loss = -float(logp[np.arange(n), y].mean())
        delta = np.exp(logp)
        delta[np.arange(n), y] -= 1.0
        delta /= n
        return loss, np.concatenate([(X.T @ delta).ravel(), delta.sum(axis=0)])

    def predict(self, theta, X):
        W, b = self._unpack(self.check(theta))
        return np.argmax(X @ W + b, axis=1)


class MLP(Model):
    """Fully-connected network, two tanh hidden layers, softmax output."""

    def __init__(self, num_features, num_classes, hidden=(32, 32)):
        if len(hidden) != 2:
            raise InvalidInputError(f"MLP expects two hidden layer sizes, got {hidden!r}")
        self.num_features = num_features
        self.num_classes = num_classes
        self.hidden = tuple(int(h) for h in hidden)
        sizes = (num_features, *self.hidden, num_classes)
        self.shapes = [(sizes[i], sizes[i + 1]) for i in range(3)]
        self.dim = sum(a * b + b for a, b in self.shapes)

    def _unpack(self, theta):
        params, offset = [], 0
        for a, b in self.shapes:
            W = theta[offset : offset + a * b].reshape(a, b)
            offset += a * b
            params.append((W, theta[offset : offset + b]))
            offset += b
        return params

    def init(self, rng):
        chunks = []
        for a, b in self.shapes:
            limit = np.sqrt(6.0 / (a + b))
            chunks.append(rng.uniform(-limit, limit, size=a * b))
            chunks.append(np.zeros(b))
        return np.concatenate(chunks)

    def _forward(self, theta, X):
        (W1, b1), (W2, b2), (W3, b3) = self._unpack(theta)
        h1 = np.tanh(X @ W1 + b1)
        h2 = np.tanh(h1 @ W2 + b2)
        return h1, h2, h2 @ W3 + b3

    def loss_and_grad(self, theta, X, y):
        theta = self.check(theta)
        (W1, _), (W2, _), (W3, _) = self._unpack(theta)
        n = X.shape[0]
        h1, h2, logits = self._forward(theta, X)
        logp = _log_softmax(logits)
        loss = -float(logp[np.arange(n), y].mean())

        d3 = np.exp(logp)
        d3[np.arange(n), y] -= 1.0
        d3 /= n
        d2 = (d3 @ W3.T) * (1.0 - h2**2)
        d1 = (d2 @ W2.T) * (1.0 - h1**2)
        grad = np.concatenate([
            (X.T @ d1).ravel(), d1.sum(axis=0),
            (h1.T @ d2).ravel(), d2.sum(axis=0),
            (h2.T @ d3).ravel(), d3.sum(axis=0),
        ])
        return loss, grad

    def predict(self, theta, X):
        return np.argmax(self._forward(self.check(theta), X)[2], axis=1)


def build_model(kind, num_features, num_classes=None, hidden=(32, 32)):
    if kind == "linear":
        return LinearRegression(num_features)
    if kind == "logistic":
        return LogisticRegression(num_features, num_classes)
    if kind == "mlp":
        return MLP(num_features, num_classes, hidden)
    raise InvalidInputError(f"unknown model kind {kind!r}")
