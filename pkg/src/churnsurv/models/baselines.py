"""Mean baseline, elastic net (coordinate descent) and L1 logistic regression."""
import numpy as np

from .. import _kernels
from ..engine import sigmoid_np


class NotFittedError(RuntimeError):
    pass


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError(f"dimension mismatch: X {X.shape}, y {y.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("inputs contain non-finite values")
    return X, y


class MeanModel:
    """Predicts the training mean survival; churn is a Bernoulli draw at the training churn rate."""

    def __init__(self, seed=0):
        self.seed = seed
        self.mean_survival = None
        self.churn_rate = None

    def fit(self, survival, labels):
        survival = np.asarray(survival, dtype=np.float64)
        if survival.size < 1:
            raise ValueError("need at least one training example")
        self.mean_survival = float(survival.mean())
        self.churn_rate = float(np.mean(np.asarray(labels, dtype=np.float64)))
        return self

    def _check(self):
        if self.mean_survival is None:
            raise NotFittedError("MeanModel.predict called before fit")

    def predict_survival(self, n):
        self._check()
        return np.full(n, self.mean_survival)

    def predict_churn(self, n, rng=None):
        self._check()
        rng = rng if rng is not None else np.random.default_rng(self.seed)
        return (rng.random(n) < self.churn_rate).astype(np.int64)


class ElasticNetModel:
    """min (1/2n)||y - Xw - b||^2 + alpha * (l1_ratio ||w||_1 + (1 - l1_ratio)/2 ||w||^2)."""

    def __init__(self, alpha=0.1, l1_ratio=0.5, tol=1e-6, max_iter=10_000):
        self.alpha = alpha
        self.l1_ratio = l1_ratio
        self.tol = tol
        self.max_iter = max_iter
        self.weights = None
        self.intercept = None
        self.n_iter_ = 0

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        x_mean = X.mean(axis=0)
        y_mean = y.mean()
        Xc = np.asfortranarray(X - x_mean)
        w = np.zeros(X.shape[1])
        w, self.n_iter_ = _kernels.enet_coordinate_descent(
            w, Xc, np.ascontiguousarray(y - y_mean), float(self.alpha), float(self.l1_ratio),
            int(self.max_iter), float(self.tol))
        self.weights = np.asarray(w)
        self.intercept = float(y_mean - x_mean @ self.weights)
        return self

    def predict(self, X):
        if self.weights is None:
            raise NotFittedError("ElasticNetModel.predict called before fit")
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.weights.size:
            raise ValueError(f"expected {self.weights.size} features, got {X.shape[1]}")
        return X @ self.weights + self.intercept


class LogisticModel:
    """L1 logistic regression: min ||w||_1 + C * sum log(1 + exp(-y~ (x.w + b))).

    Solved by accelerated proximal gradient (FISTA with adaptive restart);
    the intercept is not penalised.
    """

    def __init__(self, C=0.01, tol=1e-6, max_iter=10_000):
        self.C = C
        self.tol = tol
        self.max_iter = max_iter
        self.weights = None
        self.intercept = None
        self.n_iter_ = 0

    def _smooth_grad(self, Xa, ys, theta):
        m = ys * (Xa @ theta)
        return -self.C * (Xa.T @ (ys * sigmoid_np(-m)))

    def fit(self, X, labels):
        X, y = _check_xy(X, labels)
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be binary")
        ys = 2.0 * y - 1.0
        Xa = np.column_stack([X, np.ones(X.shape[0])])
        L = self.C * np.linalg.norm(Xa, 2) ** 2 / 4.0
        step = 1.0 / L
        p = X.shape[1]
        theta = np.zeros(p + 1)
        z = theta.copy()
        t = 1.0
        for it in range(self.max_iter):
            g = self._smooth_grad(Xa, ys, z)
            new = z - step * g
            w = new[:p]
            new[:p] = np.sign(w) * np.maximum(np.abs(w) - step, 0.0)
            delta = new - theta
            self.n_iter_ = it + 1
            if np.max(np.abs(delta)) <= self.tol * max(1.0, np.max(np.abs(new))):
                theta = new
                break
            if np.dot(z - new, delta) > 0:  # restart momentum
                t = 1.0
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            z = new + ((t - 1.0) / t_next) * delta
            theta, t = new, t_next
        self.weights = theta[:p].copy()
        self.intercept = float(theta[p])
        return self

    def predict_proba(self, X):
        if self.weights is None:
            raise NotFittedError("LogisticModel.predict called before fit")
        X = np.asarray(X, dtype=np.float64)
        return sigmoid_np(X @ self.weights + self.intercept)

    def predict(self, X):
        return (self.predict_proba(X) >= 0.5).astype(np.int64)
