"""Multi-layer perceptron regressor/classifier built on the autodiff engine."""
import numpy as np

from .. import engine as E
from ._training import (EarlyStopping, glorot_uniform, group_scales, holdout_split,
                        minibatches, scale_vector)


class MLPModel:
    """ReLU MLP with identity (regressor) or sigmoid (classifier) output.

    Trained with ADAM on MSE or BCE plus an L2 penalty
    ``0.5 * l2 * sum ||W||^2 / batch_size`` on the weight matrices.  10% of
    the training data is held out (stratified for the classifier) to monitor
    the loss; training stops after ``patience`` epochs without improvement
    and the best epoch's parameters are restored.

    Regression targets are divided by a per-group training mean (``groups``
    argument, e.g. game ids) so one network serves games with very
    different survival scales; predictions are multiplied back.
    """

    def __init__(self, variant="regressor", hidden=(200, 100, 50), l2=0.01, batch_size=256,
                 lr=1e-3, patience=3, max_epochs=200, monitor_fraction=0.1, seed=0):
        if variant not in ("regressor", "classifier"):
            raise ValueError(f"unknown variant {variant!r}")
        self.variant = variant
        self.hidden = tuple(hidden)
        self.l2 = l2
        self.batch_size = batch_size
        self.lr = lr
        self.patience = patience
        self.max_epochs = max_epochs
        self.monitor_fraction = monitor_fraction
        self.seed = seed
        self.params = None
        self.scales_ = None
        self.stopper_ = None

    def _init(self, n_in, rng):
        sizes = (n_in,) + self.hidden + (1,)
        self.params = {}
        for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = np.sqrt(2.0) if (k == len(sizes) - 2 and self.variant == "classifier") else 1.0
            self.params[f"W{k}"] = E.Tensor(glorot_uniform(rng, a, b, gain), True, f"W{k}")
            self.params[f"b{k}"] = E.Tensor(np.zeros(b), True, f"b{k}")

    def _forward(self, X):
        h = E.Tensor(X)
        n_layers = len(self.hidden) + 1
        for k in range(n_layers):
            h = E.dense(h, self.params[f"W{k}"], self.params[f"b{k}"])
            h = E.relu(h) if k < n_layers - 1 else h
        h = E.reshape(h, (X.shape[0],))
        return E.sigmoid(h) if self.variant == "classifier" else E.identity(h)

    def _data_loss(self, out, y):
        return E.loss_bce(out, y) if self.variant == "classifier" else E.loss_mse(out, y)

    def fit(self, X, y, groups=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if X.shape[0] != y.size:
            raise ValueError("X and y lengths differ")
        if X.shape[0] < 20:
            raise ValueError("need at least 20 examples for the early-stopping split")
        rng = np.random.default_rng(self.seed)
        self._init(X.shape[1], rng)
        if self.variant == "regressor":
            self.scales_ = group_scales(y, groups)
            y = y / scale_vector(self.scales_, groups, y.size)
        strat = y if self.variant == "classifier" else None
        tr, mon = holdout_split(X.shape[0], self.monitor_fraction, rng, strat)
        adam = E.AdamState()
        weights = [p for n, p in self.params.items() if n.startswith("W")]
        self.stopper_ = stop = EarlyStopping(self.patience)
        for epoch in range(self.max_epochs):
            for batch in minibatches(tr.size, self.batch_size, rng):
                idx = tr[batch]
                out = self._forward(X[idx])
                loss = self._data_loss(out, y[idx])
                if self.l2:
                    pen = E.add_scalars(*[E.sum_squares(w) for w in weights])
                    loss = E.add_scalars(loss, E.scale(pen, 0.5 * self.l2 / idx.size))
                for p in self.params.values():
                    p.zero_grad()
                loss.backward()
                E.adam_step(self.params, adam, self.lr)
            mon_loss = self._data_loss(self._forward(X[mon]), y[mon]).item()
            if stop.update(epoch, mon_loss, self._snapshot):
                break
        self._restore(stop.best_state)
        return self

    def _snapshot(self):
        return {k: p.data.copy() for k, p in self.params.items()}

    def _restore(self, state):
        for k, v in state.items():
            self.params[k].data = v.copy()

    def predict(self, X, groups=None):
        if self.params is None:
            raise RuntimeError("MLPModel.predict called before fit")
        X = np.asarray(X, dtype=np.float64)
        out = self._forward(X).data.copy()
        if self.variant == "regressor":
            out *= scale_vector(self.scales_, groups, out.size)
            return out
        return (out >= 0.5).astype(np.int64)

    def predict_proba(self, X):
        if self.variant != "classifier":
            raise TypeError("predict_proba is only defined for the classifier")
        return self._forward(np.asarray(X, dtype=np.float64)).data.copy()
