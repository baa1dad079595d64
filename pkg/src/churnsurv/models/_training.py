"""Mini-batching, hold-out splitting, and early stopping shared by the neural models."""
import numpy as np


def minibatches(n, batch_size, rng):
    """Shuffled index batches; a trailing batch of size 1 is merged into the previous one."""
    perm = rng.permutation(n)
    batches = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


def holdout_split(n, fraction, rng, labels=None):
    """Return (train_idx, monitor_idx); stratified by ``labels`` when given."""
    if labels is None:
        perm = rng.permutation(n)
        k = max(1, int(round(fraction * n)))
        return np.sort(perm[k:]), np.sort(perm[:k])
    labels = np.asarray(labels)
    mon = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        mon.extend(idx[: max(1, int(round(fraction * idx.size)))])
    mon = np.sort(np.array(mon, dtype=np.int64))
    train = np.setdiff1d(np.arange(n), mon)
    return train, mon


class EarlyStopping:
    """Stop after ``patience`` epochs without improvement; remembers the best snapshot."""

    def __init__(self, patience=3):
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = -1
        self.best_state = None
        self.bad_epochs = 0
        self.history = []

    def update(self, epoch, loss, snapshot):
        self.history.append(float(loss))
        if loss < self.best_loss:
            self.best_loss = float(loss)
            self.best_epoch = epoch
            self.best_state = snapshot()
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def glorot_uniform(rng, fan_in, fan_out, gain=1.0):
    limit = gain * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def group_scales(y, groups):
    """Positive per-group target scale (training mean of |y|); one global scale when groups is None."""
    y = np.asarray(y, dtype=np.float64)
    if groups is None:
        m = np.abs(y).mean()
        return {None: float(m) if m > 0 else 1.0}
    out = {}
    for g in np.unique(groups):
        m = np.abs(y[groups == g]).mean()
        out[int(g)] = float(m) if m > 0 else 1.0
    return out


def scale_vector(scales, groups, n):
    if None in scales:
        return np.full(n, scales[None])
    fallback = float(np.mean(list(scales.values())))
    return np.array([scales.get(int(g), fallback) for g in groups])
