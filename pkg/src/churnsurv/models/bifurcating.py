"""The bifurcating model: shared context-embedding + masked-LSTM trunk, two heads.

Pipeline per user::

    game id --embedding(40)--+
                             +--> concat per step --> dense 40 + ReLU --> masked LSTM(100)
    5 metrics per session ---+                                                |
                          +---------------------------------------------------+
                          |                                                   |
         dense 300 + ReLU + batch norm + dropout               dense 300 + ReLU + batch norm + dropout
                          |                                                   |
                 dense 1, identity (survival)                        dense 1, sigmoid (churn)

Training minimises SMAPE(survival) + BCE(churn), unweighted.  The survival
head works in units of the per-game training mean survival; outputs are
multiplied back to minutes (SMAPE is scale invariant, so the objective is
unchanged).
"""
from dataclasses import asdict, dataclass

import numpy as np

from .. import engine as E
from .._seeding import derive_seed
from ._training import EarlyStopping, glorot_uniform, holdout_split, minibatches

CHURN_THRESHOLD = 0.5
DEFAULT_MC_SAMPLES = 50


class UnknownContextError(KeyError):
    """A game id outside the trained embedding table."""


@dataclass
class BMConfig:
    embedding_dim: int = 40
    fusion_units: int = 40
    lstm_units: int = 100
    head_units: int = 300
    dropout: float = 0.1
    batch_size: int = 256
    base_lr: float = 1e-4
    max_lr: float = 1e-3
    step_size_epochs: int = 4
    patience: int = 3
    max_epochs: int = 200
    monitor_fraction: float = 0.1
    bn_momentum: float = 0.99
    bn_eps: float = 1e-3


@dataclass
class EstimateDistribution:
    survival_samples: np.ndarray
    churn_samples: np.ndarray

    @property
    def survival_point(self):
        return float(self.survival_samples.mean())

    @property
    def churn_point(self):
        return float(self.churn_samples.mean())

    @property
    def survival_std(self):
        return float(self.survival_samples.std())

    @property
    def churn_std(self):
        return float(self.churn_samples.std())

    def quantiles(self, qs=(0.05, 0.5, 0.95)):
        return {"survival": np.quantile(self.survival_samples, qs),
                "churn": np.quantile(self.churn_samples, qs)}

    @property
    def decision(self):
        return self.churn_point >= CHURN_THRESHOLD


@dataclass
class MCEstimates:
    """Samples for a batch of users, shape ``(users, n_samples)``."""

    survival: np.ndarray
    churn: np.ndarray

    def __len__(self):
        return self.survival.shape[0]

    def __getitem__(self, i):
        return EstimateDistribution(self.survival[i], self.churn[i])

    @property
    def survival_point(self):
        return self.survival.mean(axis=1)

    @property
    def churn_point(self):
        return self.churn.mean(axis=1)

    @property
    def decisions(self):
        return (self.churn_point >= CHURN_THRESHOLD).astype(np.int64)


def _orthogonal(rng, rows, cols):
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


HEAD_PARAMS = ("W1", "b1", "gamma", "beta", "W2", "b2")


class BifurcatingModel:
    def __init__(self, n_games, n_metrics=5, config=None, seed=0):
        if n_games < 1:
            raise ValueError("need at least one game context")
        self.n_games = int(n_games)
        self.n_metrics = int(n_metrics)
        self.config = config or BMConfig()
        self.seed = int(seed)
        self.survival_scale = np.ones(self.n_games)
        self.stopper_ = None
        self.adam_ = E.AdamState()
        self._init_params(np.random.default_rng(derive_seed(self.seed, "bm-init")))

    # ------------------------------------------------------------ params
    def _init_params(self, rng):
        c = self.config
        H, F = c.lstm_units, c.fusion_units
        p = {}
        p["embedding"] = rng.uniform(-0.05, 0.05, size=(self.n_games, c.embedding_dim))
        p["fusion.W"] = glorot_uniform(rng, self.n_metrics + c.embedding_dim, F)
        p["fusion.b"] = np.zeros(F)
        p["lstm.W"] = glorot_uniform(rng, F, 4 * H)
        p["lstm.U"] = _orthogonal(rng, H, 4 * H)
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0  # forget-gate bias
        p["lstm.b"] = b
        for head in ("survival", "churn"):
            p[f"{head}.W1"] = glorot_uniform(rng, H, c.head_units)
            p[f"{head}.b1"] = np.zeros(c.head_units)
            p[f"{head}.gamma"] = np.ones(c.head_units)
            p[f"{head}.beta"] = np.zeros(c.head_units)
            p[f"{head}.W2"] = glorot_uniform(rng, c.head_units, 1)
            p[f"{head}.b2"] = np.zeros(1)
        self.params = {k: E.Tensor(v, True, k) for k, v in p.items()}
        self.bn = {h: E.BatchNormState.create(c.head_units, c.bn_momentum, c.bn_eps)
                   for h in ("survival", "churn")}

    # ----------------------------------------------------------- forward
    def _check_context(self, ctx):
        ctx = np.asarray(ctx, dtype=np.int64)
        bad = (ctx < 0) | (ctx >= self.n_games)
        if np.any(bad):
            raise UnknownContextError(
                f"game context {int(ctx[bad][0])} is not in the trained embedding table "
                f"({self.n_games} games); retrain the model to add a new game")
        return ctx

    def trunk(self, seqs, masks, ctx):
        """Latent user state (B x lstm_units); deterministic in every mode."""
        p = self.params
        ctx = self._check_context(ctx)
        layout = E.pack_layout(masks)
        metrics = E.pack(E.Tensor(seqs), layout)
        emb = E.embedding_lookup(p["embedding"], ctx[layout.b_idx])
        fused = E.relu(E.dense(E.concat([metrics, emb]), p["fusion.W"], p["fusion.b"]))
        return E.lstm_packed(fused, layout, p["lstm.W"], p["lstm.U"], p["lstm.b"])

    def head(self, name, latent, mode, rng):
        p = self.params
        h = E.relu(E.dense(latent, p[f"{name}.W1"], p[f"{name}.b1"]))
        h = E.batch_norm(h, p[f"{name}.gamma"], p[f"{name}.beta"], self.bn[name], mode == "train")
        h = E.dropout(h, self.config.dropout, mode in ("train", "mc"), rng)
        out = E.reshape(E.dense(h, p[f"{name}.W2"], p[f"{name}.b2"]), (latent.shape[0],))
        return E.identity(out) if name == "survival" else E.sigmoid(out)

    def forward(self, seqs, masks, ctx, mode="inference", rng=None):
        """Return (survival in scaled units, churn probability) tensors."""
        if mode not in ("train", "inference", "mc"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode != "inference" and rng is None:
            raise ValueError(f"mode {mode!r} needs a random generator for dropout")
        latent = self.trunk(seqs, masks, ctx)
        return self.head("survival", latent, mode, rng), self.head("churn", latent, mode, rng)

    def loss(self, seqs, masks, ctx, survival_scaled, labels, mode="train", rng=None):
        surv, churn = self.forward(seqs, masks, ctx, mode, rng)
        return E.add_scalars(E.loss_smape(surv, survival_scaled), E.loss_bce(churn, labels))

    # ------------------------------------------------------------- fit
    def fit(self, seqs, masks, ctx, survival, labels):
        """Train with ADAM under the triangular cyclical schedule until the
        monitored summed loss stops improving; restores the best epoch."""
        c = self.config
        seqs = np.asarray(seqs, dtype=np.float64)
        masks = np.asarray(masks, dtype=bool)
        ctx = self._check_context(ctx)
        survival = np.asarray(survival, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.float64)
        n = seqs.shape[0]
        if n < 20:
            raise ValueError("need at least 20 examples for the early-stopping split")
        for g in range(self.n_games):
            sel = ctx == g
            m = survival[sel].mean() if np.any(sel) else 0.0
            self.survival_scale[g] = m if m > 0 else 1.0
        ys = survival / self.survival_scale[ctx]
        rng = np.random.default_rng(derive_seed(self.seed, "bm-fit"))
        tr, mon = holdout_split(n, c.monitor_fraction, rng, labels)
        batches_per_epoch = max(1, len(minibatches(tr.size, c.batch_size, np.random.default_rng(0))))
        sched = E.CyclicalSchedule(c.base_lr, c.max_lr, c.step_size_epochs * batches_per_epoch)
        self.adam_ = E.AdamState()
        self.stopper_ = stop = EarlyStopping(c.patience)
        counter = 0
        for epoch in range(c.max_epochs):
            for batch in minibatches(tr.size, c.batch_size, rng):
                idx = tr[batch]
                loss = self.loss(seqs[idx], masks[idx], ctx[idx], ys[idx], labels[idx], "train", rng)
                for p in self.params.values():
                    p.zero_grad()
                loss.backward()
                E.adam_step(self.params, self.adam_, E.cyclical_lr(counter, sched))
                counter += 1
            mon_loss = self.loss(seqs[mon], masks[mon], ctx[mon], ys[mon], labels[mon], "inference").item()
            if stop.update(epoch, mon_loss, self._snapshot):
                break
        self._restore(stop.best_state)
        return self

    def _snapshot(self):
        state = {k: p.data.copy() for k, p in self.params.items()}
        for h, bn in self.bn.items():
            state[f"{h}.running_mean"] = bn.running_mean.copy()
            state[f"{h}.running_var"] = bn.running_var.copy()
        return state

    def _restore(self, state):
        for k, v in state.items():
            if k in self.params:
                self.params[k].data = v.copy()
        for h, bn in self.bn.items():
            bn.running_mean = state[f"{h}.running_mean"].copy()
            bn.running_var = state[f"{h}.running_var"].copy()

    # ---------------------------------------------------------- predict
    def predict(self, seqs, masks, ctx):
        """Deterministic inference: (survival minutes, churn probability)."""
        ctx = self._check_context(ctx)
        surv, churn = self.forward(seqs, masks, ctx, "inference")
        return surv.data * self.survival_scale[ctx], churn.data.copy()

    def predict_mc(self, seqs, masks, ctx, n_samples=DEFAULT_MC_SAMPLES, seed=0):
        """MC-dropout: ``n_samples`` stochastic passes with dropout active.

        Sample ``s`` draws its dropout masks from a generator seeded by
        ``(seed, s)``, so results do not depend on evaluation order.  The
        trunk has no stochastic layers and is evaluated once.
        """
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        ctx = self._check_context(ctx)
        latent = self.trunk(seqs, masks, ctx)
        latent = E.Tensor(latent.data)
        surv = np.empty((latent.shape[0], n_samples))
        churn = np.empty_like(surv)
        for s in range(n_samples):
            rng = np.random.default_rng(derive_seed(seed, "mc", s))
            surv[:, s] = self.head("survival", latent, "mc", rng).data
            churn[:, s] = self.head("churn", latent, "mc", rng).data
        return MCEstimates(surv * self.survival_scale[ctx][:, None], churn)

    # ------------------------------------------------------- checkpoint
    def to_checkpoint(self, path, metadata=None):
        arrays = {f"param/{k}": p.data for k, p in self.params.items()}
        for h, bn in self.bn.items():
            arrays[f"bn/{h}.running_mean"] = bn.running_mean
            arrays[f"bn/{h}.running_var"] = bn.running_var
        for k in self.adam_.m:
            arrays[f"adam_m/{k}"] = self.adam_.m[k]
            arrays[f"adam_v/{k}"] = self.adam_.v[k]
        arrays["survival_scale"] = self.survival_scale
        meta = {
            "model": "bifurcating",
            "n_games": self.n_games,
            "n_metrics": self.n_metrics,
            "config": asdict(self.config),
            "seed_lineage": {"root": self.seed, "init": derive_seed(self.seed, "bm-init"),
                             "fit": derive_seed(self.seed, "bm-fit")},
            "adam": {"step": self.adam_.step, "beta1": self.adam_.beta1,
                     "beta2": self.adam_.beta2, "eps": self.adam_.eps},
        }
        meta.update(metadata or {})
        E.save_checkpoint(path, arrays, meta)

    @classmethod
    def from_checkpoint(cls, path):
        arrays, meta = E.load_checkpoint(path)
        if meta.get("model") != "bifurcating":
            raise E.CheckpointError(f"{path}: not a bifurcating-model checkpoint")
        model = cls(meta["n_games"], meta["n_metrics"], BMConfig(**meta["config"]),
                    meta["seed_lineage"]["root"])
        for k, p in model.params.items():
            p.data = arrays[f"param/{k}"]
        for h, bn in model.bn.items():
            bn.running_mean = arrays[f"bn/{h}.running_mean"]
            bn.running_var = arrays[f"bn/{h}.running_var"]
        a = meta["adam"]
        model.adam_ = E.AdamState(a["beta1"], a["beta2"], a["eps"], a["step"])
        for k in model.params:
            if f"adam_m/{k}" in arrays:
                model.adam_.m[k] = arrays[f"adam_m/{k}"]
                model.adam_.v[k] = arrays[f"adam_v/{k}"]
        model.survival_scale = arrays["survival_scale"]
        return model, meta
