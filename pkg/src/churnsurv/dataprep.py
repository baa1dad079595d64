"""Labeling, observation windows, rescaling, formats and splits."""
import csv
import hashlib
import json
import logging
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._seeding import rng_for
from .telemetry_synth import METRICS, PlayerHistory, SessionRecord, sidecar_path

log = logging.getLogger(__name__)

N_METRICS = len(METRICS)
INACTIVITY_STD_FACTOR = 2.5
OP_BUCKETS = (1, 2, 3, 4)  # last bucket is "4 or more"
FIT_VERSION = 1


class DataContractError(ValueError):
    """Input data violates a documented contract."""


@dataclass
class ObservationWindow:
    user_id: str
    game_id: int
    cutoff: int
    sessions: list

    def __post_init__(self):
        if not 1 <= self.cutoff:
            raise ValueError("cutoff must be >= 1")
        if len(self.sessions) != self.cutoff:
            raise ValueError("window must hold exactly `cutoff` sessions")

    def metric_matrix(self):
        return np.array([s.metrics() for s in self.sessions], dtype=np.float64).reshape(-1, N_METRICS)


@dataclass
class LabeledExample:
    user_id: str
    game_id: int
    churn_label: bool
    survival_minutes: float
    op_length: int
    collapsed_features: np.ndarray | None = None
    sequence_features: np.ndarray | None = None
    mask: np.ndarray | None = None


@dataclass
class SplitPlan:
    tuning_ids: list
    validation_ids: list
    fold_assignments: dict
    strata: dict = field(default_factory=dict)

    def folds(self, ids):
        """Yield ``(k, train_ids, test_ids)`` for the given subset."""
        ids = list(ids)
        n_folds = 1 + max(self.fold_assignments[u] for u in ids)
        for k in range(n_folds):
            test = [u for u in ids if self.fold_assignments[u] == k]
            train = [u for u in ids if self.fold_assignments[u] != k]
            yield k, train, test

    def to_dict(self):
        return {"tuning_ids": list(self.tuning_ids), "validation_ids": list(self.validation_ids),
                "fold_assignments": {u: int(k) for u, k in sorted(self.fold_assignments.items())}}

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["tuning_ids"]), list(d["validation_ids"]), dict(d["fold_assignments"]))


# ------------------------------------------------------------------ loading

def load_dataset(path):
    """Read a flat session file and its sidecar back into PlayerHistory objects."""
    path = Path(path)
    side = sidecar_path(path)
    if not side.exists():
        raise DataContractError(f"missing metadata sidecar {side}")
    meta = json.loads(side.read_text())
    by_user = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = ["user_id", "game_id", "session_index", "session_start", "session_time",
                    "play_time", "delta_session", "activity_index", "activity_diversity"]
        if reader.fieldnames != expected:
            raise DataContractError(f"unexpected columns {reader.fieldnames}")
        for row in reader:
            by_user[row["user_id"]].append(SessionRecord(
                user_id=row["user_id"], game_id=int(row["game_id"]),
                session_index=int(row["session_index"]),
                session_start=float(row["session_start"]), session_time=float(row["session_time"]),
                play_time=float(row["play_time"]), delta_session=float(row["delta_session"]),
                activity_index=int(row["activity_index"]),
                activity_diversity=int(row["activity_diversity"]),
            ))
    completions = meta.get("completions", {})
    out = []
    for uid in sorted(by_user):
        sessions = by_user[uid]
        idx = [s.session_index for s in sessions]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise DataContractError(f"{uid}: session_index not strictly increasing")
        game = sessions[0].game_id
        game_meta = meta["games"].get(str(game))
        if game_meta is None:
            raise DataContractError(f"{uid}: game {game} missing from sidecar")
        comp = completions.get(uid)
        out.append(PlayerHistory(uid, game, sessions, comp is not None, comp,
                                 float(game_meta["snapshot_time"])))
    return out, meta


# ------------------------------------------------------------ label rules

def filter_outlier_users(histories, percentile=99.0):
    """Drop users with any session metric strictly above their game's percentile.

    Percentiles use linear interpolation over all sessions of all users of a
    game, computed before any user is removed.
    """
    by_game = defaultdict(list)
    for h in histories:
        by_game[h.game_id].append(h)
    keep = []
    for game, users in sorted(by_game.items()):
        if len(users) < 2:
            warnings.warn(f"game {game}: fewer than 2 users, percentile filter is degenerate")
        allm = np.array([s.metrics() for h in users for s in h.sessions])
        limit = np.percentile(allm, percentile, axis=0)
        for h in users:
            m = np.array([s.metrics() for s in h.sessions])
            if not np.any(m > limit):
                keep.append(h)
    keep.sort(key=lambda h: h.user_id)
    return keep


def compute_cutoff(total_sessions, completion_sessions=None):
    """Observation-period length: ceil(min(S_t, S_c) / 3), S_c absent = +inf."""
    if total_sessions < 1:
        raise ValueError("total_sessions must be >= 1")
    s = total_sessions
    if completion_sessions is not None:
        if not 1 <= completion_sessions <= total_sessions:
            raise ValueError("need 1 <= completion_sessions <= total_sessions")
        s = min(s, completion_sessions)
    return -(-int(s) // 3)


def game_gaps(histories):
    """Inter-session distances of every user, grouped by game (first sessions excluded)."""
    gaps = defaultdict(list)
    for h in histories:
        gaps[h.game_id].extend(s.delta_session for s in h.sessions[1:])
    return {g: np.asarray(v, dtype=np.float64) for g, v in gaps.items()}


def compute_inactivity_threshold(gaps):
    """mean + 2.5 * population std of one game's inter-session gaps."""
    x = np.asarray(gaps, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least 2 inter-session gaps")
    return float(x.mean() + INACTIVITY_STD_FACTOR * x.std())


def idle_time(history):
    return history.snapshot_time - history.last_end


def label_churn(history, threshold):
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    if history.completed_game:
        return False
    return idle_time(history) >= threshold


def completion_count(history):
    """S_c: sessions up to and including the first completing one."""
    if not history.completed_game:
        return None
    return history.completion_session_index + 1


def observation_window(history):
    cutoff = compute_cutoff(history.total_sessions, completion_count(history))
    return ObservationWindow(history.user_id, history.game_id, cutoff, history.sessions[:cutoff])


def compute_survival_target(history, window):
    if window.user_id != history.user_id:
        raise ValueError(f"window belongs to {window.user_id}, not {history.user_id}")
    total = sum(s.play_time for s in history.sessions)
    op = sum(s.play_time for s in window.sessions)
    return max(0.0, total - op)


# ------------------------------------------------------- feature transforms

def quartiles(x):
    return tuple(float(q) for q in np.percentile(np.asarray(x, dtype=np.float64), [25, 50, 75]))


def robust_rescale(values, fit_stats=None):
    """(x - Q2) / (Q3 - Q1); a zero interquartile range is replaced by 1.

    Returns ``(rescaled, (Q1, Q2, Q3))``. Pass ``fit_stats`` to reuse
    quartiles fitted on training data.
    """
    x = np.asarray(values, dtype=np.float64)
    if fit_stats is None:
        if x.size < 4:
            raise ValueError("need at least 4 values to fit quartiles")
        fit_stats = quartiles(x)
    q1, q2, q3 = fit_stats
    iqr = q3 - q1
    if iqr == 0:
        iqr = 1.0
    return (x - q2) / iqr, tuple(fit_stats)


def collapse_matrix(metrics, game_id, n_games):
    m = np.asarray(metrics, dtype=np.float64).reshape(-1, N_METRICS)
    if m.shape[0] == 0:
        raise ValueError("empty window")
    onehot = np.zeros(n_games)
    onehot[game_id] = 1.0
    return np.concatenate([np.column_stack([m.mean(axis=0), m.std(axis=0)]).reshape(-1), onehot])


def collapse_features(window, n_games):
    """[mean_1, std_1, ..., mean_5, std_5] (population std) + one-hot game."""
    return collapse_matrix(window.metric_matrix(), window.game_id, n_games)


def unfold_and_pad(windows, max_len=None):
    """Post-pad each window to ``max_len`` rows; longer windows keep their last rows."""
    if not windows:
        raise ValueError("no windows")
    mats = [w.metric_matrix() if isinstance(w, ObservationWindow) else np.asarray(w) for w in windows]
    if max_len is None:
        max_len = max(m.shape[0] for m in mats)
    out = []
    for m in mats:
        m = m[-max_len:]
        seq = np.zeros((max_len, N_METRICS))
        seq[: m.shape[0]] = m
        mask = np.zeros(max_len, dtype=bool)
        mask[: m.shape[0]] = True
        out.append((seq, mask))
    return out


def op_bucket(op_length):
    return min(int(op_length), OP_BUCKETS[-1])


# ---------------------------------------------------------- the dataset

@dataclass
class PreparedDataset:
    """Column-oriented labeled users with raw (unscaled) padded windows."""

    user_ids: np.ndarray
    game_ids: np.ndarray
    labels: np.ndarray
    survival: np.ndarray
    op_length: np.ndarray
    sequences: np.ndarray  # N x L x 5, raw metrics, zero padded
    n_games: int
    game_names: dict = field(default_factory=dict)
    # what relabelling needs: time since last session, completion, inter-session gaps
    idle: np.ndarray = None
    completed: np.ndarray = None
    gaps: np.ndarray = None  # object array of float arrays

    def __len__(self):
        return len(self.user_ids)

    @property
    def masks(self):
        L = self.sequences.shape[1]
        return np.arange(L)[None, :] < self.op_length[:, None]

    def index_of(self, ids):
        pos = {u: i for i, u in enumerate(self.user_ids)}
        return np.array([pos[u] for u in ids], dtype=np.int64)

    def subset(self, idx):
        idx = np.asarray(idx)
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return PreparedDataset(self.user_ids[idx], self.game_ids[idx], self.labels[idx],
                               self.survival[idx], self.op_length[idx], self.sequences[idx],
                               self.n_games, self.game_names, pick(self.idle),
                               pick(self.completed), pick(self.gaps))

    def labels_for(self, thresholds):
        """Churn labels under the given per-game inactivity thresholds."""
        if self.idle is None:
            raise DataContractError("dataset carries no idle times; cannot relabel")
        thr = np.array([thresholds[int(g)] for g in self.game_ids], dtype=np.float64)
        return ~self.completed & (self.idle >= thr)

    def labeled_examples(self, fmt, scaler=None):
        """Materialise LabeledExample objects in the 'collapsed' or 'unfolded' format."""
        feats = scaler.transform(self) if scaler is not None else None
        out = []
        for i in range(len(self)):
            ex = LabeledExample(str(self.user_ids[i]), int(self.game_ids[i]), bool(self.labels[i]),
                                float(self.survival[i]), int(self.op_length[i]))
            if fmt == "collapsed":
                ex.collapsed_features = (feats.collapsed[i] if feats is not None else
                                         collapse_matrix(self.sequences[i, : self.op_length[i]],
                                                         self.game_ids[i], self.n_games))
            elif fmt == "unfolded":
                ex.sequence_features = feats.sequences[i] if feats is not None else self.sequences[i]
                ex.mask = feats.masks[i] if feats is not None else self.masks[i]
            else:
                raise ValueError(f"unknown format {fmt!r}")
            out.append(ex)
        return out


@dataclass
class FeatureSet:
    collapsed: np.ndarray
    flat: np.ndarray
    sequences: np.ndarray
    masks: np.ndarray
    context: np.ndarray


@dataclass
class FeatureScaler:
    """Per-game robust rescaling of session metrics plus the padding length.

    Quartiles are fitted on the valid observation-period sessions of the
    training users only; ``max_len`` is the longest training window.
    """

    quartiles: dict  # game -> list of 5 (Q1, Q2, Q3)
    max_len: int
    n_games: int
    train_ids: list = field(default_factory=list)

    @classmethod
    def fit(cls, data, train_idx=None):
        if train_idx is None:
            train_idx = np.arange(len(data))
        train = data.subset(train_idx)
        masks = train.masks
        q = {}
        for g in range(data.n_games):
            sel = train.game_ids == g
            rows = train.sequences[sel][masks[sel]]
            stats = []
            for j in range(N_METRICS):
                col = rows[:, j]
                stats.append(quartiles(col) if col.size >= 4 else (0.0, 0.0, 0.0))
            q[g] = stats
        return cls(q, int(train.op_length.max()), data.n_games, [str(u) for u in train.user_ids])

    def rescale_sequences(self, data):
        masks = data.masks
        L = data.sequences.shape[1]
        seqs = np.zeros((len(data), self.max_len, N_METRICS))
        out_masks = np.zeros((len(data), self.max_len), dtype=bool)
        for i in range(len(data)):
            n = int(data.op_length[i])
            m = data.sequences[i, :n]
            g = int(data.game_ids[i])
            if g not in self.quartiles:
                raise DataContractError(f"game {g} was not seen when fitting the scaler")
            m = np.column_stack([robust_rescale(m[:, j], self.quartiles[g][j])[0] for j in range(N_METRICS)])
            m = m[-self.max_len:]
            seqs[i, : m.shape[0]] = m
            out_masks[i, : m.shape[0]] = True
        del masks, L
        return seqs, out_masks

    def transform(self, data):
        seqs, masks = self.rescale_sequences(data)
        n = len(data)
        onehot = np.zeros((n, self.n_games))
        onehot[np.arange(n), data.game_ids] = 1.0
        collapsed = np.array([collapse_matrix(seqs[i][masks[i]], data.game_ids[i], self.n_games)
                              for i in range(n)]).reshape(n, -1)
        flat = np.concatenate([seqs.reshape(n, -1), onehot], axis=1)
        return FeatureSet(collapsed, flat, seqs, masks, data.game_ids.astype(np.int64))

    def to_dict(self):
        return {"quartiles": {str(g): [list(s) for s in v] for g, v in sorted(self.quartiles.items())},
                "max_len": self.max_len, "n_games": self.n_games, "train_ids": list(self.train_ids)}

    @classmethod
    def from_dict(cls, d):
        return cls({int(g): [tuple(s) for s in v] for g, v in d["quartiles"].items()},
                   int(d["max_len"]), int(d["n_games"]), list(d.get("train_ids", [])))


def _object_array(items):
    out = np.empty(len(items), dtype=object)
    for i, v in enumerate(items):
        out[i] = v
    return out


def build_records(histories, thresholds, n_games):
    """Label every history and cut its observation window."""
    users, games, labels, surv, oplen, windows = [], [], [], [], [], []
    idle, completed, gaps = [], [], []
    for h in histories:
        w = observation_window(h)
        users.append(h.user_id)
        games.append(h.game_id)
        labels.append(label_churn(h, thresholds[h.game_id]))
        surv.append(compute_survival_target(h, w))
        oplen.append(w.cutoff)
        windows.append(w.metric_matrix())
        idle.append(idle_time(h))
        completed.append(h.completed_game)
        gaps.append(np.array([s.delta_session for s in h.sessions[1:]], dtype=np.float64))
    L = max(oplen)
    seqs = np.zeros((len(users), L, N_METRICS))
    for i, m in enumerate(windows):
        seqs[i, : m.shape[0]] = m
    return PreparedDataset(np.array(users, dtype=object), np.array(games, dtype=np.int64),
                           np.array(labels, dtype=bool), np.array(surv), np.array(oplen, dtype=np.int64),
                           seqs, n_games, {}, np.array(idle), np.array(completed, dtype=bool),
                           _object_array(gaps))


def fit_thresholds(data, train_idx=None):
    """Per-game inactivity thresholds from the gaps of the given users only.

    Returns ``{"thresholds": {game: float}, "source_ids": {game: [ids]}}`` with
    string keys, ready for JSON.
    """
    if data.gaps is None:
        raise DataContractError("dataset carries no inter-session gaps")
    if train_idx is None:
        train_idx = np.arange(len(data))
    train_idx = np.asarray(train_idx, dtype=np.int64)
    order = train_idx[np.argsort(data.user_ids[train_idx].astype(str), kind="stable")]
    thresholds, sources = {}, {}
    for g in range(data.n_games):
        sel = order[data.game_ids[order] == g]
        pieces = [data.gaps[i] for i in sel]
        gaps = np.concatenate(pieces) if pieces else np.array([])
        if gaps.size < 2:
            raise DataContractError(f"game {g}: not enough inter-session gaps for a threshold")
        thresholds[str(g)] = compute_inactivity_threshold(gaps)
        sources[str(g)] = [str(u) for u in data.user_ids[sel]]
    return {"thresholds": thresholds, "source_ids": sources}


def threshold_map(fit):
    return {int(g): float(t) for g, t in fit["thresholds"].items()}


def balanced_sample(data, seed, per_class=None):
    """Down-sample the majority class per game (and optionally cap each class)."""
    rng = rng_for(seed, "balance")
    keep = []
    for g in range(data.n_games):
        pos = np.flatnonzero((data.game_ids == g) & data.labels)
        neg = np.flatnonzero((data.game_ids == g) & ~data.labels)
        k = min(len(pos), len(neg))
        if per_class is not None:
            if k < per_class:
                warnings.warn(f"game {g}: only {k} users per class available (wanted {per_class})")
            k = min(k, per_class)
        keep.extend(sorted(rng.choice(pos, k, replace=False)))
        keep.extend(sorted(rng.choice(neg, k, replace=False)))
    keep = np.array(sorted(keep, key=lambda i: data.user_ids[i]), dtype=np.int64)
    return data.subset(keep)


def make_split_plan(data, seed, tuning_fraction=0.2, n_folds=10):
    """Stratified 20/80 tuning/validation split with stratified folds in each part.

    Strata are (game, churn label, OP-length bucket {1, 2, 3, 4+}).
    """
    rng = rng_for(seed, "split")
    strata = defaultdict(list)
    for u, g, y, n in zip(data.user_ids, data.game_ids, data.labels, data.op_length):
        strata[(int(g), bool(y), op_bucket(n))].append(str(u))
    tuning, validation, folds = [], [], {}
    offsets = {"t": 0, "v": 0}
    for key in sorted(strata):
        ids = sorted(strata[key])
        if len(ids) < 10:
            warnings.warn(f"stratum {key} has only {len(ids)} examples")
        ids = [ids[i] for i in rng.permutation(len(ids))]
        n_t = int(round(tuning_fraction * len(ids)))
        for part, chunk, dest in (("t", ids[:n_t], tuning), ("v", ids[n_t:], validation)):
            for i, u in enumerate(chunk):
                folds[u] = (offsets[part] + i) % n_folds
            offsets[part] = (offsets[part] + len(chunk)) % n_folds
            dest.extend(chunk)
    return SplitPlan(sorted(tuning), sorted(validation), folds,
                     {f"{k[0]}|{int(k[1])}|{k[2]}": len(v) for k, v in sorted(strata.items())})


# --------------------------------------------------------------- pipeline

def prepare(histories, seed, percentile=99.0, per_class=None, tuning_fraction=0.2,
            n_folds=10, game_names=None):
    """Full preparation pipeline; returns ``(PreparedDataset, fit metadata dict)``.

    Order: outlier filter, per-game inactivity thresholds (on the filtered
    population), labels and windows, balanced sampling, split plan, and a
    deployment scaler fitted on the prepared users.
    """
    filtered = filter_outlier_users(histories, percentile)
    if not filtered:
        raise DataContractError("no users left after the outlier filter")
    n_games = 1 + max(h.game_id for h in histories)
    gaps = game_gaps(filtered)
    thresholds = {}
    threshold_sources = {}
    for g in range(n_games):
        if g not in gaps or gaps[g].size < 2:
            raise DataContractError(f"game {g}: not enough inter-session gaps for a threshold")
        thresholds[g] = compute_inactivity_threshold(gaps[g])
        threshold_sources[g] = sorted(h.user_id for h in filtered if h.game_id == g)
    data = build_records(filtered, thresholds, n_games)
    data = balanced_sample(data, seed, per_class)
    data.game_names = dict(game_names or {})
    plan = make_split_plan(data, seed, tuning_fraction, n_folds)
    scaler = FeatureScaler.fit(data)
    fit = {
        "version": FIT_VERSION,
        "n_games": n_games,
        "game_names": {str(g): n for g, n in sorted(data.game_names.items())},
        "outlier_percentile": percentile,
        "n_users_raw": len(histories),
        "n_users_filtered": len(filtered),
        "inactivity_thresholds": {str(g): thresholds[g] for g in range(n_games)},
        "threshold_source_ids": {str(g): threshold_sources[g] for g in range(n_games)},
        "scaler": scaler.to_dict(),
        "split_plan": plan.to_dict(),
        "seed": int(seed),
    }
    return data, fit


def fit_digest(fit):
    blob = json.dumps(fit, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def save_prepared(data, fit, out_dir):
    """Write examples.csv, sequences.npy and fit_metadata.json into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scaler = FeatureScaler.from_dict(fit["scaler"])
    feats = scaler.transform(data)
    with open(out / "examples.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = [f"{m}_{s}" for m in METRICS for s in ("mean", "std")]
        cols += [f"game_{g}" for g in range(data.n_games)]
        w.writerow(["user_id", "game_id", "churn_label", "survival_minutes", "op_length", "sequence_row",
                    "idle_minutes", "completed", "n_gaps"] + cols)
        for i in range(len(data)):
            w.writerow([data.user_ids[i], int(data.game_ids[i]), int(data.labels[i]),
                        repr(float(data.survival[i])), int(data.op_length[i]), i,
                        repr(float(data.idle[i])), int(data.completed[i]), data.gaps[i].size]
                       + [repr(float(v)) for v in feats.collapsed[i]])
    np.save(out / "sequences.npy", data.sequences, allow_pickle=False)
    flat = np.concatenate(list(data.gaps)) if len(data) else np.array([])
    np.save(out / "gaps.npy", flat, allow_pickle=False)
    (out / "fit_metadata.json").write_text(json.dumps(fit, sort_keys=True, indent=1) + "\n")


def load_prepared(in_dir):
    d = Path(in_dir)
    fit = json.loads((d / "fit_metadata.json").read_text())
    seqs = np.load(d / "sequences.npy", allow_pickle=False)
    flat = np.load(d / "gaps.npy", allow_pickle=False)
    users, games, labels, surv, oplen, rows = [], [], [], [], [], []
    idle, completed, counts = [], [], []
    with open(d / "examples.csv", newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            users.append(r["user_id"])
            games.append(int(r["game_id"]))
            labels.append(r["churn_label"] == "1")
            surv.append(float(r["survival_minutes"]))
            oplen.append(int(r["op_length"]))
            rows.append(int(r["sequence_row"]))
            idle.append(float(r["idle_minutes"]))
            completed.append(r["completed"] == "1")
            counts.append(int(r["n_gaps"]))
    if sum(counts) != flat.size:
        raise DataContractError("gaps.npy does not match the gap counts in examples.csv")
    bounds = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    gaps = _object_array([flat[a:b].copy() for a, b in zip(bounds[:-1], bounds[1:])])
    data = PreparedDataset(np.array(users, dtype=object), np.array(games, dtype=np.int64),
                           np.array(labels, dtype=bool), np.array(surv), np.array(oplen, dtype=np.int64),
                           seqs[np.array(rows, dtype=np.int64)], int(fit["n_games"]),
                           {int(g): n for g, n in fit.get("game_names", {}).items()},
                           np.array(idle), np.array(completed, dtype=bool), gaps)
    return data, fit


def audit_scaler(data, scaler_dict, forbidden_ids=()):
    """Recompute a stored scaler from its recorded training ids.

    Raises DataContractError if the recomputation differs or if any
    training id is in ``forbidden_ids`` (e.g. the held-out fold).
    """
    stored = FeatureScaler.from_dict(scaler_dict)
    bad = set(stored.train_ids) & set(map(str, forbidden_ids))
    if bad:
        raise DataContractError(f"scaler was fitted on {len(bad)} held-out users")
    again = FeatureScaler.fit(data, data.index_of(stored.train_ids))
    if again.max_len != stored.max_len:
        raise DataContractError("max_len does not match its training ids")
    for g, stats in stored.quartiles.items():
        if not np.array_equal(np.array(stats), np.array(again.quartiles[g])):
            raise DataContractError(f"game {g}: quartiles do not match their training ids")
    return True


def audit_thresholds(histories, fit):
    """Recompute inactivity thresholds from the recorded source users."""
    by_id = {h.user_id: h for h in histories}
    for g, ids in fit["threshold_source_ids"].items():
        gaps = game_gaps([by_id[u] for u in ids]).get(int(g), np.array([]))
        if compute_inactivity_threshold(gaps) != fit["inactivity_thresholds"][g]:
            raise DataContractError(f"game {g}: inactivity threshold does not match its sources")
    return True


def fold_fit(data, train_idx):
    """Every statistic a fold learns from its training users: thresholds and scaler."""
    return {"thresholds": fit_thresholds(data, train_idx),
            "scaler": FeatureScaler.fit(data, train_idx).to_dict()}


def audit_fold_fit(data, fit, heldout_ids):
    """Prove a stored fold fit derives from its training users only.

    Recomputes inactivity thresholds, quartiles and max_len from the recorded
    source ids and rejects any overlap with ``heldout_ids``.
    """
    held = set(map(str, heldout_ids))
    sources = fit["thresholds"]["source_ids"]
    for g, ids in sources.items():
        bad = held.intersection(ids)
        if bad:
            raise DataContractError(f"game {g}: threshold uses {len(bad)} held-out users")
    all_ids = sorted(u for ids in sources.values() for u in ids)
    if all_ids != sorted(FeatureScaler.from_dict(fit["scaler"]).train_ids):
        raise DataContractError("thresholds and scaler were fitted on different users")
    again = fit_thresholds(data, data.index_of(all_ids))
    if again != fit["thresholds"]:
        raise DataContractError("inactivity thresholds do not match their source users")
    return audit_scaler(data, fit["scaler"], held)
