"""Synthetic session telemetry driven by a latent engagement process.

Each user carries an engagement scalar ``e`` in (0, 1].  After every session
it is multiplied by the user's decay ``d`` and perturbed by how rewarding the
session was::

    e <- min(1, e * d * (1 + reward_signal_strength * REWARD_GAIN * (q - 0.5)))

where ``q`` in [0, 1] is the session's reward quality.  ``q`` shows up in the
data as the share of distinct actions (activity diversity / activity index),
session and play time grow with ``e`` and inter-session gaps shrink with it,
so the five behavioural metrics carry the signal that drives churn and
future play.  A user stops when ``e`` drops below :data:`ENGAGEMENT_FLOOR`,
after ``max_sessions`` sessions, or when the next session would start after
the game's snapshot time (still active at collection time).

Completion: every session adds ``min(1, play_time / (STEADY_FRACTION *
mean_session_minutes))`` units of progress; the game counts as completed at the first session where
the cumulative progress reaches ``completion_sessions``.
"""
import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ._seeding import derive_seed

ENGAGEMENT_FLOOR = 0.01
INITIAL_ENGAGEMENT = (0.2, 1.0)
STEADY_FRACTION = 0.5
REWARD_GAIN = 0.8
POST_COMPLETION_DROP = 0.6
SESSION_NOISE = 0.15
GAP_SHAPE = 4.0
ACTIONS_PER_MINUTE = 1.2
START_WINDOW = 0.5
HORIZON_FACTOR = 2.0

COLUMNS = (
    "user_id", "game_id", "session_index", "session_start", "session_time",
    "play_time", "delta_session", "activity_index", "activity_diversity",
)
METRICS = ("session_time", "play_time", "delta_session", "activity_index", "activity_diversity")


@dataclass(frozen=True)
class GameProfile:
    game_id: int
    name: str
    mean_session_minutes: float
    session_time_dispersion: float
    mean_intersession_minutes: float
    completion_sessions: int
    engagement_decay_range: tuple
    reward_signal_strength: float
    max_sessions: int

    def __post_init__(self):
        if self.game_id < 0:
            raise ValueError("game_id must be non-negative")
        for attr in ("mean_session_minutes", "session_time_dispersion", "mean_intersession_minutes"):
            if not getattr(self, attr) > 0:
                raise ValueError(f"{attr} must be strictly positive")
        if self.completion_sessions < 1 or self.max_sessions < 1:
            raise ValueError("completion_sessions and max_sessions must be positive")
        lo, hi = self.engagement_decay_range
        if not (0 < lo <= hi < 1):
            raise ValueError("engagement_decay_range must satisfy 0 < low <= high < 1")
        if not 0 <= self.reward_signal_strength <= 1:
            raise ValueError("reward_signal_strength must be in [0, 1]")

    @property
    def snapshot_time(self):
        """Data-collection cutoff in minutes since the game's release."""
        return HORIZON_FACTOR * self.max_sessions * self.mean_intersession_minutes

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["engagement_decay_range"] = tuple(d["engagement_decay_range"])
        return cls(**d)


@dataclass
class SessionRecord:
    user_id: str
    game_id: int
    session_index: int
    session_start: float
    session_time: float
    play_time: float
    delta_session: float
    activity_index: int
    activity_diversity: int

    def metrics(self):
        return (self.session_time, self.play_time, self.delta_session,
                float(self.activity_index), float(self.activity_diversity))

    @property
    def end(self):
        return self.session_start + self.session_time


@dataclass
class PlayerHistory:
    user_id: str
    game_id: int
    sessions: list
    completed_game: bool
    completion_session_index: int | None
    snapshot_time: float
    latent: list = field(default=None, compare=False, repr=False)

    @property
    def total_sessions(self):
        return len(self.sessions)

    @property
    def last_end(self):
        return self.sessions[-1].end


def load_default_profiles():
    text = resources.files("churnsurv").joinpath("data/profiles.json").read_text()
    return [GameProfile.from_dict(d) for d in json.loads(text)]


def _simulate_user(profile, user_id, seed):
    rng = np.random.default_rng(seed)
    e = rng.uniform(*INITIAL_ENGAGEMENT)
    lo, hi = profile.engagement_decay_range
    decay = rng.uniform(lo, hi)
    # per-user traits: session length scale and pace
    length_trait = rng.lognormal(-0.5 * profile.session_time_dispersion ** 2,
                                 profile.session_time_dispersion)
    pace_trait = rng.lognormal(-0.045, 0.3)
    snapshot = profile.snapshot_time
    t = rng.uniform(0.0, START_WINDOW * snapshot)

    sessions, latent = [], []
    progress = 0.0
    completion_idx = None
    prev_end = None
    for k in range(profile.max_sessions):
        if e < ENGAGEMENT_FLOOR:
            break
        if k > 0:
            gap_mean = profile.mean_intersession_minutes * pace_trait * (1.6 - e)
            t = prev_end + rng.gamma(GAP_SHAPE, gap_mean / GAP_SHAPE)
            if t > snapshot:
                break
        latent.append(float(e))
        st = (profile.mean_session_minutes * length_trait * (0.25 + 1.5 * e)
              * rng.lognormal(-0.5 * SESSION_NOISE ** 2, SESSION_NOISE))
        pf = float(np.clip(0.45 + 0.5 * e + rng.normal(0.0, 0.05), 0.05, 1.0))
        play = st * pf
        if t + st > snapshot:
            st = snapshot - t
            play = min(play, st)
        q = rng.uniform()
        acts = int(rng.poisson(play * ACTIONS_PER_MINUTE * (0.5 + e)))
        div = int(rng.binomial(acts, 0.1 + 0.5 * q)) if acts else 0
        sessions.append(SessionRecord(
            user_id=user_id, game_id=profile.game_id, session_index=k,
            session_start=float(t), session_time=float(st), play_time=float(play),
            delta_session=0.0 if prev_end is None else float(t - prev_end),
            activity_index=acts, activity_diversity=div,
        ))
        prev_end = t + st
        progress += min(1.0, play / (STEADY_FRACTION * profile.mean_session_minutes))
        if completion_idx is None and progress >= profile.completion_sessions:
            completion_idx = k
            e *= POST_COMPLETION_DROP
        s = profile.reward_signal_strength
        e = min(1.0, e * decay * (1.0 + s * REWARD_GAIN * (q - 0.5)))
    return PlayerHistory(
        user_id=user_id, game_id=profile.game_id, sessions=sessions,
        completed_game=completion_idx is not None,
        completion_session_index=completion_idx, snapshot_time=float(snapshot),
        latent={"engagement": latent, "decay": float(decay)},
    )


def generate_population(profile, n_users, seed):
    """Simulate ``n_users`` players of one game; deterministic for a fixed seed.

    Users get ids ``"{game name}-{index:06d}"`` and are returned sorted by id.
    """
    if not isinstance(n_users, (int, np.integer)) or n_users < 1:
        raise ValueError(f"n_users must be a positive integer, got {n_users!r}")
    out = []
    for i in range(int(n_users)):
        uid = f"{profile.name}-{i:06d}"
        out.append(_simulate_user(profile, uid, derive_seed(seed, "synth", profile.game_id, i)))
    out = [h for h in out if h.sessions]
    out.sort(key=lambda h: h.user_id)
    return out


def _fmt(x):
    return repr(float(x))


def emit_dataset(histories, path, game_names=None, build=None):
    """Write the flat session file plus its ``.meta.json`` sidecar; return row count.

    The sidecar maps game id to name and snapshot time, and lists the
    completion session index of every user who completed their game.
    ``build`` is copied into the sidecar when given.
    """
    if not histories:
        raise ValueError("cannot emit an empty history list")
    path = Path(path)
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for h in histories:
            for s in h.sessions:
                w.writerow([s.user_id, s.game_id, s.session_index, _fmt(s.session_start),
                            _fmt(s.session_time), _fmt(s.play_time), _fmt(s.delta_session),
                            s.activity_index, s.activity_diversity])
                rows += 1
    games, completions = {}, {}
    for h in histories:
        entry = games.setdefault(str(h.game_id), {"snapshot_time": h.snapshot_time})
        if game_names and h.game_id in game_names:
            entry["name"] = game_names[h.game_id]
        if h.completed_game:
            completions[h.user_id] = h.completion_session_index
    meta = {"games": games, "completions": completions}
    if build is not None:
        meta["build"] = build
    sidecar_path(path).write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    return rows


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".meta.json")

