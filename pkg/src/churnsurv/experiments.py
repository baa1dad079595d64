"""Experiment orchestration: grid search on tuning folds, fold evaluation, tables and figures."""
import csv
import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import dataprep as dp
from ._seeding import derive_seed, rng_for
from .metrics import confusion_counts, macro_f1_from_counts, smape_eval
from .models import (BifurcatingModel, BMConfig, ElasticNetModel, LogisticModel, MeanModel,
                     MLPModel)

log = logging.getLogger(__name__)

ROSTERS = {
    1: ("MM", "EN", "LR", "MLPr", "MLPc"),
    2: ("MM", "EN", "LR", "MLPr", "MLPc"),
    3: ("MM", "BM"),
}
FORMATS = {1: "collapsed", 2: "flat", 3: "sequence"}
# which metric(s) a model reports
OUTPUTS = {
    "MM": ("smape", "macro_f1"),
    "EN": ("smape",),
    "LR": ("macro_f1",),
    "MLPr": ("smape",),
    "MLPc": ("macro_f1",),
    "BM": ("smape", "macro_f1"),
}
DEFAULT_GRIDS = {
    "MM": {},
    "EN": {"alpha": [0.01, 0.1, 1.0], "l1_ratio": [0.25, 0.5, 0.75]},
    "LR": {"C": [0.001, 0.01, 0.1]},
    "MLPr": {"l2": [0.001, 0.01]},
    "MLPc": {"l2": [0.001, 0.01]},
    "BM": {"dropout": [0.1]},
}
# +1: larger value regularises more, -1: smaller value regularises more
STRENGTH = {
    "EN": {"alpha": 1, "l1_ratio": 1},
    "LR": {"C": -1},
    "MLPr": {"l2": 1},
    "MLPc": {"l2": 1},
    "BM": {"dropout": 1},
}
METRICS = ("smape", "macro_f1")
MC_SAMPLES = 50


class ExperimentError(ValueError):
    """Invalid experiment configuration or missing inputs."""


@dataclass
class ExperimentConfig:
    experiment: int
    grids: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_GRIDS.items()})
    seed: int = 0
    n_folds: int = 10
    output_dir: str = "runs/default"
    options: dict = field(default_factory=dict)  # {"mlp": {...}, "bm": {...}}
    mc_samples: int = MC_SAMPLES

    def __post_init__(self):
        if self.experiment not in ROSTERS:
            raise ExperimentError(f"unknown experiment {self.experiment!r}; expected 1, 2 or 3")
        if self.n_folds < 2:
            raise ExperimentError("fold count must be >= 2")
        for family in ROSTERS[self.experiment]:
            if family not in self.grids:
                raise ExperimentError(f"no grid given for {family}")


@dataclass
class ResultTable:
    """Rows of (game, model, metric, mean, std) aggregated over folds."""

    experiment: int
    rows: list = field(default_factory=list)
    game_names: dict = field(default_factory=dict)

    def add(self, game, model, metric, values):
        values = np.asarray(values, dtype=np.float64)
        self.rows.append((int(game), model, metric, float(values.mean()), float(values.std())))

    def get(self, game, model, metric):
        for g, m, k, mean, std in self.rows:
            if (g, m, k) == (game, model, metric):
                return mean, std
        raise KeyError((game, model, metric))

    def sorted(self):
        order = {m: i for i, m in enumerate(ROSTERS[self.experiment])}
        return sorted(self.rows, key=lambda r: (r[0], order.get(r[1], 99), METRICS.index(r[2])))

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["game_id", "game", "model", "metric", "mean", "std"])
            for g, m, k, mean, std in self.sorted():
                w.writerow([g, self.game_names.get(g, str(g)), m, k, repr(mean), repr(std)])

    @classmethod
    def from_csv(cls, path, experiment):
        t = cls(experiment)
        with open(path, newline="", encoding="utf-8") as fh:
            for r in csv.DictReader(fh):
                t.rows.append((int(r["game_id"]), r["model"], r["metric"], float(r["mean"]), float(r["std"])))
                t.game_names[int(r["game_id"])] = r["game"]
        return t


# --------------------------------------------------------------- grids

def expand_grid(grid):
    """All points of a grid as sorted tuples of (name, value)."""
    names = sorted(grid)
    for n in names:
        if len(grid[n]) == 0:
            raise ExperimentError(f"grid for {n!r} is empty")
    return [tuple(zip(names, combo)) for combo in itertools.product(*(grid[n] for n in names))]


def _strength_key(family, point):
    signs = STRENGTH.get(family, {})
    return tuple(-signs.get(k, 0) * v for k, v in point)


def select_best(family, scores):
    """Pick the best grid point from ``{point: mean score}`` (higher is better).

    Ties go to the more strongly regularised point, then to the
    lexicographically smallest parameters.
    """
    if not scores:
        raise ExperimentError("empty grid")
    return min(scores, key=lambda p: (-scores[p], _strength_key(family, p), p))


def selection_score(family, smape, f1):
    if family in ("EN", "MLPr"):
        return -smape
    if family in ("LR", "MLPc"):
        return f1
    return f1 - smape


# ---------------------------------------------------------------- jobs

@dataclass(frozen=True)
class Job:
    experiment: int
    phase: str  # "tune" or "eval"
    family: str
    params: tuple
    fold: int

    @property
    def key(self):
        return (self.experiment, self.phase, self.family, self.params, self.fold)


_STATE = {}


def _init_worker(data, folds, seed, options, mc_samples, ckpt_dir, build):
    _STATE.clear()
    _STATE.update(data=data, folds=folds, seed=seed, options=options, mc_samples=mc_samples,
                  ckpt_dir=ckpt_dir, build=build, cache={})
    _STATE["limits"] = threadpool_limits(1)


def _fold_inputs(phase, fold):
    cache = _STATE["cache"]
    if (phase, fold) not in cache:
        data = _STATE["data"]
        train_ids, test_ids = _STATE["folds"][phase][fold]
        tri, tei = data.index_of(train_ids), data.index_of(test_ids)
        fit = dp.fold_fit(data, tri)
        labels = data.labels_for(dp.threshold_map(fit["thresholds"])).astype(np.int64)
        feats = dp.FeatureScaler.from_dict(fit["scaler"]).transform(data.subset(np.concatenate([tri, tei])))
        cache.clear()
        cache[(phase, fold)] = (tri, tei, fit, labels, feats)
    return cache[(phase, fold)]


def _features(feats, fmt, rows):
    if fmt == "collapsed":
        return feats.collapsed[rows]
    if fmt == "flat":
        return feats.flat[rows]
    raise ExperimentError(f"format {fmt!r} is not a matrix format")


def run_job(job):
    """Fit one (family, params) on one fold's training users and predict its test users."""
    data = _STATE["data"]
    seed = _STATE["seed"]
    opts = _STATE["options"]
    tri, tei, fit, labels, feats = _fold_inputs(job.phase, job.fold)
    ntr = tri.size
    rtr, rte = np.arange(ntr), np.arange(ntr, ntr + tei.size)
    y_tr, c_tr = data.survival[tri], labels[tri]
    g_tr, g_te = data.game_ids[tri], data.game_ids[tei]
    params = dict(job.params)
    sub = derive_seed(seed, job.family, job.experiment, job.phase, job.fold)
    fmt = FORMATS[job.experiment]
    out = {"survival": None, "churn_prob": None, "churn": None}
    if job.family == "MM":
        # the same baseline in every experiment: its draws ignore the experiment id
        sub = derive_seed(seed, "MM", job.phase, job.fold)
        mm = MeanModel(sub).fit(y_tr, c_tr)
        out["survival"] = mm.predict_survival(tei.size)
        out["churn"] = mm.predict_churn(tei.size, np.random.default_rng(sub))
    elif job.family == "EN":
        m = ElasticNetModel(**params).fit(_features(feats, fmt, rtr), y_tr)
        out["survival"] = m.predict(_features(feats, fmt, rte))
    elif job.family == "LR":
        m = LogisticModel(**params).fit(_features(feats, fmt, rtr), c_tr)
        out["churn_prob"] = m.predict_proba(_features(feats, fmt, rte))
    elif job.family in ("MLPr", "MLPc"):
        variant = "regressor" if job.family == "MLPr" else "classifier"
        m = MLPModel(variant, seed=sub, **{**opts.get("mlp", {}), **params})
        if variant == "regressor":
            m.fit(_features(feats, fmt, rtr), y_tr, g_tr)
            out["survival"] = m.predict(_features(feats, fmt, rte), g_te)
        else:
            m.fit(_features(feats, fmt, rtr), c_tr)
            out["churn_prob"] = m.predict_proba(_features(feats, fmt, rte))
    elif job.family == "BM":
        if fmt != "sequence":
            raise ExperimentError("the bifurcating model needs the unfolded sequence format")
        cfg = BMConfig(**{**opts.get("bm", {}), **params})
        bm = BifurcatingModel(data.n_games, config=cfg, seed=sub)
        bm.fit(feats.sequences[rtr], feats.masks[rtr], g_tr, y_tr, c_tr)
        mc = bm.predict_mc(feats.sequences[rte], feats.masks[rte], g_te, _STATE["mc_samples"],
                           seed=derive_seed(sub, "mc"))
        out["survival"] = mc.survival_point
        out["churn_prob"] = mc.churn_point
        out["survival_samples"] = mc.survival
        out["churn_samples"] = mc.churn
        if job.phase == "eval" and _STATE["ckpt_dir"]:
            path = Path(_STATE["ckpt_dir"]) / f"exp{job.experiment}_BM_fold{job.fold}.ckpt"
            bm.to_checkpoint(path, {"build": _STATE["build"], "experiment": job.experiment,
                                    "fold": job.fold, "fold_fit": fit})
    else:
        raise ExperimentError(f"unknown model family {job.family!r}")
    if out["churn_prob"] is not None:
        out["churn"] = (out["churn_prob"] >= 0.5).astype(np.int64)
    out["test_idx"] = tei
    out["churn_true"] = labels[tei]
    return job.key, out


def _fold_scores(data, out):
    """Per-game (smape, macro-F1, counts) for one job's predictions."""
    g = data.game_ids[out["test_idx"]]
    truth = data.survival[out["test_idx"]]
    res = {}
    for game in range(data.n_games):
        sel = g == game
        if not np.any(sel):
            continue
        smape = smape_eval(out["survival"][sel], truth[sel]) if out["survival"] is not None else None
        counts = f1 = None
        if out["churn"] is not None:
            counts = confusion_counts(out["churn"][sel], out["churn_true"][sel])
            f1 = macro_f1_from_counts(counts)
        res[game] = (smape, f1, counts)
    return res


def _pooled_scores(data, out):
    truth = data.survival[out["test_idx"]]
    smape = smape_eval(out["survival"], truth) if out["survival"] is not None else None
    f1 = None
    if out["churn"] is not None:
        f1 = macro_f1_from_counts(confusion_counts(out["churn"], out["churn_true"]))
    return smape, f1


# ------------------------------------------------------------- the sweep

def _execute(jobs, workers, init_args):
    if workers <= 1:
        _init_worker(*init_args)
        try:
            return dict(run_job(j) for j in jobs)
        finally:
            _STATE["limits"].restore_original_limits()
            _STATE.clear()
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=init_args) as pool:
        return dict(pool.map(run_job, jobs, chunksize=1))


def _fold_lists(plan, ids):
    return {k: (train, test) for k, train, test in plan.folds(ids)}


def default_workers():
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)


def run_sweep(data, plan, experiments=(1, 2, 3), grids=None, seed=0, n_folds=10, output_dir="runs/default",
              options=None, mc_samples=MC_SAMPLES, workers=1, build="churnsurv"):
    """Run grid search and fold evaluation for several experiments in one work queue.

    Returns ``{experiment: ResultTable}`` and writes tables, per-fold
    metrics and predictions, fold fits, checkpoints and figures under
    ``output_dir``.
    """
    grids = {k: dict(v) for k, v in (grids or DEFAULT_GRIDS).items()}
    options = dict(options or {})
    configs = [ExperimentConfig(e, grids, seed, n_folds, str(output_dir), options, mc_samples)
               for e in experiments]
    tuning, validation = list(plan.tuning_ids), list(plan.validation_ids)
    if set(tuning) & set(validation):
        raise dp.DataContractError("tuning and validation users overlap")
    folds = {"tune": _fold_lists(plan, tuning), "eval": _fold_lists(plan, validation)}
    for phase, fl in folds.items():
        if len(fl) != n_folds:
            raise ExperimentError(f"split plan has {len(fl)} {phase} folds, config says {n_folds}")
    out = Path(output_dir)
    for sub in ("tables", "folds", "folds/fits", "checkpoints", "figures"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    init = (data, folds, seed, options, mc_samples, str(out / "checkpoints"), build)

    # grid search: single-point grids need no search
    points = {(c.experiment, f): expand_grid(c.grids[f]) for c in configs for f in ROSTERS[c.experiment]}
    tune_jobs = [Job(e, "tune", f, p, k) for (e, f), pts in sorted(points.items()) if len(pts) > 1
                 for p in pts for k in range(n_folds)]
    tuned = _execute(_longest_first(tune_jobs), workers, init)
    best, search_rows = {}, []
    for (e, f), pts in sorted(points.items()):
        if len(pts) == 1:
            best[(e, f)] = pts[0]
            search_rows.append((e, f, pts[0], None, True))
            continue
        scores = {}
        for p in pts:
            per_fold = [selection_score(f, *_pooled_scores(data, tuned[(e, "tune", f, p, k)]))
                        for k in range(n_folds)]
            scores[p] = float(np.mean(per_fold))
        best[(e, f)] = select_best(f, scores)
        search_rows.extend((e, f, p, scores[p], p == best[(e, f)]) for p in pts)
    _write_search(out / "tables" / "grid_search.csv", search_rows)

    eval_jobs = [Job(c.experiment, "eval", f, best[(c.experiment, f)], k)
                 for c in configs for f in ROSTERS[c.experiment] for k in range(n_folds)]
    evaluated = _execute(_longest_first(eval_jobs), workers, init)

    for k in range(n_folds):
        for phase in ("tune", "eval"):
            tr, _ = folds[phase][k]
            fit = dp.fold_fit(data, data.index_of(tr))
            path = out / "folds" / "fits" / f"{phase}_fold{k}.json"
            path.write_text(json.dumps(fit, sort_keys=True, indent=1) + "\n")

    tables = {}
    for c in configs:
        e = c.experiment
        table = ResultTable(e, game_names={int(g): n for g, n in data.game_names.items()})
        metric_rows = []
        for f in ROSTERS[e]:
            per_game = {}
            results = [evaluated[(e, "eval", f, best[(e, f)], k)] for k in range(n_folds)]
            for k, res in enumerate(results):
                for game, (smape, f1, counts) in _fold_scores(data, res).items():
                    per_game.setdefault(game, []).append((k, smape, f1, counts))
            for game, rows in sorted(per_game.items()):
                for metric in OUTPUTS[f]:
                    vals = [r[1] if metric == "smape" else r[2] for r in rows]
                    table.add(game, f, metric, vals)
                    for (k, _, _, counts), v in zip(rows, vals):
                        metric_rows.append((f, metric, game, k, v, counts if metric == "macro_f1" else None))
            _write_predictions(out / "folds" / f"exp{e}_{f}_predictions.csv", data, results)
        table.to_csv(out / "tables" / f"exp{e}.csv")
        _write_fold_metrics(out / "folds" / f"exp{e}_metrics.csv", metric_rows)
        if "BM" in ROSTERS[e]:
            bm_results = [evaluated[(e, "eval", "BM", best[(e, "BM")], k)] for k in range(n_folds)]
            _write_confusion(out / "tables" / f"exp{e}_confusion.csv", bm_results)
            emit_figures(data, bm_results, out / "figures", seed)
        tables[e] = table
    return tables


def run_experiment(config, data, plan, workers=1, build="churnsurv"):
    """Run one experiment end to end; returns its :class:`ResultTable`."""
    return run_sweep(data, plan, (config.experiment,), config.grids, config.seed, config.n_folds,
                     config.output_dir, config.options, config.mc_samples, workers, build)[config.experiment]


def grid_search_cv(family, grid, data, plan, experiment, seed=0, options=None, workers=1):
    """Exhaustive grid search over the tuning folds; returns the best parameter dict."""
    points = expand_grid(grid)
    if family not in ROSTERS[experiment]:
        raise ExperimentError(f"{family} is not part of experiment {experiment}")
    if len(points) == 1:
        return dict(points[0])
    folds = {"tune": _fold_lists(plan, plan.tuning_ids), "eval": {}}
    n_folds = len(folds["tune"])
    jobs = [Job(experiment, "tune", family, p, k) for p in points for k in range(n_folds)]
    done = _execute(jobs, workers, (data, folds, seed, dict(options or {}), MC_SAMPLES, None, "churnsurv"))
    scores = {p: float(np.mean([selection_score(family, *_pooled_scores(data, done[(experiment, "tune", family, p, k)]))
                                for k in range(n_folds)])) for p in points}
    return dict(select_best(family, scores))


_COST = {"BM": 0, "MLPr": 1, "MLPc": 1, "LR": 2, "EN": 3, "MM": 4}


def _longest_first(jobs):
    return sorted(jobs, key=lambda j: (_COST[j.family], j.key))


# ------------------------------------------------------------- writers

def _fmt(v):
    return "" if v is None else repr(float(v))


def _write_search(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["experiment", "model", "params", "mean_score", "selected"])
        for e, f, p, score, sel in rows:
            w.writerow([e, f, json.dumps(dict(p), sort_keys=True), _fmt(score), int(sel)])


def _write_fold_metrics(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "metric", "game_id", "fold", "value", "tn", "fp", "fn", "tp"])
        for f, metric, game, k, v, counts in rows:
            c = [] if counts is None else [int(counts[0, 0]), int(counts[0, 1]), int(counts[1, 0]), int(counts[1, 1])]
            w.writerow([f, metric, game, k, repr(float(v))] + (c or [""] * 4))


def _write_predictions(path, data, results):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "game_id", "fold", "survival_true", "churn_true", "survival_pred",
                    "churn_prob", "churn_pred", "survival_std", "churn_std"])
        for k, res in enumerate(results):
            idx = res["test_idx"]
            ss, cs = res.get("survival_samples"), res.get("churn_samples")
            for j, i in enumerate(idx):
                w.writerow([data.user_ids[i], int(data.game_ids[i]), k, repr(float(data.survival[i])),
                            int(res["churn_true"][j]),
                            _fmt(None if res["survival"] is None else res["survival"][j]),
                            _fmt(None if res["churn_prob"] is None else res["churn_prob"][j]),
                            "" if res["churn"] is None else int(res["churn"][j]),
                            _fmt(None if ss is None else ss[j].std()),
                            _fmt(None if cs is None else cs[j].std())])


def _write_confusion(path, results):
    counts = sum(confusion_counts(r["churn"], r["churn_true"]) for r in results)
    names = ("non_churner", "churner")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["truth", "estimate", "count", "proportion"])
        for t in (1, 0):
            for p in (1, 0):
                total = counts[t].sum()
                w.writerow([names[t], names[p], int(counts[t, p]),
                            repr(float(counts[t, p] / total)) if total else ""])


# ------------------------------------------------------------- figures

def _density(samples, grid):
    from scipy.stats import gaussian_kde

    samples = np.asarray(samples, dtype=np.float64)
    if np.ptp(samples) > 1e-12:
        try:
            return gaussian_kde(samples)(grid)
        except np.linalg.LinAlgError:
            pass
    bw = 0.01  # degenerate sample set: a narrow bump at the common value
    z = (grid - samples.mean()) / bw
    return np.exp(-0.5 * z * z) / (bw * np.sqrt(2 * np.pi))


def density_grid(samples, n=512, pad=0.25):
    lo, hi = float(np.min(samples)), float(np.max(samples))
    width = max(hi - lo, 0.08)
    return np.linspace(lo - pad * width - 0.05, hi + pad * width + 0.05, n)


def emit_figures(data, bm_results, fig_dir, seed=0):
    """Survival scatter and per-game MC-dropout densities; returns the written paths."""
    if not bm_results or any("survival_samples" not in r for r in bm_results):
        raise ExperimentError("figures need bifurcating-model MC samples")
    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    idx = np.concatenate([r["test_idx"] for r in bm_results])
    est = np.concatenate([r["survival"] for r in bm_results])
    ss = np.concatenate([r["survival_samples"] for r in bm_results])
    cs = np.concatenate([r["churn_samples"] for r in bm_results])
    order = np.argsort(data.user_ids[idx].astype(str), kind="stable")
    idx, est, ss, cs = idx[order], est[order], ss[order], cs[order]
    games = data.game_ids[idx]
    truth = data.survival[idx]

    scatter = fig_dir / "survival_scatter.csv"
    with open(scatter, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "game_id", "log1p_estimate", "log1p_truth"])
        for i, g, e, t in zip(idx, games, est, truth):
            w.writerow([data.user_ids[i], int(g), repr(float(np.log1p(max(e, 0.0)))), repr(float(np.log1p(t)))])

    rng = rng_for(seed, "figure-users")
    density_rows, picks = [], []
    for g in range(data.n_games):
        rows = np.flatnonzero(games == g)
        if rows.size == 0:
            continue
        r = int(rows[rng.integers(rows.size)])
        lo, hi = ss[rows].min(), ss[rows].max()
        surv01 = (ss[r] - lo) / (hi - lo) if hi > lo else np.zeros_like(ss[r])
        picks.append((g, str(data.user_ids[idx[r]]), surv01, cs[r]))
        for quantity, s in (("survival", surv01), ("churn", cs[r])):
            grid = density_grid(s)
            for x, d in zip(grid, _density(s, grid)):
                density_rows.append((g, data.user_ids[idx[r]], quantity, x, d))
    dens = fig_dir / "mc_density.csv"
    with open(dens, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["game_id", "user_id", "quantity", "x", "density"])
        for g, u, q, x, d in density_rows:
            w.writerow([g, u, q, repr(float(x)), repr(float(d))])
    samples = fig_dir / "mc_samples.csv"
    with open(samples, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["game_id", "user_id", "sample", "survival_rescaled", "churn_prob"])
        for g, u, s01, c in picks:
            for k, (a, b) in enumerate(zip(s01, c)):
                w.writerow([g, u, k, repr(float(a)), repr(float(b))])
    svgs = _render(data, games, est, truth, density_rows, fig_dir)
    return [scatter, dens, samples] + svgs


def _render(data, games, est, truth, density_rows, fig_dir):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    name = lambda g: data.game_names.get(g, f"game {g}")  # noqa: E731
    with matplotlib.rc_context({"svg.hashsalt": "churnsurv", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 5))
        for g in range(data.n_games):
            sel = games == g
            ax.scatter(np.log1p(truth[sel]), np.log1p(np.maximum(est[sel], 0.0)), s=3, alpha=0.4, label=name(g))
        ax.set_xlabel("log(1 + survival), ground truth")
        ax.set_ylabel("log(1 + survival), estimate")
        ax.legend(markerscale=4, fontsize=7)
        p1 = fig_dir / "survival_scatter.svg"
        fig.savefig(p1, format="svg", metadata={"Date": None})
        plt.close(fig)

        fig, axes = plt.subplots(1, 2, figsize=(10, 4))
        for ax, quantity, label in zip(axes, ("survival", "churn"),
                                       ("survival estimate (rescaled per game)", "churn probability")):
            for g in range(data.n_games):
                pts = [(x, d) for gg, _, q, x, d in density_rows if gg == g and q == quantity]
                if pts:
                    xs, ds = zip(*pts)
                    ax.plot(xs, ds, label=name(g))
            ax.set_xlabel(label)
            ax.set_ylabel("density")
        axes[0].legend(fontsize=7)
        p2 = fig_dir / "mc_density.svg"
        fig.savefig(p2, format="svg", metadata={"Date": None})
        plt.close(fig)
    return [p1, p2]


# ------------------------------------------------------------ reading back

def read_fold_metrics(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            counts = None
            if r["tn"] != "":
                counts = np.array([[int(r["tn"]), int(r["fp"])], [int(r["fn"]), int(r["tp"])]])
            rows.append((r["model"], r["metric"], int(r["game_id"]), int(r["fold"]), float(r["value"]), counts))
    return rows
