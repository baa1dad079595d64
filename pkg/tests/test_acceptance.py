"""End-to-end acceptance checks, one test per criterion.

The default-config sweep runs once per session (several minutes on one
core); everything that needs real trained models reads its artifacts.
"""
import csv
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from churnsurv import cli, dataprep as dp
from churnsurv import engine as E
from churnsurv import experiments as ex
from churnsurv import metrics
from churnsurv.models import BifurcatingModel, BMConfig

from . import oracles
from .test_engine import _layer_cases, bm_gradient_error
from .gradcheck import max_rel_error

TRAINED = ("EN", "LR", "MLPr", "MLPc", "BM")
SWEEP_LIMIT_S = 15 * 60


@pytest.fixture(scope="session")
def full_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("full")
    timings = {}
    for cmd in ("synth", "prep", "evaluate", "report"):
        t0 = time.perf_counter()
        code = cli.run([cmd, "--config", "default", "--out", str(out)])
        timings[cmd] = time.perf_counter() - t0
        assert code == 0, f"{cmd} exited with {code}"
    tables = {e: ex.ResultTable.from_csv(out / "tables" / f"exp{e}.csv", e) for e in (1, 2, 3)}
    data, fit = dp.load_prepared(out / "prepared")
    return out, tables, timings, data, fit


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


# ------------------------------------------------------------------------ 1
def test_formula_oracles(criterion):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = {}

    def note(name, got, want):
        err = max(_rel(g, w) if w != 0 else abs(g) for g, w in zip(np.ravel(got), np.ravel(want)))
        worst[name] = max(worst.get(name, 0.0), err)

    for _ in range(200):
        total = int(rng.integers(1, 400))
        comp = int(rng.integers(1, total + 1)) if rng.random() < 0.5 else None
        note("cutoff", [dp.compute_cutoff(total, comp)], [oracles.cutoff(total, comp)])
        gaps = rng.exponential(rng.uniform(10, 5000), size=int(rng.integers(2, 60)))
        note("inactivity", [dp.compute_inactivity_threshold(gaps)], [oracles.inactivity(list(gaps))])
        vals = rng.normal(rng.uniform(-50, 50), rng.uniform(0.1, 30), size=int(rng.integers(4, 40)))
        note("robust_rescale", dp.robust_rescale(vals)[0], oracles.robust_rescale(list(vals)))
        n = int(rng.integers(1, 50))
        pred, truth = rng.uniform(0, 100, n), rng.uniform(0, 100, n)
        note("smape", [metrics.smape_eval(pred, truth)], [oracles.smape(pred, truth)])
        pl, tl = rng.integers(0, 2, n), rng.integers(0, 2, n)
        note("macro_f1", [metrics.macro_f1(pl, tl)], [oracles.macro_f1(pl, tl)])
        note("mse", [E.loss_mse(E.Tensor(pred), truth).item()], [oracles.mse(pred, truth)])
        probs = rng.uniform(0, 1, n)
        probs[rng.random(n) < 0.1] = rng.choice([0.0, 1.0])
        note("bce", [E.loss_bce(E.Tensor(probs), tl.astype(float)).item()], [oracles.bce(probs, tl)])
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-12 and elapsed < 10
    spread = ", ".join(f"{k} {v:.0e}" for k, v in worst.items())
    criterion(1, ok, f"200 cases x 7 formulas, worst rel err ({spread}), {elapsed:.1f}s")


# ------------------------------------------------------------------------ 2
def test_paper_cutoff(criterion):
    got = dp.compute_cutoff(9)
    criterion(2, got == 3, f"cutoff(9) = {got}")


# ------------------------------------------------------------------------ 3
def test_gradient_suite(criterion):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        for _, f, tensors in _layer_cases(seed):
            worst = max(worst, max_rel_error(f, tensors))
        worst = max(worst, bm_gradient_error(seed))
    elapsed = time.perf_counter() - t0
    criterion(3, worst < 1e-4 and elapsed < 60,
              f"10 layer checks + shrunken BM over 20 seeds, worst {worst:.1e}, {elapsed:.1f}s")


# ------------------------------------------------------------------------ 4
def test_mask_invariance(criterion):
    rng = np.random.default_rng(4)
    model = BifurcatingModel(6, config=BMConfig(embedding_dim=8, fusion_units=12, lstm_units=16,
                                                head_units=24), seed=4)
    for p in model.params.values():
        p.data = p.data + rng.normal(scale=0.2, size=p.data.shape)
    for bn in model.bn.values():
        bn.running_mean = rng.normal(size=bn.running_mean.shape)
        bn.running_var = rng.uniform(0.5, 2.0, size=bn.running_var.shape)
    identical = 0
    for _ in range(200):
        B, T, extra = int(rng.integers(1, 9)), int(rng.integers(1, 12)), int(rng.integers(1, 8))
        lens = rng.integers(1, T + 1, B)
        masks = np.arange(T)[None] < lens[:, None]
        seqs = rng.normal(size=(B, T, 5)) * masks[..., None]
        ctx = rng.integers(0, 6, B)
        wide = np.concatenate([seqs, rng.normal(size=(B, extra, 5)) * 50], axis=1)
        wmask = np.concatenate([masks, np.zeros((B, extra), bool)], axis=1)
        a, b = model.predict(seqs, masks, ctx), model.predict(wide, wmask, ctx)
        identical += np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    criterion(4, identical == 200, f"{identical}/200 padded pairs bit-identical")


# ------------------------------------------------------------------------ 5
def test_mean_model_baseline(criterion, full_run):
    _, tables, _, data, _ = full_run
    f1s, margins = [], []
    for e, t in tables.items():
        for g in range(data.n_games):
            f1s.append(t.get(g, "MM", "macro_f1")[0])
            mm = t.get(g, "MM", "smape")[0]
            for m in TRAINED:
                if m in ex.ROSTERS[e] and "smape" in ex.OUTPUTS[m]:
                    margins.append(mm - t.get(g, m, "smape")[0])
    ok = all(abs(f - 0.5) <= 0.02 for f in f1s) and min(margins) > 0
    criterion(5, ok, f"MM F1 in [{min(f1s):.3f}, {max(f1s):.3f}], "
                     f"smallest MM-minus-model SMAPE gap {min(margins):.3f}")


# ------------------------------------------------------------------------ 6
def _ordering(tables, n_games):
    t3 = tables[3]
    problems, gaps = [], []
    for g in range(n_games):
        bm_f, mm_f = t3.get(g, "BM", "macro_f1")[0], t3.get(g, "MM", "macro_f1")[0]
        bm_s, mm_s = t3.get(g, "BM", "smape")[0], t3.get(g, "MM", "smape")[0]
        gaps.append((bm_f - mm_f, mm_s - bm_s))
        if bm_f - mm_f < 0.10:
            problems.append(f"g{g} BM-MM F1 {bm_f - mm_f:.3f}")
        if mm_s - bm_s < 0.05:
            problems.append(f"g{g} MM-BM SMAPE {mm_s - bm_s:.3f}")
        for e in (1, 2):
            t = tables[e]
            mlpc, lr = t.get(g, "MLPc", "macro_f1")[0], t.get(g, "LR", "macro_f1")[0]
            mlpr, en = t.get(g, "MLPr", "smape")[0], t.get(g, "EN", "smape")[0]
            mm_s_e = t.get(g, "MM", "smape")[0]
            mm_f_e = t.get(g, "MM", "macro_f1")[0]
            if not bm_f >= mlpc:
                problems.append(f"g{g} e{e} F1 BM {bm_f:.3f} < MLPc {mlpc:.3f}")
            if not mlpc >= lr:
                problems.append(f"g{g} e{e} F1 MLPc {mlpc:.3f} < LR {lr:.3f}")
            if not lr > mm_f_e:
                problems.append(f"g{g} e{e} F1 LR {lr:.3f} <= MM {mm_f_e:.3f}")
            if not bm_s <= mlpr:
                problems.append(f"g{g} e{e} SMAPE BM {bm_s:.3f} > MLPr {mlpr:.3f}")
            if not mlpr <= en:
                problems.append(f"g{g} e{e} SMAPE MLPr {mlpr:.3f} > EN {en:.3f}")
            if not en < mm_s_e:
                problems.append(f"g{g} e{e} SMAPE EN {en:.3f} >= MM {mm_s_e:.3f}")
    return problems, gaps


def test_model_ordering(criterion, full_run):
    _, tables, timings, data, _ = full_run
    problems, gaps = _ordering(tables, data.n_games)
    sweep = timings["evaluate"]
    cores = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()
    per_exp = {e: sum(f" e{e} " in p for p in problems) for e in (1, 2)}
    detail = (f"ordering violations: collapsed format {per_exp[1]}, flat format {per_exp[2]}, "
              f"BM/MM margins {len(problems) - sum(per_exp.values())}; "
              f"min BM-MM F1 {min(f for f, _ in gaps):.3f}, min MM-BM SMAPE {min(s for _, s in gaps):.3f}; "
              f"sweep {sweep / 60:.1f} min on {cores} core(s)")
    if problems:
        detail += " [" + ", ".join(problems) + "]"
    criterion(6, not problems and sweep < SWEEP_LIMIT_S, detail)


# ------------------------------------------------------------------------ 7
def test_mc_contract(criterion, full_run):
    out, _, _, data, fit = full_run
    model, meta = BifurcatingModel.from_checkpoint(out / "checkpoints" / "exp3_BM_fold0.ckpt")
    scaler = dp.FeatureScaler.from_dict(meta["fold_fit"]["scaler"])
    plan = dp.SplitPlan.from_dict(fit["split_plan"])
    test_ids = [u for u in plan.validation_ids if plan.fold_assignments[u] == 0]
    rng = np.random.default_rng(7)
    probe = data.subset(data.index_of(sorted(rng.choice(test_ids, 20, replace=False))))
    f = scaler.transform(probe)
    mc = model.predict_mc(f.sequences, f.masks, f.context, seed=11)
    big = model.predict_mc(f.sequences, f.masks, f.context, 2000, seed=12)
    n_ok = mc.survival.shape == mc.churn.shape == (20, 50)
    mean_ok = (np.array_equal(mc.survival_point, mc.survival.mean(1))
               and np.array_equal(mc.churn_point, mc.churn.mean(1)))
    z = []
    for s50, s2000 in ((mc.survival, big.survival), (mc.churn, big.churn)):
        se = s50.std(1, ddof=1) / np.sqrt(50)
        z.extend(np.abs(s50.mean(1) - s2000.mean(1)) / se)
    conv_ok = max(z) <= 3
    model.config.dropout = 0.0
    flat = model.predict_mc(f.sequences, f.masks, f.context, seed=11)
    zero_ok = np.ptp(flat.survival, 1).max() == 0 and np.ptp(flat.churn, 1).max() == 0
    criterion(7, n_ok and mean_ok and conv_ok and zero_ok,
              f"50 samples: {n_ok}; point = mean: {mean_ok}; rate 0 flat: {zero_ok}; "
              f"max |mean50 - mean2000| = {max(z):.2f} SE over 20 users x 2 outputs")


# ------------------------------------------------------------------------ 8
def test_confusion_consistency(criterion, full_run):
    out, tables, _, _, _ = full_run
    worst, pooled = 0.0, np.zeros((2, 2), dtype=np.int64)
    per = {}
    for model, metric, game, fold, value, counts in ex.read_fold_metrics(out / "folds" / "exp3_metrics.csv"):
        if metric != "macro_f1":
            continue
        worst = max(worst, abs(metrics.macro_f1_from_counts(counts) - value))
        per.setdefault((game, model), []).append(metrics.macro_f1_from_counts(counts))
        if model == "BM":
            pooled += counts
    for (game, model), vals in per.items():
        worst = max(worst, abs(np.mean(vals) - tables[3].get(game, model, "macro_f1")[0]))
    emitted = {}
    with open(out / "tables" / "exp3_confusion.csv", newline="") as fh:
        for r in csv.DictReader(fh):
            emitted[(r["truth"], r["estimate"])] = int(r["count"])
    names = ("non_churner", "churner")
    counts_ok = all(emitted[(names[t], names[p])] == pooled[t, p] for t in (0, 1) for p in (0, 1))
    criterion(8, worst <= 1e-12 and counts_ok,
              f"max |F1(counts) - reported| = {worst:.1e}; pooled matrix matches folds: {counts_ok}")


# ------------------------------------------------------------------------ 9
DET_CONFIG = {
    "synth": {"users_per_game": 200},
    "prep": {"per_class": 40, "n_folds": 3},
    "grids": {"EN": {"alpha": [0.1, 1.0], "l1_ratio": [0.5]}, "LR": {"C": [0.01, 0.1]},
              "MLPr": {"l2": [0.01]}, "MLPc": {"l2": [0.001, 0.01]}},
    "models": {"mlp": {"hidden": [16, 8], "max_epochs": 4},
               "bm": {"embedding_dim": 4, "fusion_units": 8, "lstm_units": 8, "head_units": 16,
                      "max_epochs": 3}},
}


def test_determinism(criterion, tmp_path):
    cfg = tmp_path / "det.json"
    cfg.write_text(json.dumps(DET_CONFIG))
    runs = []
    for workers in (1, 2):
        out = tmp_path / f"w{workers}"
        for cmd in ("synth", "prep", "train", "evaluate", "report"):
            assert cli.run([cmd, "--config", str(cfg), "--seed", "3", "--workers", str(workers),
                            "--out", str(out)]) == 0
        runs.append(out)
    files = sorted(p.relative_to(runs[0]) for p in runs[0].rglob("*") if p.is_file())
    other = sorted(p.relative_to(runs[1]) for p in runs[1].rglob("*") if p.is_file())
    differ = [str(p) for p in files if (runs[0] / p).read_bytes() != (runs[1] / p).read_bytes()]
    kinds = {p.parts[0] for p in files}
    criterion(9, files == other and not differ and {"tables", "figures", "checkpoints"} <= kinds,
              f"{len(files)} files compared across 1 and 2 workers, {len(differ)} differ")


# ----------------------------------------------------------------------- 10
def test_no_leakage(criterion, full_run):
    out, _, _, data, fit = full_run
    plan = dp.SplitPlan.from_dict(fit["split_plan"])
    pools = {"tune": plan.tuning_ids, "eval": plan.validation_ids}
    audited = 0
    for phase, pool in pools.items():
        for k in range(fit_folds(plan)):
            stored = json.loads((out / "folds" / "fits" / f"{phase}_fold{k}.json").read_text())
            heldout = [u for u in pool if plan.fold_assignments[u] == k]
            train = [u for u in pool if plan.fold_assignments[u] != k]
            assert sorted(stored["scaler"]["train_ids"]) == sorted(map(str, train))
            # every other pool, and the held-out fold, is off limits
            outside = heldout + [u for p2, ids in pools.items() if p2 != phase for u in ids]
            dp.audit_fold_fit(data, stored, outside)
            audited += 1
    ckpt_meta = E.load_checkpoint(out / "checkpoints" / "exp3_BM_fold0.ckpt")[1]
    val0 = [u for u in plan.validation_ids if plan.fold_assignments[u] == 0]
    dp.audit_fold_fit(data, ckpt_meta["fold_fit"], val0)
    # the audit must notice a statistic that saw the held-out users
    leaky = dp.fold_fit(data, data.index_of(plan.validation_ids))
    caught = 0
    try:
        dp.audit_fold_fit(data, leaky, val0)
    except dp.DataContractError:
        caught = 1
    criterion(10, audited == 2 * fit_folds(plan) and caught,
              f"{audited} fold fits recomputed from training ids; leaky fit rejected: {bool(caught)}")


def fit_folds(plan):
    return 1 + max(plan.fold_assignments.values())
