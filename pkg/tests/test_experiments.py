import csv
import json
import warnings
from collections import Counter

import numpy as np
import pytest

from churnsurv import dataprep as dp
from churnsurv import experiments as ex
from churnsurv import telemetry_synth as ts
from churnsurv.metrics import macro_f1_from_counts

GRIDS = {
    "MM": {},
    "EN": {"alpha": [0.1, 1.0], "l1_ratio": [0.5]},
    "LR": {"C": [0.01, 0.1]},
    "MLPr": {"l2": [0.01]},
    "MLPc": {"l2": [0.01]},
    "BM": {"dropout": [0.1]},
}
OPTIONS = {
    "mlp": {"hidden": [16, 8], "max_epochs": 6},
    "bm": {"embedding_dim": 4, "fusion_units": 8, "lstm_units": 8, "head_units": 16, "max_epochs": 4},
}
N_FOLDS = 3


def _small_data(n_games=3, users=400, per_class=60, seed=13):
    hs = []
    for p in ts.load_default_profiles()[:n_games]:
        hs += ts.generate_population(p, users, seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        data, fit = dp.prepare(hs, seed, per_class=per_class, tuning_fraction=0.3, n_folds=N_FOLDS,
                               game_names={g: f"g{g}" for g in range(n_games)})
    return data, dp.SplitPlan.from_dict(fit["split_plan"])


def _sweep(data, plan, out, workers=1):
    return ex.run_sweep(data, plan, (1, 2, 3), GRIDS, seed=5, n_folds=N_FOLDS, output_dir=out,
                        options=OPTIONS, workers=workers)


@pytest.fixture(scope="module")
def small():
    return _small_data()


@pytest.fixture(scope="module")
def sweep(small, tmp_path_factory):
    data, plan = small
    out = tmp_path_factory.mktemp("sweep")
    tables = _sweep(data, plan, out)
    return data, plan, out, tables


def _csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ------------------------------------------------------------------- grids
def test_expand_grid():
    pts = ex.expand_grid({"b": [1, 2], "a": [0.5]})
    assert pts == [(("a", 0.5), ("b", 1)), (("a", 0.5), ("b", 2))]
    assert ex.expand_grid({}) == [()]
    with pytest.raises(ex.ExperimentError, match="empty"):
        ex.expand_grid({"alpha": []})


def test_tie_prefers_regularisation():
    en = {(("alpha", 0.1), ("l1_ratio", 0.5)): 0.7, (("alpha", 1.0), ("l1_ratio", 0.5)): 0.7}
    assert dict(ex.select_best("EN", en)) == {"alpha": 1.0, "l1_ratio": 0.5}
    lr = {(("C", 0.1),): 0.6, (("C", 0.001),): 0.6, (("C", 0.01),): 0.5}
    assert dict(ex.select_best("LR", lr)) == {"C": 0.001}
    mlp = {(("l2", 0.001),): 0.9, (("l2", 0.01),): 0.9}
    assert dict(ex.select_best("MLPc", mlp)) == {"l2": 0.01}


def test_score_beats_tie_rule():
    lr = {(("C", 0.1),): 0.61, (("C", 0.001),): 0.6}
    assert dict(ex.select_best("LR", lr)) == {"C": 0.1}


def test_lexicographic_fallback():
    pts = {(("a", 2),): 1.0, (("a", 1),): 1.0}
    assert dict(ex.select_best("MM", pts)) == {"a": 1}


def test_selection_scores():
    assert ex.selection_score("EN", 0.3, None) == -0.3
    assert ex.selection_score("LR", None, 0.8) == 0.8
    assert ex.selection_score("BM", 0.3, 0.8) == pytest.approx(0.5)


def test_singleton_grid_short_circuits():
    # no data is touched when there is nothing to search
    assert ex.grid_search_cv("BM", {"dropout": [0.1]}, None, None, 3) == {"dropout": 0.1}
    with pytest.raises(ex.ExperimentError):
        ex.grid_search_cv("LR", {"C": []}, None, None, 1)


def test_grid_search_deterministic(small):
    data, plan = small
    a = ex.grid_search_cv("LR", {"C": [0.001, 0.01, 1.0]}, data, plan, 1, seed=2)
    b = ex.grid_search_cv("LR", {"C": [0.001, 0.01, 1.0]}, data, plan, 1, seed=2)
    assert a == b and a["C"] in (0.001, 0.01, 1.0)
    with pytest.raises(ex.ExperimentError):
        ex.grid_search_cv("BM", {"dropout": [0.1, 0.2]}, data, plan, 1)


def test_config_validation():
    with pytest.raises(ex.ExperimentError):
        ex.ExperimentConfig(4)
    with pytest.raises(ex.ExperimentError, match=">= 2"):
        ex.ExperimentConfig(1, n_folds=1)
    with pytest.raises(ex.ExperimentError, match="no grid"):
        ex.ExperimentConfig(3, grids={"MM": {}})


def test_result_table_round_trip(tmp_path):
    t = ex.ResultTable(3, game_names={0: "a"})
    t.add(0, "BM", "macro_f1", [0.8, 0.9])
    t.add(0, "MM", "smape", [0.5, 0.5])
    t.to_csv(tmp_path / "t.csv")
    back = ex.ResultTable.from_csv(tmp_path / "t.csv", 3)
    assert back.get(0, "BM", "macro_f1") == t.get(0, "BM", "macro_f1")
    assert back.sorted()[0][1] == "MM"
    with pytest.raises(KeyError):
        back.get(1, "BM", "smape")


# ------------------------------------------------------------ the sweep
def test_completeness(sweep):
    data, _, out, tables = sweep
    for e, table in tables.items():
        # regression/classification pairs (EN+LR, MLPr+MLPc) share a column as one model
        slots = {1: 3, 2: 3, 3: 2}[e]
        assert len(table.rows) == data.n_games * slots * 2
        keys = [(g, m, k) for g, m, k, _, _ in table.rows]
        assert len(set(keys)) == len(keys)
        assert all(std >= 0 for *_, std in table.rows)
        assert len(_csv(out / "tables" / f"exp{e}.csv")) == len(table.rows)


def test_aggregation_recomputes(sweep):
    _, _, out, tables = sweep
    for e, table in tables.items():
        groups = {}
        for model, metric, game, _, value, counts in ex.read_fold_metrics(out / "folds" / f"exp{e}_metrics.csv"):
            groups.setdefault((game, model, metric), []).append(value)
            if counts is not None:
                assert abs(macro_f1_from_counts(counts) - value) <= 1e-12
        stored = ex.ResultTable.from_csv(out / "tables" / f"exp{e}.csv", e)
        assert set(groups) == {(g, m, k) for g, m, k, _, _ in stored.rows}
        for key, vals in groups.items():
            assert len(vals) == N_FOLDS
            mean, std = stored.get(*key)
            assert abs(np.mean(vals) - mean) <= 1e-12
            assert abs(np.std(vals) - std) <= 1e-12


def test_every_validation_user_predicted_once(sweep):
    data, plan, out, _ = sweep
    for e in (1, 2, 3):
        for model in ex.ROSTERS[e]:
            rows = _csv(out / "folds" / f"exp{e}_{model}_predictions.csv")
            assert Counter(r["user_id"] for r in rows) == Counter(plan.validation_ids)
            for r in rows:
                assert int(r["fold"]) == plan.fold_assignments[r["user_id"]]


def test_tuning_validation_disjoint(sweep):
    data, plan, out, _ = sweep
    tune, val = set(plan.tuning_ids), set(plan.validation_ids)
    assert not tune & val
    for k in range(N_FOLDS):
        for phase, pool in (("tune", tune), ("eval", val)):
            fit = json.loads((out / "folds" / "fits" / f"{phase}_fold{k}.json").read_text())
            used = set(fit["scaler"]["train_ids"])
            assert used <= pool
            for ids in fit["thresholds"]["source_ids"].values():
                assert set(ids) <= pool
            heldout = [u for u in pool if plan.fold_assignments[u] == k]
            assert not used & set(heldout)
            dp.audit_fold_fit(data, fit, heldout)


def test_grid_search_table(sweep):
    _, _, out, _ = sweep
    rows = _csv(out / "tables" / "grid_search.csv")
    for e in (1, 2, 3):
        for model in ex.ROSTERS[e]:
            mine = [r for r in rows if int(r["experiment"]) == e and r["model"] == model]
            assert sum(int(r["selected"]) for r in mine) == 1
            if len(mine) == 1:
                assert mine[0]["mean_score"] == ""
            else:
                chosen = next(r for r in mine if int(r["selected"]))
                assert float(chosen["mean_score"]) == max(float(r["mean_score"]) for r in mine)


def test_confusion_table(sweep):
    _, _, out, tables = sweep
    rows = _csv(out / "tables" / "exp3_confusion.csv")
    assert len(rows) == 4
    for truth in ("churner", "non_churner"):
        props = [float(r["proportion"]) for r in rows if r["truth"] == truth]
        assert sum(props) == pytest.approx(1.0, abs=1e-12)


def test_checkpoints_written(sweep):
    _, _, out, _ = sweep
    names = sorted(p.name for p in (out / "checkpoints").iterdir())
    assert names == [f"exp3_BM_fold{k}.ckpt" for k in range(N_FOLDS)]


# ------------------------------------------------------------------ figures
def test_scatter_rows(sweep):
    _, plan, out, _ = sweep
    rows = _csv(out / "figures" / "survival_scatter.csv")
    assert len(rows) == len(plan.validation_ids)
    assert all(float(r["log1p_estimate"]) >= 0 and float(r["log1p_truth"]) >= 0 for r in rows)
    assert (out / "figures" / "survival_scatter.svg").stat().st_size > 0


def test_density_integrates(sweep):
    data, _, out, _ = sweep
    rows = _csv(out / "figures" / "mc_density.csv")
    curves = {}
    for r in rows:
        curves.setdefault((r["game_id"], r["quantity"]), []).append((float(r["x"]), float(r["density"])))
    assert len(curves) == 2 * data.n_games
    for pts in curves.values():
        x, d = map(np.array, zip(*pts))
        assert abs(np.trapezoid(d, x) - 1.0) <= 0.01


def test_rescaled_samples(sweep):
    data, _, out, _ = sweep
    rows = _csv(out / "figures" / "mc_samples.csv")
    per_user = Counter((r["game_id"], r["user_id"]) for r in rows)
    assert len(per_user) == data.n_games and set(per_user.values()) == {ex.MC_SAMPLES}
    for r in rows:
        assert 0.0 <= float(r["survival_rescaled"]) <= 1.0
        assert 0.0 < float(r["churn_prob"]) < 1.0


@pytest.mark.parametrize("samples", [np.full(50, 0.3), np.array([0.2] * 49 + [0.2 + 1e-14]),
                                     np.random.default_rng(0).beta(2, 5, 50)])
def test_density_fallbacks(samples):
    grid = ex.density_grid(samples)
    assert abs(np.trapezoid(ex._density(samples, grid), grid) - 1.0) <= 0.01


def test_figures_need_samples(small, tmp_path):
    data, _ = small
    with pytest.raises(ex.ExperimentError, match="MC samples"):
        ex.emit_figures(data, [{"test_idx": np.arange(3)}], tmp_path)


# -------------------------------------------------------------- determinism
def test_worker_count_invariance(sweep, tmp_path):
    data, plan, out, _ = sweep
    _sweep(data, plan, tmp_path, workers=2)
    for sub in ("tables", "folds", "folds/fits", "figures", "checkpoints"):
        for p in sorted((out / sub).iterdir()):
            if p.is_file():
                assert (tmp_path / sub / p.name).read_bytes() == p.read_bytes(), p.name
