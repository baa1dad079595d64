"""Command-line entry point: synth, prep, train, evaluate, predict, report.

Everything a run produces lives under one directory (``--out``)::

    sessions.csv (+ .meta.json)   synth
    prepared/                     prep
    checkpoints/bm_final.ckpt     train
    tables/ folds/ figures/       evaluate (plus per-fold checkpoints)
    report.md                     report

Exit codes: 0 success, 1 usage error, 2 data or contract violation.
"""
import argparse
import copy
import csv
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, build_id
from . import dataprep as dp
from . import experiments as X
from . import telemetry_synth as ts
from ._seeding import derive_seed
from .engine import CheckpointError
from .models import BifurcatingModel, BMConfig, UnknownContextError

log = logging.getLogger("churnsurv")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
CONFIG_KEYS = {"seed", "synth", "prep", "experiments", "grids", "models", "mc_samples", "workers"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ------------------------------------------------------------------ config

def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "grids":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def default_config():
    return json.loads(resources.files("churnsurv").joinpath("data/default_config.json").read_text())


def load_config(spec):
    """``"default"`` or a path to a JSON file; files are merged over the defaults."""
    cfg = default_config()
    if spec in (None, "default"):
        return cfg
    path = Path(spec)
    if not path.is_file():
        raise UsageError(f"config file {spec} not found")
    try:
        user = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {spec} is not valid JSON: {exc}") from None
    unknown = set(user) - CONFIG_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    if "grids" in user:
        user["grids"] = {**cfg["grids"], **user["grids"]}
    return _merge(cfg, user)


def _profiles(cfg):
    spec = cfg["synth"]["profiles"]
    if spec == "default":
        return ts.load_default_profiles()
    return [ts.GameProfile.from_dict(d) for d in spec]


# ---------------------------------------------------------------- commands

def cmd_synth(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    profiles = _profiles(cfg)
    n = int(cfg["synth"]["users_per_game"])
    histories = []
    for p in profiles:
        histories.extend(ts.generate_population(p, n, derive_seed(args.seed, "synth")))
    histories.sort(key=lambda h: h.user_id)
    rows = ts.emit_dataset(histories, out / "sessions.csv", {p.game_id: p.name for p in profiles},
                           build_id())
    log.info("wrote %d sessions of %d users to %s", rows, len(histories), out / "sessions.csv")


def cmd_prep(args, cfg):
    out = Path(args.out)
    src = Path(args.sessions) if args.sessions else out / "sessions.csv"
    histories, meta = dp.load_dataset(src)
    names = {int(g): m["name"] for g, m in meta["games"].items() if "name" in m}
    p = cfg["prep"]
    data, fit = dp.prepare(histories, args.seed, p["outlier_percentile"], p["per_class"],
                           p["tuning_fraction"], p["n_folds"], names)
    fit["build"] = build_id()
    dp.save_prepared(data, fit, out / "prepared")
    log.info("prepared %d users (%d raw) into %s", len(data), len(histories), out / "prepared")


def _load_prepared(out):
    d = Path(out) / "prepared"
    if not (d / "fit_metadata.json").exists():
        raise dp.DataContractError(f"{d} holds no prepared data; run 'prep' first")
    return dp.load_prepared(d)


def cmd_train(args, cfg):
    out = Path(args.out)
    data, fit = _load_prepared(out)
    idx = np.arange(len(data))
    ffit = dp.fold_fit(data, idx)
    labels = data.labels_for(dp.threshold_map(ffit["thresholds"]))
    feats = dp.FeatureScaler.from_dict(ffit["scaler"]).transform(data)
    bm_opts = {**cfg["models"].get("bm", {}), **{k: v[0] for k, v in cfg["grids"]["BM"].items()}}
    model = BifurcatingModel(data.n_games, config=BMConfig(**bm_opts), seed=derive_seed(args.seed, "train"))
    model.fit(feats.sequences, feats.masks, data.game_ids, data.survival, labels)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    path = out / "checkpoints" / "bm_final.ckpt"
    model.to_checkpoint(path, {"build": build_id(), "fold_fit": ffit, "prepared_digest": dp.fit_digest(fit),
                               "game_names": fit.get("game_names", {})})
    log.info("trained on %d users, checkpoint %s", len(data), path)


def cmd_evaluate(args, cfg):
    out = Path(args.out)
    data, fit = _load_prepared(out)
    plan = dp.SplitPlan.from_dict(fit["split_plan"])
    experiments = tuple(args.experiment) if args.experiment else tuple(cfg["experiments"])
    tables = X.run_sweep(data, plan, experiments, cfg["grids"], args.seed, cfg["prep"]["n_folds"], out,
                         cfg["models"], cfg["mc_samples"], args.workers, build_id())
    for e in tables:
        log.info("experiment %d: %s", e, out / "tables" / f"exp{e}.csv")


def cmd_predict(args, cfg):
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    try:
        model, meta = BifurcatingModel.from_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise dp.DataContractError(f"checkpoint {args.checkpoint} not found") from None
    if "fold_fit" not in meta:
        raise dp.DataContractError("checkpoint carries no fit metadata; re-run 'train'")
    if args.prepared:
        _, fit = dp.load_prepared(args.prepared)
        if meta.get("prepared_digest") not in (None, dp.fit_digest(fit)):
            raise dp.DataContractError("checkpoint was trained on different prepared data")
    scaler = dp.FeatureScaler.from_dict(meta["fold_fit"]["scaler"])
    histories, _ = dp.load_dataset(args.sessions)
    unseen = sorted({h.game_id for h in histories if h.game_id not in scaler.quartiles
                     or not 0 <= h.game_id < model.n_games})
    if unseen:
        raise UnknownContextError(f"game id(s) {unseen} are not in the checkpoint; "
                                  "retrain the model with data from these games")
    if args.window == "op":
        windows = [dp.observation_window(h) for h in histories]
    else:
        windows = [dp.ObservationWindow(h.user_id, h.game_id, h.total_sessions, h.sessions) for h in histories]
    padded = dp.unfold_and_pad(windows)
    seqs = np.array([sq for sq, _ in padded])
    lengths = [int(mk.sum()) for _, mk in padded]
    data = dp.PreparedDataset(np.array([h.user_id for h in histories], dtype=object),
                              np.array([h.game_id for h in histories], dtype=np.int64),
                              np.zeros(len(histories), dtype=bool), np.zeros(len(histories)),
                              np.asarray(lengths, dtype=np.int64), seqs, scaler.n_games)
    s, m = scaler.rescale_sequences(data)
    mc = model.predict_mc(s, m, data.game_ids, args.samples, seed=derive_seed(args.seed, "predict"))
    dest = Path(args.output)
    dest.parent.mkdir(parents=True, exist_ok=True)
    with open(dest, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "game_id", "survival_point", "churn_point", "survival_std", "churn_std",
                    "decision"])
        for i, u in enumerate(data.user_ids):
            w.writerow([u, int(data.game_ids[i]), repr(float(mc.survival_point[i])),
                        repr(float(mc.churn_point[i])), repr(float(mc.survival[i].std())),
                        repr(float(mc.churn[i].std())), int(mc.decisions[i])])
    log.info("wrote %d predictions to %s", len(data), dest)


def _pm(mean, std):
    return f"{mean:.3f} ± {std:.3f}"


def cmd_report(args, cfg):
    out = Path(args.out)
    lines = ["# Run report", "", f"Build: {build_id()}", ""]
    found = False
    for e in (1, 2, 3):
        path = out / "tables" / f"exp{e}.csv"
        if not path.exists():
            continue
        found = True
        t = X.ResultTable.from_csv(path, e)
        lines += [f"## Experiment {e} ({X.FORMATS[e]} format)", "",
                  "| game | model | SMAPE | model | macro-F1 |", "|---|---|---|---|---|"]
        pairs = [("MM", "MM"), ("EN", "LR"), ("MLPr", "MLPc")] if e < 3 else [("MM", "MM"), ("BM", "BM")]
        for g in sorted({r[0] for r in t.rows}):
            for reg, cls in pairs:
                try:
                    s, f = t.get(g, reg, "smape"), t.get(g, cls, "macro_f1")
                except KeyError:
                    continue
                lines.append(f"| {t.game_names.get(g, g)} | {reg} | {_pm(*s)} | {cls} | {_pm(*f)} |")
        lines.append("")
        conf = out / "tables" / f"exp{e}_confusion.csv"
        if conf.exists():
            lines += ["Churn confusion matrix of the bifurcating model, all games pooled "
                      "(rows: truth, normalised per row):", "",
                      "| truth | estimate | count | proportion |", "|---|---|---|---|"]
            with open(conf, newline="", encoding="utf-8") as fh:
                for r in csv.DictReader(fh):
                    prop = f"{float(r['proportion']):.2f}" if r["proportion"] else "n/a"
                    lines.append(f"| {r['truth']} | {r['estimate']} | {r['count']} | {prop} |")
            lines.append("")
    search = out / "tables" / "grid_search.csv"
    if search.exists():
        lines += ["## Selected hyperparameters", ""]
        with open(search, newline="", encoding="utf-8") as fh:
            for r in csv.DictReader(fh):
                if r["selected"] == "1":
                    lines.append(f"- experiment {r['experiment']}, {r['model']}: {r['params']}")
        lines.append("")
    if not found:
        raise dp.DataContractError(f"no result tables under {out / 'tables'}; run 'evaluate' first")
    (out / "report.md").write_text("\n".join(lines))
    log.info("report written to %s", out / "report.md")


COMMANDS = {"synth": cmd_synth, "prep": cmd_prep, "train": cmd_train, "evaluate": cmd_evaluate,
            "predict": cmd_predict, "report": cmd_report}


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", default="default",
                        help="'default' or path to a JSON config merged over the defaults")
    common.add_argument("--seed", type=int, default=None, help="root seed (overrides the config)")
    common.add_argument("--workers", type=int, default=None,
                        help="parallel worker processes (default: available CPUs)")
    common.add_argument("--out", default="runs/default", help="run directory (default: runs/default)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = _Parser(prog="churnsurv", description="Joint survival-time and churn estimation pipeline.")
    parser.add_argument("--version", action="version", version=build_id())
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    sub.add_parser("synth", parents=[common], help="simulate session telemetry")
    p = sub.add_parser("prep", parents=[common], help="label, window and split the sessions")
    p.add_argument("--sessions", help="session file (default: OUT/sessions.csv)")
    sub.add_parser("train", parents=[common], help="fit the deployment bifurcating model")
    p = sub.add_parser("evaluate", parents=[common], help="run experiments, write tables and figures")
    p.add_argument("--experiment", type=int, choices=(1, 2, 3), action="append",
                   help="experiment to run (repeatable; default: all in the config)")
    p = sub.add_parser("predict", parents=[common], help="score users from a checkpoint")
    p.add_argument("--checkpoint", required=True, help="bifurcating-model checkpoint")
    p.add_argument("--sessions", required=True, help="session file with its .meta.json sidecar")
    p.add_argument("--output", required=True, help="CSV file for the per-user estimates")
    p.add_argument("--prepared", help="prepared directory to check the checkpoint against")
    p.add_argument("--window", choices=("all", "op"), default="all",
                   help="sessions fed to the model: all recorded (default) or the observation period")
    p.add_argument("--samples", type=int, default=X.MC_SAMPLES, help="MC-dropout samples (default: 50)")
    sub.add_parser("report", parents=[common], help="summarise result tables into OUT/report.md")
    return parser


def run(argv=None):
    """Execute one command; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config)
        if args.seed is None:
            args.seed = int(cfg["seed"])
        if args.workers is None:
            args.workers = int(cfg.get("workers") or X.default_workers())
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
    except UsageError as exc:
        print(f"churnsurv: error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"churnsurv: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UnknownContextError as exc:
        print(f"churnsurv: error: {exc.args[0]}", file=sys.stderr)
        return EXIT_DATA
    except (dp.DataContractError, CheckpointError, X.ExperimentError, FileNotFoundError, ValueError) as exc:
        print(f"churnsurv: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(run())


__all__ = ["run", "main", "build_parser", "load_config", "__version__"]


if __name__ == "__main__":
    main()
