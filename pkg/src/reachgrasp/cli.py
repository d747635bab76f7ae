"""Command-line entry point: ``reachgrasp <subcommand> [options]``.

Every subcommand writes into a fresh output directory.  Files are staged
in a sibling temporary directory and moved into place only when the stage
succeeds, so an interrupted run never leaves partial output.  Each output
directory carries ``run.json`` with the merged configuration, its hash,
the seed and a digest of every file.

Configuration precedence: built-in defaults < ``--config`` JSON file <
command-line flags.  The config hash is the SHA-256 of the canonical JSON
of the merged configuration.  ``--threads`` only changes how work is
scheduled, never the results, so it is not part of the configuration.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import shutil
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import classify as cls
from .data import FamilyConfig, dataset_summary, load_dataset, synth_family, write_dataset
from .exceptions import ConfigError, MissingArtifact, ReachGraspError
from .experiments import (
    EVAL_MIN_LEN, EVAL_STRIDE, curves_from_records, derive_seed, model_tag, posture_records, posture_windows,
    reach_records, reach_windows, split_trials,
)
from .features import feature_names, trial_features
from .neural.network import load_checkpoint
from .posture import (
    DEFAULT_LAMBDA, PostureBaseline, PostureLSTMRegressor, load_baseline, save_baseline,
)
from .reach import MJTReachPredictor, ReachLSTMRegressor
from .report import ConfusionMatrix, dumps_csv, read_curves_csv, render_curve_svg

log = logging.getLogger("reachgrasp")

MJT_FORMAT = "reachgrasp-mjt/1"
RUN_FILE = "run.json"

DEFAULTS = {
    "synth": {"users": 6, "trials": 10, "noise": 0.005, "bias": 0.05, "duration_min": 1.6, "duration_max": 2.4,
              "distance_min": 0.2, "distance_max": 0.6, "rate": 60.0, "left": False},
    "inspect": {},
    "features": {"hands": "right"},
    "fit-mjt": {"stride": EVAL_STRIDE, "min_len": EVAL_MIN_LEN},
    "train-reach": {"model": "lstm", "epochs": 50, "stride": EVAL_STRIDE, "min_len": EVAL_MIN_LEN, "hidden": 64,
                    "batch_size": 64, "lr": 0.001},
    "train-posture": {"model": "lstm", "epochs": 100, "lambda": None, "stride": EVAL_STRIDE,
                      "min_len": EVAL_MIN_LEN, "hidden": 64, "batch_size": 64, "lr": 0.001, "window": 0.5,
                      "trees": 100},
    "classify": {"classifier": "forest", "cv": "kfold", "window": "-1..-5", "hands": "right", "k": 5,
                 "trees": 100},
    "evaluate": {"stride": EVAL_STRIDE, "min_len": EVAL_MIN_LEN},
    "report": {},
    "pipeline": {
        "synth": {"users": 4, "trials": 8, "noise": 0.005, "bias": 0.05, "duration_min": 1.6,
                  "duration_max": 2.4, "distance_min": 0.2, "distance_max": 0.6, "rate": 60.0, "left": False},
        "test_fraction": 0.25,
        "reach": {"epochs": 3, "hidden": 16, "stride": EVAL_STRIDE, "min_len": EVAL_MIN_LEN},
        "posture": {"epochs": 3, "hidden": 16, "lambda": DEFAULT_LAMBDA, "trees": 10},
        "classify": {"classifier": "forest", "window": "-1..-5", "hands": "right", "k": 4, "trees": 20},
    },
}


# --------------------------------------------------------------------------
# configuration


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def merged_config(command: str, args, flag_values: dict) -> dict:
    """Defaults, then the config file (its section for ``command`` or its top level), then flags."""
    cfg = copy.deepcopy(DEFAULTS[command])
    seed = 0
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        seed = doc.get("seed", seed)
        section = doc.get(command, {k: v for k, v in doc.items() if k != "seed"})
        unknown = set(section) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown {command} config keys: {sorted(unknown)}")
        cfg = _deep_merge(cfg, section)
    for k, v in flag_values.items():
        if v is not None:
            cfg[k] = v
    if args.seed is not None:
        seed = args.seed
    cfg["seed"] = int(seed)
    cfg["command"] = command
    return cfg


# --------------------------------------------------------------------------
# output staging


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_run_file(directory: Path, config: dict, inputs: dict | None = None):
    files = sorted(p for p in directory.rglob("*") if p.is_file() and p.name != RUN_FILE)
    doc = {
        "config": config,
        "config_hash": config_hash(config),
        "seed": config.get("seed"),
        "inputs": inputs or {},
        "files": {p.relative_to(directory).as_posix(): _digest(p) for p in files},
    }
    (directory / RUN_FILE).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return doc


@contextmanager
def staged_output(out: Path, force: bool):
    """Yield a staging directory that replaces ``out`` on success."""
    out = Path(out)
    if out.exists() and not force:
        raise ConfigError(f"output {out} exists; pass --force to replace it")
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{out.name}.staging-", dir=out.parent))
    try:
        yield stage
        if out.exists():
            trash = Path(tempfile.mkdtemp(prefix=f".{out.name}.old-", dir=out.parent))
            out.rename(trash / "old")
            shutil.rmtree(trash)
        stage.rename(out)
    finally:
        if stage.exists():
            shutil.rmtree(stage, ignore_errors=True)


def read_run(directory: Path, what: str) -> dict:
    path = Path(directory) / RUN_FILE
    if not path.is_file():
        raise MissingArtifact(f"{what}: {path} not found")
    return json.loads(path.read_text(encoding="utf-8"))


def write_json(path: Path, obj):
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def write_csv(path: Path, table):
    path.write_text(dumps_csv(table), encoding="utf-8", newline="")


# --------------------------------------------------------------------------
# stage implementations (pure: directory in, directory out)


def family_config(c: dict) -> FamilyConfig:
    return FamilyConfig(n_users=int(c["users"]), trials_per_user=int(c["trials"]),
                        duration_range=(float(c["duration_min"]), float(c["duration_max"])),
                        distance_range=(float(c["distance_min"]), float(c["distance_max"])),
                        sample_rate=float(c["rate"]), noise_sigma=float(c["noise"]),
                        user_bias_sigma=float(c["bias"]), include_left=bool(c["left"]), seed=int(c["seed"]))


def do_synth(cfg: dict, out: Path):
    ds, rows = synth_family(family_config(cfg))
    write_dataset(ds, out)
    write_json(out / "manifest.json", {"config": cfg, "trials": rows})
    return ds


def do_classify(ds, cfg: dict, out: Path, threads: int):
    params = {"n_estimators": int(cfg["trees"])} if cfg["classifier"] == "forest" else {}
    spec = cls.ClassifierSpec(cfg["classifier"], params)
    samples = cls.build_classification_samples(ds, cfg["window"], cfg["hands"], n_jobs=threads)
    plan = cls.make_split(samples, cfg.get("cv", "kfold"), int(cfg["k"]), int(cfg["seed"]))
    res = cls.evaluate_cv(samples, plan, spec, n_jobs=threads)
    row = {"classifier": cfg["classifier"], "cv": plan.kind, "window": cfg["window"], "hands": cfg["hands"],
           "n_samples": res.n_samples, "n_folds": len(plan.folds), "failed_folds": len(res.failed_folds)}
    row.update(res.accuracy)
    write_csv(out / "accuracy.csv", [row])
    for t, cm in res.confusion.items():
        write_csv(out / f"confusion_{t}.csv", cm)
    return res, plan


def reach_model(kind: str, cfg: dict, seed: int, threads: int):
    if kind == "mjt":
        return MJTReachPredictor(n_jobs=threads)
    return ReachLSTMRegressor(hidden_size=int(cfg.get("hidden", 64)), epochs=int(cfg["epochs"]),
                              batch_size=int(cfg.get("batch_size", 64)), learning_rate=float(cfg.get("lr", 0.001)),
                              seed=seed, use_mjt=kind == "lstm-mjt", mjt=MJTReachPredictor(n_jobs=threads))


def save_reach(model, path: Path, cfg: dict):
    if isinstance(model, MJTReachPredictor):
        params = model.get_params()
        params.pop("n_jobs")
        write_json(path, {"format": MJT_FORMAT, "params": params, "config": cfg})
    else:
        model.save(path)


def posture_model(kind: str, cfg: dict, seed: int, threads: int):
    if kind in ("lstm", "lstm-temporal"):
        lam = 0.0 if kind == "lstm" else float(cfg.get("lambda") if cfg.get("lambda") is not None else DEFAULT_LAMBDA)
        if kind == "lstm-temporal" and lam <= 0:
            raise ConfigError("lstm-temporal needs --lambda > 0")
        return PostureLSTMRegressor(hidden_size=int(cfg.get("hidden", 64)), epochs=int(cfg["epochs"]),
                                    batch_size=int(cfg.get("batch_size", 64)), learning_rate=float(cfg.get("lr", 0.001)),
                                    lambda_smooth=lam, seed=seed)
    return PostureBaseline(kind=kind, window=float(cfg.get("window", 0.5)), n_estimators=int(cfg.get("trees", 100)),
                           seed=seed, n_jobs=threads)


def save_posture(model, path: Path, cfg: dict):
    if isinstance(model, PostureBaseline):
        save_baseline(model, path, cfg)
    else:
        model.save(path)


def load_model(path: Path, threads: int = 1):
    """Load any model file written by ``train-reach`` / ``train-posture``."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    fmt = doc.get("format", "")
    if fmt == MJT_FORMAT:
        return MJTReachPredictor(n_jobs=threads, **doc["params"])
    if fmt.startswith("reachgrasp-posture-baseline"):
        m = load_baseline(path)
        m.n_jobs = threads
        return m
    est = load_checkpoint(path).extra.get("estimator")
    if est == "ReachLSTMRegressor":
        m = ReachLSTMRegressor.load(path)
        m.mjt = MJTReachPredictor(n_jobs=threads)
        return m
    if est == "PostureLSTMRegressor":
        return PostureLSTMRegressor.load(path)
    raise ConfigError(f"{path}: unrecognized model file")


def history_rows(model) -> list:
    return [{"epoch": i + 1, "loss": float(v)} for i, v in enumerate(getattr(model, "history_", []))]


def do_evaluate(ds_trials, models: dict, cfg: dict, out: Path, threads: int) -> dict:
    """Records and curves per model.  ``models`` maps a name to a fitted model."""
    reach_s = posture_s = None
    mjt_cache = None
    written = {}
    for name in sorted(models):
        model = models[name]
        tag = model_tag(model)
        if isinstance(model, (MJTReachPredictor, ReachLSTMRegressor)):
            if reach_s is None:
                reach_s = reach_windows(ds_trials, float(cfg["stride"]), float(cfg["min_len"]))
            mp = None
            if isinstance(model, ReachLSTMRegressor) and model.use_mjt:
                if mjt_cache is None:
                    mjt_cache = MJTReachPredictor(n_jobs=threads).predict(reach_s)
                mp = mjt_cache
            records = reach_records(model, reach_s, mp)
        else:
            if posture_s is None:
                posture_s = posture_windows(ds_trials, float(cfg["stride"]), float(cfg["min_len"]))
            records = posture_records(model, posture_s)
        rows = []
        for metric, rec in records.items():
            rows.extend({"model": tag, "metric": metric, "offset_s": float(o), "value": float(v)} for o, v in rec)
        write_csv(out / f"records_{name}.csv", rows)
        write_csv(out / f"curves_{name}.csv", curves_from_records(records, tag, int(cfg["seed"])))
        written[name] = tag
    write_json(out / "models.json", written)
    return written


METRIC_LABELS = {
    "distance_m": "distance error (m)",
    "time_error_s": "signed time error (s)",
    "abs_time_error_s": "absolute time error (s)",
    "mse": "posture MSE (m^2)",
    "euclid_m": "mean fingertip distance (m)",
}


def do_report(eval_dirs, classify_dirs, out: Path, seed: int):
    curves_by_metric = {}
    lines = ["reachgrasp report", ""]
    for d in eval_dirs:
        run = read_run(d, "evaluate output")
        models_file = Path(d) / "models.json"
        if not models_file.is_file():
            raise MissingArtifact(f"evaluate output {d}: models.json not found")
        models = json.loads(models_file.read_text(encoding="utf-8"))
        lines.append(f"evaluate config_hash {run['config_hash']} seed {run['seed']}")
        for name in sorted(models):
            path = Path(d) / f"curves_{name}.csv"
            if not path.is_file():
                raise MissingArtifact(f"model {name!r}: {path.name} missing from {d}")
            for c in read_curves_csv(path):
                curves_by_metric.setdefault(c.metric, []).append(c)
    for metric in sorted(curves_by_metric):
        curves = curves_by_metric[metric]
        write_csv(out / f"curve_{metric}.csv", curves)
        svg = render_curve_svg(curves, title=METRIC_LABELS.get(metric, metric), ylabel=METRIC_LABELS.get(metric, metric))
        (out / f"curve_{metric}.svg").write_text(svg, encoding="utf-8")
    for d in classify_dirs:
        run = read_run(d, "classify output")
        lines.append(f"classify config_hash {run['config_hash']} seed {run['seed']}")
        for name in ("accuracy.csv", "confusion_object.csv", "confusion_size.csv", "confusion_task.csv"):
            src = Path(d) / name
            if not src.is_file():
                raise MissingArtifact(f"classify output {d}: {name} missing")
            shutil.copyfile(src, out / name)
    lines += ["", f"report seed {seed}", f"metrics: {', '.join(sorted(curves_by_metric)) or 'none'}"]
    for metric in sorted(curves_by_metric):
        for c in curves_by_metric[metric]:
            last = c.buckets[-1]
            lines.append(f"{metric} {c.model}: last bucket [{last.t_lo:g}, {last.t_hi:g}) mean {last.mean:.6g} (n={last.n})")
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# checks for pipeline --check


def pipeline_checks(ds, train, test, models, plan, cv_res, out: Path, cfg: dict) -> list:
    """Harness assertions; returns ``(name, passed, detail)`` tuples."""
    checks = []
    n = sum(len(f) for f in plan.folds)
    allidx = np.concatenate(plan.folds)
    checks.append(("folds disjoint and exhaustive", len(set(allidx.tolist())) == n == len(allidx), f"{n} samples"))
    cm_ok = all(cm.support().sum() == cv_res.n_samples for cm in cv_res.confusion.values())
    checks.append(("confusion row sums equal support", cm_ok, ""))
    leak = 0
    for s in reach_windows(test):
        if s.times[-1] > s.window_end + 1e-9:
            leak += 1
    checks.append(("no window leaks frames past its end", leak == 0, f"{leak} leaking windows"))
    finite = True
    for name, model in models.items():
        hist = getattr(model, "history_", None)
        if hist:
            finite &= bool(np.all(np.isfinite(hist)))
    checks.append(("training losses finite", finite, ""))
    ids = {t.meta.trial_id for t in train} & {t.meta.trial_id for t in test}
    checks.append(("train/test trials disjoint", not ids, ""))
    return checks


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    cfg = merged_config("synth", args, {"users": args.users, "trials": args.trials, "noise": args.noise,
                                        "bias": args.bias, "left": args.left or None})
    with staged_output(args.out, args.force) as stage:
        ds = do_synth(cfg, stage)
        write_run_file(stage, cfg)
    print(f"wrote {len(ds)} trials to {args.out} (config {config_hash(cfg)[:12]})")
    return 0


def cmd_inspect(args):
    cfg = merged_config("inspect", args, {})
    ds = load_dataset(args.dataset, threads=args.threads)
    summary = dataset_summary(ds).to_dict()
    manifest_path = Path(args.dataset) / "manifest.json"
    if manifest_path.is_file():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        listed = sorted(r["trial_id"] for r in manifest["trials"])
        summary["manifest_trials"] = len(listed)
        summary["manifest_matches"] = listed == sorted(t.meta.trial_id for t in ds.trials)
        summary["manifest_config_hash"] = config_hash(manifest["config"])
    text = json.dumps(summary, sort_keys=True, indent=1)
    print(text)
    if args.out:
        with staged_output(args.out, args.force) as stage:
            (stage / "summary.json").write_text(text + "\n", encoding="utf-8")
            write_run_file(stage, cfg)
    if summary.get("manifest_matches") is False:
        print("manifest does not match the trial files", file=sys.stderr)
        return 1
    return 0


def cmd_features(args):
    cfg = merged_config("features", args, {"hands": args.hands})
    ds = load_dataset(args.dataset, threads=args.threads)
    names = feature_names(cfg["hands"])
    with staged_output(args.out, args.force) as stage:
        rows = []
        for t in ds.trials:
            F = trial_features(t, cfg["hands"])
            for i, (time, f) in enumerate(zip(t.times, F)):
                row = {"trial_id": t.meta.trial_id, "frame": i, "t": float(time)}
                row.update({n: float(v) for n, v in zip(names, f)})
                rows.append(row)
        write_csv(stage / "features.csv", rows)
        write_run_file(stage, cfg)
    print(f"wrote features for {len(ds)} trials to {args.out}")
    return 0


def cmd_fit_mjt(args):
    cfg = merged_config("fit-mjt", args, {"stride": args.stride, "min_len": args.min_len})
    ds = load_dataset(args.dataset, threads=args.threads)
    samples = reach_windows(ds.trials, float(cfg["stride"]), float(cfg["min_len"]))
    details = MJTReachPredictor(n_jobs=args.threads).predict_details(samples)
    rows = []
    for s, d in zip(samples, details):
        row = {"trial_id": s.trial_id, "window_end_offset": s.window_end_offset, "ok": d is not None}
        pos = d.position if d is not None else [np.nan] * 3
        row.update({"xf_x": pos[0], "xf_y": pos[1], "xf_z": pos[2],
                    "time_remaining": d.time_remaining if d is not None else np.nan})
        rows.append(row)
    with staged_output(args.out, args.force) as stage:
        write_csv(stage / "mjt_predictions.csv", rows)
        write_run_file(stage, cfg)
    print(f"fitted {sum(r['ok'] for r in rows)}/{len(rows)} windows")
    return 0


def cmd_train_reach(args):
    cfg = merged_config("train-reach", args, {"model": args.model, "epochs": args.epochs, "stride": args.stride,
                                              "hidden": args.hidden})
    ds = load_dataset(args.dataset, threads=args.threads)
    samples = reach_windows(ds.trials, float(cfg["stride"]), float(cfg["min_len"]))
    model = reach_model(cfg["model"], cfg, int(cfg["seed"]), args.threads).fit(samples)
    with staged_output(args.out, args.force) as stage:
        save_reach(model, stage / "model.json", cfg)
        write_csv(stage / "history.csv", history_rows(model) or [{"epoch": 0, "loss": float("nan")}])
        write_run_file(stage, cfg)
    print(f"trained {model_tag(model)} on {len(samples)} windows -> {args.out}")
    return 0


def cmd_train_posture(args):
    cfg = merged_config("train-posture", args, {"model": args.model, "epochs": args.epochs, "lambda": args.lam,
                                                "hidden": args.hidden})
    ds = load_dataset(args.dataset, threads=args.threads)
    samples = posture_windows(ds.trials, float(cfg["stride"]), float(cfg["min_len"]))
    model = posture_model(cfg["model"], cfg, int(cfg["seed"]), args.threads).fit(samples)
    with staged_output(args.out, args.force) as stage:
        save_posture(model, stage / "model.json", cfg)
        write_csv(stage / "history.csv", history_rows(model) or [{"epoch": 0, "loss": float("nan")}])
        write_run_file(stage, cfg)
    print(f"trained {model_tag(model)} on {len(samples)} windows -> {args.out}")
    return 0


def cmd_classify(args):
    cfg = merged_config("classify", args, {"classifier": args.classifier, "cv": args.cv, "window": args.window,
                                           "hands": args.hands, "k": args.k})
    ds = load_dataset(args.dataset, threads=args.threads)
    with staged_output(args.out, args.force) as stage:
        res, _ = do_classify(ds, cfg, stage, args.threads)
        write_run_file(stage, cfg)
    print(" ".join(f"{k}={v:.3f}" for k, v in res.accuracy.items()))
    return 0


def cmd_evaluate(args):
    cfg = merged_config("evaluate", args, {"stride": args.stride})
    ds = load_dataset(args.dataset, threads=args.threads)
    models, inputs = {}, {}
    for path in args.models:
        p = Path(path)
        f = p / "model.json" if p.is_dir() else p
        if not f.is_file():
            raise MissingArtifact(f"model file {f} not found")
        name = (p.name if p.is_dir() else p.stem).replace(" ", "_")
        models[name] = load_model(f, args.threads)
        inputs[name] = _digest(f)
    with staged_output(args.out, args.force) as stage:
        do_evaluate(ds.trials, models, cfg, stage, args.threads)
        write_run_file(stage, cfg, inputs)
    print(f"evaluated {len(models)} model(s) -> {args.out}")
    return 0


def cmd_report(args):
    cfg = merged_config("report", args, {})
    with staged_output(args.out, args.force) as stage:
        do_report(args.evaluations, args.classify or [], stage, int(cfg["seed"]))
        write_run_file(stage, cfg)
    print(f"report -> {args.out}")
    return 0


def cmd_pipeline(args):
    cfg = merged_config("pipeline", args, {})
    seed = int(cfg["seed"])
    threads = args.threads
    with staged_output(args.out, args.force) as stage:
        # data
        scfg = dict(cfg["synth"], seed=derive_seed(seed, "synth"), command="synth")
        data_dir = stage / "data"
        if args.data:
            ds = load_dataset(args.data, threads=threads)
            data_dir.mkdir()
            write_json(data_dir / "source.json", {"trials": [t.meta.trial_id for t in ds.trials]})
        else:
            data_dir.mkdir()
            ds = do_synth(scfg, data_dir)
        write_run_file(data_dir, scfg)
        train, test = split_trials(ds.trials, float(cfg["test_fraction"]), derive_seed(seed, "split"))
        log.info("data: %d train / %d test trials", len(train), len(test))

        # classification
        ccfg = dict(cfg["classify"], seed=derive_seed(seed, "classify"), command="classify", cv="kfold")
        cdir = stage / "classify"
        cdir.mkdir()
        cv_res, plan = do_classify(ds, ccfg, cdir, threads)
        write_run_file(cdir, ccfg)

        # models
        mdir = stage / "models"
        mdir.mkdir()
        rcfg = dict(cfg["reach"])
        pcfg = dict(cfg["posture"])
        r_train = reach_windows(train, float(rcfg["stride"]), float(rcfg["min_len"]))
        p_train = posture_windows(train, float(rcfg["stride"]), float(rcfg["min_len"]))
        models = {}
        for kind in ("mjt", "lstm", "lstm-mjt"):
            name = "reach_" + kind.replace("-", "_")
            m = reach_model(kind, rcfg, derive_seed(seed, name), threads).fit(r_train)
            save_reach(m, mdir / f"{name}.json", rcfg)
            models[name] = m
        for kind in ("lstm", "lstm-temporal", "linear", "tree", "forest"):
            name = "posture_" + kind.replace("-", "_")
            m = posture_model(kind, pcfg, derive_seed(seed, name), threads).fit(p_train)
            save_posture(m, mdir / f"{name}.json", pcfg)
            models[name] = m
        write_run_file(mdir, dict(reach=rcfg, posture=pcfg, seed=seed, command="train"))

        # evaluation and report
        ecfg = {"stride": EVAL_STRIDE, "min_len": EVAL_MIN_LEN, "seed": derive_seed(seed, "evaluate"),
                "command": "evaluate"}
        edir = stage / "eval"
        edir.mkdir()
        do_evaluate(test, models, ecfg, edir, threads)
        write_run_file(edir, ecfg)
        rdir = stage / "report"
        rdir.mkdir()
        do_report([edir], [cdir], rdir, seed)
        write_run_file(rdir, {"seed": seed, "command": "report", "pipeline_config_hash": config_hash(cfg)})

        status = 0
        if args.check:
            lines = []
            for name, ok, detail in pipeline_checks(ds, train, test, models, plan, cv_res, stage, cfg):
                lines.append(f"{'PASS' if ok else 'FAIL'} {name}" + (f" ({detail})" if detail else ""))
                status |= 0 if ok else 1
            print("\n".join(lines))
        write_run_file(stage, cfg)
    print(f"pipeline -> {args.out} (config {config_hash(cfg)[:12]})")
    return status


# --------------------------------------------------------------------------
# argument parsing


def _global_parser() -> argparse.ArgumentParser:
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--seed", type=int, default=None, help="master random seed (integer; default 0)")
    g.add_argument("--out", type=Path, default=None, help="output directory (created; see --force)")
    g.add_argument("--config", type=Path, default=None, help="JSON config file; flags override its values")
    g.add_argument("--threads", type=int, default=1, help="worker threads (count); results do not depend on it")
    g.add_argument("--force", action="store_true", help="replace an existing output directory")
    g.add_argument("--check", action="store_true", help="pipeline: run harness assertions, exit 1 on failure")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return g


def build_parser() -> argparse.ArgumentParser:
    g = _global_parser()
    p = argparse.ArgumentParser(prog="reachgrasp", description="VR reach-to-grasp prediction toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[g], help="generate a synthetic dataset")
    s.add_argument("--users", type=int, help="number of users (count; default 6)")
    s.add_argument("--trials", type=int, help="trials per user (count; default 10)")
    s.add_argument("--noise", type=float, help="palm position noise sigma (m; default 0.005)")
    s.add_argument("--bias", type=float, help="per-user offset sigma (m; default 0.05)")
    s.add_argument("--left", action="store_true", help="also generate a left hand")
    s.set_defaults(func=cmd_synth, need_out=True)

    s = sub.add_parser("inspect", parents=[g], help="summarize a dataset directory")
    s.add_argument("dataset", type=Path, help="dataset directory")
    s.set_defaults(func=cmd_inspect, need_out=False)

    s = sub.add_parser("features", parents=[g], help="per-frame grasp features as CSV")
    s.add_argument("dataset", type=Path, help="dataset directory")
    s.add_argument("--hands", choices=("right", "both"), help="27 (right) or 54 (both) features per frame")
    s.set_defaults(func=cmd_features, need_out=True)

    s = sub.add_parser("fit-mjt", parents=[g], help="minimum-jerk fits on every evaluation window")
    s.add_argument("dataset", type=Path, help="dataset directory")
    s.add_argument("--stride", type=float, help="window end spacing (s; default 0.25)")
    s.add_argument("--min-len", type=float, dest="min_len", help="shortest window (s; default 0.125)")
    s.set_defaults(func=cmd_fit_mjt, need_out=True)

    s = sub.add_parser("train-reach", parents=[g], help="train a grasp position/time predictor")
    s.add_argument("dataset", type=Path, help="dataset directory")
    s.add_argument("--model", choices=("mjt", "lstm", "lstm-mjt"), help="predictor kind (default lstm)")
    s.add_argument("--epochs", type=int, help="training epochs (count; default 50)")
    s.add_argument("--stride", type=float, help="training window end spacing (s; default 0.25)")
    s.add_argument("--hidden", type=int, help="LSTM units (count; default 64)")
    s.set_defaults(func=cmd_train_reach, need_out=True)

    s = sub.add_parser("train-posture", parents=[g], help="train a grasp posture predictor")
    s.add_argument("dataset", type=Path, help="dataset directory")
    s.add_argument("--model", choices=("lstm", "lstm-temporal", "linear", "tree", "forest"),
                   help="predictor kind (default lstm)")
    s.add_argument("--lambda", type=float, dest="lam", help="temporal smoothness weight (unitless; default 0.1)")
    s.add_argument("--epochs", type=int, help="training epochs (count; default 100)")
    s.add_argument("--hidden", type=int, help="LSTM units (count; default 64)")
    s.set_defaults(func=cmd_train_posture, need_out=True)

    s = sub.add_parser("classify", parents=[g], help="cross-validated object/size/task classification")
    s.add_argument("dataset", type=Path, help="dataset directory")
    s.add_argument("--classifier", choices=cls.CLASSIFIERS, help="classifier (default forest)")
    s.add_argument("--cv", choices=("kfold", "louo"), help="k-fold by trial or leave-one-user-out (default kfold)")
    s.add_argument("--window", help="frame offsets before the grasp, e.g. -1..-5 (frames)")
    s.add_argument("--hands", choices=("right", "both"), help="hands used for features (default right)")
    s.add_argument("--k", type=int, help="number of folds for kfold (count; default 5)")
    s.set_defaults(func=cmd_classify, need_out=True)

    s = sub.add_parser("evaluate", parents=[g], help="time-bucketed errors of trained models on a dataset")
    s.add_argument("dataset", type=Path, help="dataset directory (held-out trials)")
    s.add_argument("--models", nargs="+", required=True, help="model files or train-* output directories")
    s.add_argument("--stride", type=float, help="window end spacing (s; default 0.25)")
    s.set_defaults(func=cmd_evaluate, need_out=True)

    s = sub.add_parser("report", parents=[g], help="CSV tables, SVG curves and a summary from evaluate outputs")
    s.add_argument("evaluations", nargs="+", type=Path, help="evaluate output directories")
    s.add_argument("--classify", nargs="*", type=Path, help="classify output directories")
    s.set_defaults(func=cmd_report, need_out=True)

    s = sub.add_parser("pipeline", parents=[g], help="synth/load, classify, train all models, evaluate, report")
    s.add_argument("--data", type=Path, default=None, help="use this dataset directory instead of synthesizing")
    s.set_defaults(func=cmd_pipeline, need_out=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.need_out and args.out is None:
        parser.error(f"{args.command} needs --out")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        # BLAS stays single-threaded so floating-point reductions never depend on --threads
        with threadpool_limits(limits=1):
            return args.func(args)
    except (ReachGraspError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
