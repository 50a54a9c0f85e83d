"""Command-line entry point.

Subcommands::

    skipgp fit --config CONFIG.json [--seed N] [--mode exact|skip] [--out DIR]
    skipgp predict --model MODEL.json --data DATA.csv --out DIR
    skipgp bench-mvm --n N --seed N --out DIR
    skipgp bench-inducing --data DATA.csv --m-list 50,100,200 --out DIR
    skipgp multitask --data DATA.csv --clusters C --sweeps K --out DIR

Flags take precedence over the config file, which takes precedence over
built-in defaults. Relative paths in a config file are resolved against the
file's directory.

Exit codes: 0 success, 1 unexpected error, 2 bad config or usage, 3 bad input
data, 4 missing model artifact, 5 numerical failure, 6 model or domain error.
Every failure prints one JSON object on standard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, bench, gp
from .dataio import load_dataset, sha256_file, write_atomic, write_csv, write_json
from .errors import (ConfigError, MissingModelError, NonConvergenceError,
                     NumericalBreakdownError, ParseError, SchemaError, SkipGPError,
                     ValidationError)
from .multitask import ClusterMTGP, ClusterSettings, MultitaskData, run_gibbs

log = logging.getLogger("skipgp")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_MISSING_MODEL = 4
EXIT_NUMERICAL = 5
EXIT_MODEL = 6

MODE_ALIASES = {"exact": "exact_dense", "exact_dense": "exact_dense", "skip": "skip"}


def exit_code_for(exc):
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, MissingModelError):
        return EXIT_MISSING_MODEL
    if isinstance(exc, (SchemaError, ParseError, ValidationError)):
        return EXIT_DATA
    if isinstance(exc, (NumericalBreakdownError, NonConvergenceError, np.linalg.LinAlgError)):
        return EXIT_NUMERICAL
    if isinstance(exc, SkipGPError):
        return EXIT_MODEL
    return EXIT_UNEXPECTED


def _error_payload(exc, code):
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("row", "column", "index", "iteration"):
        if hasattr(exc, attr):
            payload[attr] = getattr(exc, attr)
    return payload


# ---------------------------------------------------------------------------
# config


FIT_DEFAULTS = {
    "features": None,
    "target": "y",
    "test_data": None,
    "standardize": False,
    "kernel": "RBF",
    "mode": "exact_dense",
    "skip": {},
    "optimizer": {"learning_rate": 0.1, "steps": 50},
    "out": "out",
}


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    base = path.parent
    for key in ("data", "test_data", "out"):
        if isinstance(cfg.get(key), str) and not Path(cfg[key]).is_absolute():
            cfg[key] = str(base / cfg[key])
    return cfg


def resolve_fit_config(cfg, seed=None, mode=None, out=None):
    merged = {**FIT_DEFAULTS, **cfg}
    merged["optimizer"] = {**FIT_DEFAULTS["optimizer"], **cfg.get("optimizer", {})}
    if seed is not None:
        merged["seed"] = seed
    if mode is not None:
        merged["mode"] = mode
    if out is not None:
        merged["out"] = out
    if "seed" not in merged or not isinstance(merged["seed"], int):
        raise ConfigError("an integer seed is required (config field 'seed' or --seed)")
    if merged["mode"] not in MODE_ALIASES:
        raise ConfigError(f"unknown mode {merged['mode']!r}")
    merged["mode"] = MODE_ALIASES[merged["mode"]]
    if "data" not in merged:
        raise ConfigError("config field 'data' is required")
    for key in ("data", "test_data"):
        if merged.get(key) is not None and not Path(merged[key]).is_file():
            raise ConfigError(f"{key} path {merged[key]} does not exist")
    if merged["kernel"] not in ("RBF", "Matern52"):
        raise ConfigError(f"unknown kernel {merged['kernel']!r}")
    unknown = set(merged["skip"]) - set(gp.SkipSettings.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown skip settings: {sorted(unknown)}")
    try:
        gp.SkipSettings.from_dict(merged["skip"])
    except TypeError as exc:
        raise ConfigError(f"bad skip settings: {exc}") from None
    return merged


# ---------------------------------------------------------------------------
# commands


def _errors(pred, y):
    e = pred - y
    return {"rmse": float(np.sqrt(np.mean(e**2))), "mae": float(np.mean(np.abs(e)))}


def _unscale(ds, mean, var):
    if ds.y_scaling is None:
        return mean, var
    my, sy = ds.y_scaling
    return mean * sy + my, var * sy**2


def cmd_fit(args):
    cfg = resolve_fit_config(load_config(args.config), args.seed, args.mode, args.out)
    out = Path(cfg["out"])
    seed = cfg["seed"]
    t_start = time.perf_counter()
    train = load_dataset(cfg["data"], cfg["features"], cfg["target"],
                         standardize=cfg["standardize"])
    skip = gp.SkipSettings.from_dict({**cfg["skip"], "probe_seed": seed})
    model = gp.initial_model(train.X, train.y, cfg["kernel"], cfg["mode"], skip)

    t0 = time.perf_counter()
    opt = cfg["optimizer"]
    result = gp.fit(model, train.X, train.y, learning_rate=opt["learning_rate"],
                    steps=opt["steps"], seed=seed)
    t_fit = time.perf_counter() - t0
    details = gp.mll_details(result.model, train.X, train.y, seed)

    t0 = time.perf_counter()
    post = gp.condition(result.model, train.X, train.y, seed)
    mean, var = gp.predict(post, train.X)
    raw_y = train.y if train.y_scaling is None else train.y * train.y_scaling[1] + train.y_scaling[0]
    metrics = {"train": _errors(_unscale(train, mean, var)[0], raw_y)}
    if cfg["test_data"]:
        test = load_dataset(cfg["test_data"], train.features, cfg["target"])
        Xt = _apply_scaling(train, test.X)
        tmean, tvar = gp.predict(post, Xt)
        metrics["test"] = _errors(_unscale(train, tmean, tvar)[0], test.y)
    t_pred = time.perf_counter() - t0

    model_doc = {
        "format": "skipgp-model",
        "version": __version__,
        "model": result.model.to_dict(),
        "data": str(Path(cfg["data"]).resolve()),
        "data_sha256": sha256_file(cfg["data"]),
        "features": train.features,
        "target": train.target,
        "standardization": train.standardization(),
        "seed": seed,
    }
    report = {
        "command": "fit",
        "version": __version__,
        "config": cfg,
        "mll_trace": [rec["mll"] for rec in result.trace],
        "initial_mll": result.initial_mll,
        "best_mll": result.best_mll,
        "final_log_params": result.model.log_params().tolist(),
        "metrics": metrics,
        "operator_applies": {"leaf_applies_per_mll": details.leaf_applies,
                             "cg_iterations": details.cg_iterations,
                             "slq_clamped": details.slq_clamped},
        "timings": {**details.timings, "fit": t_fit, "predict": t_pred,
                    "total": time.perf_counter() - t_start},
    }
    write_json(out / "model.json", model_doc)
    write_json(out / "metrics.json", report)
    log.info("fit done: best mll %.4f", result.best_mll)
    return EXIT_OK


def _apply_scaling(train, X):
    if train.x_scaling is None:
        return X
    m = np.array([p[0] for p in train.x_scaling])
    s = np.array([p[1] for p in train.x_scaling])
    return (X - m) / s


def cmd_predict(args):
    path = Path(args.model)
    if not path.is_file():
        raise MissingModelError(f"model artifact {path} not found; run 'skipgp fit' first")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        model = gp.GpModel.from_dict(doc["model"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"model artifact {path} is malformed: {exc}") from None
    if not Path(doc["data"]).is_file():
        raise MissingModelError(f"training data {doc['data']} referenced by the model is missing")
    if sha256_file(doc["data"]) != doc["data_sha256"]:
        raise ValidationError(f"training data {doc['data']} changed since the model was fitted")
    std = doc.get("standardization")
    train = load_dataset(doc["data"], doc["features"], doc["target"], standardize=std is not None)

    if not Path(args.data).is_file():
        raise ConfigError(f"data path {args.data} does not exist")
    t0 = time.perf_counter()
    header = Path(args.data).read_text(encoding="utf-8").splitlines()[:1]
    has_target = bool(header) and doc["target"] in [h.strip() for h in header[0].split(",")]
    test = load_dataset(args.data, doc["features"], doc["target"] if has_target else None)
    seed = doc.get("seed", 0)
    post = gp.condition(model, train.X, train.y, seed)
    mean, var = gp.predict(post, _apply_scaling(train, test.X))
    mean, var = _unscale(train, mean, var)
    elapsed = time.perf_counter() - t0

    out = Path(args.out)
    write_csv(out / "predictions.csv", ["row", "mean", "variance"],
              [(i, float(m), float(v)) for i, (m, v) in enumerate(zip(mean, var))])
    report = {"command": "predict", "version": __version__,
              "config": {"model": str(path), "data": str(args.data), "out": str(out)},
              "rows": int(test.X.shape[0]), "timings": {"total": elapsed}}
    if has_target:
        report["metrics"] = {"test": _errors(mean, test.y)}
    write_json(out / "metrics.json", report)
    return EXIT_OK


def cmd_bench_mvm(args):
    t0 = time.perf_counter()
    rows = bench.bench_mvm(n=args.n, seed=args.seed, grid_size=args.grid_size)
    out = Path(args.out)
    write_csv(out / "bench_mvm.csv", ["d", "r", "median_relative_error", "iqr"],
              [(r.d, r.r, r.median, r.iqr) for r in rows])
    write_json(out / "metrics.json", {
        "command": "bench-mvm", "version": __version__,
        "config": {"n": args.n, "seed": args.seed, "grid_size": args.grid_size},
        "rows": [r.__dict__ for r in rows],
        "timings": {"total": time.perf_counter() - t0}})
    return EXIT_OK


def _int_list(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 4:
        raise argparse.ArgumentTypeError("grid sizes must be integers of at least 4")
    return vals


def cmd_bench_inducing(args):
    if not Path(args.data).is_file():
        raise ConfigError(f"data path {args.data} does not exist")
    ds = load_dataset(args.data, target=args.target)
    rows = bench.bench_inducing(ds.X, ds.y, args.m_list, repeats=args.repeats, seed=args.seed,
                                rank=args.rank)
    out = Path(args.out)
    write_csv(out / "bench_inducing.csv", ["m", "seconds_per_mll"], rows)
    write_json(out / "metrics.json", {
        "command": "bench-inducing", "version": __version__,
        "config": {"data": str(args.data), "m_list": args.m_list, "seed": args.seed,
                   "rank": args.rank},
        "n": int(ds.n),
        "timings": {"per_mll": {str(m): t for m, t in rows},
                    "loglog_slope": bench.loglog_slope(*zip(*rows)) if len(rows) > 1 else None}})
    return EXIT_OK


def cmd_multitask(args):
    if not Path(args.data).is_file():
        raise ConfigError(f"data path {args.data} does not exist")
    ds = load_dataset(args.data, features=["x"], target="y", task="task_id")
    data = MultitaskData(ds.X[:, 0], ds.y, ds.task)
    if data.s < 2:
        raise ValidationError("multi-task data needs at least two tasks")
    settings = ClusterSettings(mode=MODE_ALIASES[args.mode], probe_seed=args.seed)
    out = Path(args.out)
    t0 = time.perf_counter()

    lines = []
    model = ClusterMTGP(data, args.clusters, settings)
    res = run_gibbs(model, sweeps=args.sweeps, burn_in=min(args.burn_in, args.sweeps),
                    seed=args.seed, callback=lines.append)
    write_atomic(out / "trace.jsonl", "".join(json.dumps(r) + "\n" for r in lines))
    t_gibbs = time.perf_counter() - t0

    # extrapolation: hold out the last few tasks and forecast their late halves
    n_targets = max(1, min(5, data.s // 4))
    pool = data.tasks(range(data.s - n_targets))
    targets = [(data.x[data.task == t], data.y[data.task == t])
               for t in range(data.s - n_targets, data.s)]
    counts = sorted({c for c in (1, 2, 5, 10, 15, 20, 40, pool.s) if 1 <= c <= pool.s})
    cutoff = float(np.median(data.x))
    t1 = time.perf_counter()
    rows = bench.extrapolation_rmse(pool, targets, counts, args.clusters, cutoff,
                                    sweeps=args.sweeps, burn_in=min(args.burn_in, args.sweeps),
                                    seed=args.seed, settings=settings)
    write_csv(out / "extrapolation.csv", ["tasks", "multitask_rmse", "baseline_rmse"],
              [(r["tasks"], r["multitask_rmse"], r["baseline_rmse"]) for r in rows])
    write_json(out / "metrics.json", {
        "command": "multitask", "version": __version__,
        "config": {"data": str(args.data), "clusters": args.clusters, "sweeps": args.sweeps,
                   "burn_in": args.burn_in, "seed": args.seed, "mode": settings.mode},
        "task_labels": ds.task_labels,
        "assignments": res.state.lam.tolist(),
        "mll_trace": [r["mll"] for r in lines],
        "mll_evaluations": res.state.mll_evaluations,
        "hyperparameters": res.state.hyper.to_dict(),
        "extrapolation": rows,
        "extrapolation_cutoff": cutoff,
        "timings": {"gibbs": t_gibbs, "extrapolation": time.perf_counter() - t1,
                    "total": time.perf_counter() - t0}})
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser():
    p = _Parser(prog="skipgp", description="Gaussian process regression with fast product-kernel MVMs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", help="fit hyperparameters and write a model and report")
    f.add_argument("--config", required=True)
    f.add_argument("--seed", type=int)
    f.add_argument("--mode", choices=["exact", "skip"])
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", help="predict with a fitted model")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    b = sub.add_parser("bench-mvm", help="SKIP MVM error against rank")
    b.add_argument("--n", type=int, default=500)
    b.add_argument("--seed", type=int, required=True)
    b.add_argument("--grid-size", type=int, default=100)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench_mvm)

    bi = sub.add_parser("bench-inducing", help="mll wall time against grid size")
    bi.add_argument("--data", required=True)
    bi.add_argument("--m-list", type=_int_list, default=[50, 100, 200, 400])
    bi.add_argument("--target", default="y")
    bi.add_argument("--seed", type=int, default=0)
    bi.add_argument("--rank", type=int, default=30)
    bi.add_argument("--repeats", type=int, default=3)
    bi.add_argument("--out", required=True)
    bi.set_defaults(func=cmd_bench_inducing)

    m = sub.add_parser("multitask", help="cluster multi-task GP with Gibbs sampling")
    m.add_argument("--data", required=True, help="CSV with columns task_id, x, y")
    m.add_argument("--clusters", type=int, default=3)
    m.add_argument("--sweeps", type=int, default=20)
    m.add_argument("--burn-in", type=int, default=5)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--mode", choices=["exact", "skip"], default="exact")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_multitask)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(json.dumps(_error_payload(exc, EXIT_CONFIG)), file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a JSON error
        code = exit_code_for(exc)
        if code == EXIT_UNEXPECTED:
            log.debug("unexpected error", exc_info=True)
        print(json.dumps(_error_payload(exc, code)), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
