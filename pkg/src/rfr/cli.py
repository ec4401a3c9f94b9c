"""Command-line entry point: ``rfr simulate | fit | predict | importance | compare``.

Settings resolve as: command-line flag, else JSON config (``--config``),
else the documented default.  A run manifest can be passed back as the
config to reproduce that run.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .baselines import METHODS, cross_validate_compare
from .data import CovariateScaler, DataError, export, ingest, standardize_covariates
from .forest import (ForestModel, fit_forest, oob_trace,
                     permutation_importance, predict_cum_hazard, predict_mcf)
from .simulation import SCENARIOS, SimConfig, build_dataset

DEFAULTS = {
    "simulate": dict(scenario="A", n=200, p=10, horizon=100.0, seed=0),
    "fit": dict(trees=500, m=None, d0=5, bins=32, rule="l2", mode="mcf", omega=None,
                workers=1, weighted_merge=False, seed=0, scale=True),
    "predict": dict(grid=None, hazard=False),
    "importance": dict(repeats=1, seed=0),
    "compare": dict(methods=["RF-R", "MCF", "MCF-K", "HPP"], iterations=500, split=0.75, K=20,
                    trees=500, m=None, d0=5, bins=32, rule="l2", mode=None, omega=None, seed=0,
                    scale=True),
}


class UsageError(Exception):
    pass


def _version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


def _fmt(v) -> str:
    return repr(float(v))


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("RFR_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"RFR_THREADS must be an integer, got {env!r}") from None
    return 1


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if "config" in loaded and "command" in loaded:
            loaded = loaded["config"]
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {', '.join(sorted(unknown))}")
        cfg.update(loaded)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _write_manifest(path, command, cfg, inputs, outputs, started):
    manifest = {"command": command, "config": cfg, "seed": cfg.get("seed"),
                "version": _version(), "inputs": inputs, "outputs": outputs,
                "duration_s": time.time() - started}
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load(args, scaler: CovariateScaler | None = None, scale: bool = True):
    data = ingest(args.events, args.covariates, args.sensors)
    if scale and data.p:
        data, scaler = standardize_covariates(data, scaler)
    return data, scaler


def _scaler_from(params: dict) -> CovariateScaler | None:
    s = params.get("scaler")
    if not s:
        return None
    sc = CovariateScaler()
    sc.data_min_ = np.array(s["min"], dtype=float)
    sc.data_range_ = np.array(s["range"], dtype=float)
    sc.n_features_in_ = sc.data_min_.size
    return sc


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    started = time.time()
    cfg = resolve_config("simulate", args)
    if cfg["scenario"] not in SCENARIOS:
        raise UsageError(f"unknown scenario {cfg['scenario']!r}; valid: {', '.join(SCENARIOS)}")
    try:
        sim = SimConfig(n=int(cfg["n"]), p=int(cfg["p"]), horizon=float(cfg["horizon"]),
                        scenario=cfg["scenario"], seed=int(cfg["seed"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data = build_dataset(sim)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {"events": str(out / "events.csv"), "covariates": str(out / "covariates.csv")}
    if data.q:
        files["sensors"] = str(out / "sensors.csv")
    export(data, files["events"], files["covariates"], files.get("sensors"))
    _write_manifest(out / "manifest.json", "simulate", cfg, {}, files, started)
    return 0


def _forest_kwargs(cfg, n_jobs):
    return dict(B=int(cfg["trees"]), m=cfg["m"], d0=int(cfg["d0"]), rule=cfg["rule"],
                mode=cfg["mode"], seed=int(cfg["seed"]), L=int(cfg["bins"]), omega=cfg["omega"],
                n_jobs=n_jobs)


def cmd_fit(args) -> int:
    started = time.time()
    cfg = resolve_config("fit", args)
    data, scaler = _load(args, scale=cfg["scale"])
    kw = _forest_kwargs(cfg, _threads(args))
    forest = fit_forest(data, workers=int(cfg["workers"]), weighted=bool(cfg["weighted_merge"]), **kw)
    if scaler is not None:
        forest.params["scaler"] = {"min": scaler.data_min_.tolist(), "range": scaler.data_range_.tolist()}
    Path(args.out).write_text(forest.to_json(), encoding="utf-8")
    trace = oob_trace(forest, data)
    oob_path = str(Path(args.out).with_suffix(".oob.csv"))
    _write_csv(oob_path, ["trees", "oob_c_index"],
               [[b + 1, "" if np.isnan(v) else _fmt(v)] for b, v in enumerate(trace)])
    print(f"OOB C-index ({forest.n_trees} trees): {trace[-1]:.4f}")
    _write_manifest(args.manifest or str(Path(args.out).with_suffix(".manifest.json")), "fit", cfg,
                    {"events": args.events, "covariates": args.covariates, "sensors": args.sensors},
                    {"forest": args.out, "oob": oob_path}, started)
    return 0


def _read_forest(path) -> ForestModel:
    try:
        return ForestModel.from_json(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read forest {path}: {exc}") from None


def cmd_predict(args) -> int:
    started = time.time()
    cfg = resolve_config("predict", args)
    forest = _read_forest(args.forest)
    if cfg["hazard"] and forest.mode != "nhpp":
        raise UsageError("--hazard needs an NHPP-mode forest; this forest has MCF leaves")
    if cfg["grid"] is None:
        raise UsageError("--grid is required (comma-separated times)")
    try:
        grid = np.array([float(v) for v in str(cfg["grid"]).split(",")])
    except ValueError:
        raise UsageError(f"malformed --grid {cfg['grid']!r}") from None
    if np.any(grid < 0):
        raise UsageError("grid times must be non-negative")
    data, _ = _load(args, _scaler_from(forest.params), scale=bool(forest.params.get("scaler")))
    rows = []
    for r in data:
        if forest.mode == "mcf":
            vals = predict_mcf(forest, r.static_covariates, grid)
        else:
            vals = predict_cum_hazard(forest, r.static_covariates, r, grid)
        rows.extend([r.id, _fmt(t), _fmt(v)] for t, v in zip(grid, vals))
    _write_csv(args.out, ["id", "time", "hazard" if forest.mode == "nhpp" else "mcf"], rows)
    _write_manifest(args.manifest or str(Path(args.out).with_suffix(".manifest.json")), "predict",
                    cfg, {"forest": args.forest, "covariates": args.covariates}, {"curves": args.out},
                    started)
    return 0


def cmd_importance(args) -> int:
    started = time.time()
    cfg = resolve_config("importance", args)
    forest = _read_forest(args.forest)
    data, _ = _load(args, _scaler_from(forest.params), scale=bool(forest.params.get("scaler")))
    if tuple(data.ids) != tuple(forest.ids):
        raise UsageError("importance needs the forest's training data (system ids differ)")
    imp = permutation_importance(forest, data, seed=int(cfg["seed"]), repeats=int(cfg["repeats"]))
    _write_csv(args.out, ["covariate", "importance"],
               [[name, _fmt(v)] for name, v in zip(data.covariate_names, imp)])
    _write_manifest(args.manifest or str(Path(args.out).with_suffix(".manifest.json")), "importance",
                    cfg, {"forest": args.forest, "covariates": args.covariates},
                    {"importance": args.out}, started)
    return 0


def cmd_compare(args) -> int:
    started = time.time()
    cfg = resolve_config("compare", args)
    methods = cfg["methods"]
    if isinstance(methods, str):
        methods = [m.strip() for m in methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown methods {bad}; valid: {', '.join(METHODS)}")
    cfg["methods"] = methods
    data, _ = _load(args, scale=cfg["scale"])
    rfr = dict(B=int(cfg["trees"]), m=cfg["m"], d0=int(cfg["d0"]), rule=cfg["rule"],
               L=int(cfg["bins"]), omega=cfg["omega"], n_jobs=_threads(args))
    if cfg["mode"]:
        rfr["mode"] = cfg["mode"]
    report = cross_validate_compare(data, methods, int(cfg["iterations"]), float(cfg["split"]),
                                    int(cfg["seed"]), int(cfg["K"]), rfr)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = str(prefix) + ".csv", str(prefix) + ".json"
    report.to_csv(csv_path)
    Path(json_path).write_text(report.to_json() + "\n", encoding="utf-8")
    for name, s in report.summary().items():
        if s.get("n"):
            print(f"{name:6s} mean C-index {s['mean']:.4f} (sd {s['std']:.4f}, n={s['n']})")
    _write_manifest(args.manifest or str(prefix) + ".manifest.json", "compare", cfg,
                    {"events": args.events, "covariates": args.covariates}, {"csv": csv_path,
                                                                             "json": json_path},
                    started)
    return 0


# ---------------------------------------------------------------- parser

def _add_data(p, sensors=True):
    p.add_argument("--events", required=True, help="events CSV (id,time)")
    p.add_argument("--covariates", required=True, help="covariates CSV (id,censor_time,x1..xp)")
    if sensors:
        p.add_argument("--sensors", help="sensors CSV (id,channel,time,value)")


def _add_forest(p):
    p.add_argument("--trees", type=int, help="number of trees B (default 500)")
    p.add_argument("--m", type=int, help="covariates tried per node (default floor(p/3))")
    p.add_argument("--d0", type=int, help="min failed systems per terminal node (default 5)")
    p.add_argument("--bins", type=int, help="candidate bins per covariate (default 32)")
    p.add_argument("--rule", choices=["l2", "logrank"])
    p.add_argument("--mode", choices=["mcf", "nhpp"])
    p.add_argument("--omega", type=float, help="L1 weight for NHPP leaves (default: CV)")
    p.add_argument("--no-scale", dest="scale", action="store_const", const=False,
                   help="use covariates as given (must already lie in [0, 1])")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rfr", description="Random forests for recurrence data")
    parser.add_argument("--version", action="version", version=_version())
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config (or a previous run manifest)")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help="max concurrent tasks (env RFR_THREADS)")
        p.add_argument("--manifest", help="manifest path (default next to the output)")

    p = sub.add_parser("simulate", help="simulate a synthetic dataset")
    common(p)
    p.add_argument("--scenario", help=f"one of {', '.join(SCENARIOS)}")
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--horizon", type=float)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a forest")
    common(p)
    _add_data(p)
    _add_forest(p)
    p.add_argument("--workers", type=int, help="number of simulated workers (default 1)")
    p.add_argument("--weighted-merge", dest="weighted_merge", action="store_const", const=True)
    p.add_argument("--out", required=True, help="forest JSON path")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict MCF or cumulative hazard curves")
    common(p)
    p.add_argument("--forest", required=True)
    _add_data(p)
    p.add_argument("--grid", help="comma-separated prediction times")
    p.add_argument("--hazard", action="store_const", const=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("importance", help="permutation importance on out-of-bag systems")
    common(p)
    p.add_argument("--forest", required=True)
    _add_data(p)
    p.add_argument("--repeats", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("compare", help="cross-validated comparison with baselines")
    common(p)
    _add_data(p)
    _add_forest(p)
    p.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--iterations", type=int)
    p.add_argument("--split", type=float)
    p.add_argument("--K", type=int, help="neighbours for MCF-K (default 20)")
    p.add_argument("--out", required=True, help="output prefix (.csv and .json)")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"rfr {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ValueError, OSError, ArithmeticError) as exc:
        print(f"rfr {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
