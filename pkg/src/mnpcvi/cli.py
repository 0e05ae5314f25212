"""Command line: simulate, fit, evaluate, bootstrap, mcmc, compare."""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import secrets
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import _accel
from .evaluation import DEFAULT_DRAWS, bootstrap, metrics, split
from .gibbs import GibbsConfig, gibbs_fit
from .io import (DataError, config_hash, dump_json, load_json, read_dataset, read_fit,
                 read_truth, write_dataset, write_fit, write_trace, write_truth)
from .model import rmse
from .simulate import SimConfig, simulate
from .surrogates import SurrogateScheme
from .trainer import FitResult, TrainConfig, TrainingError, fit

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
COMMANDS = ("simulate", "fit", "evaluate", "bootstrap", "mcmc", "compare")


class ConfigError(ValueError):
    pass


def default_config():
    sim = asdict(SimConfig())
    sim["seed"] = None
    train = asdict(TrainConfig())
    train["seed"] = None
    gibbs = asdict(GibbsConfig())
    gibbs["seed"] = None
    return {
        "seed": None,
        "out": "out",
        "data": None,
        "truth": None,
        "scheme": "combined",
        "threads": None,
        "sim": sim,
        "train": train,
        "gibbs": gibbs,
        "eval": {"draws": DEFAULT_DRAWS, "holdout": False, "train_fraction": 0.8,
                 "replicates": 20, "seed": None},
    }


def _check_type(key, default, value):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"config key '{key}' expects {type(default).__name__}, got {value!r}")
    return value


def merge(base, update, prefix=""):
    for key, val in update.items():
        name = prefix + key
        if key not in base:
            raise ConfigError(f"unknown config key '{name}'")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key '{name}' must be a section")
            merge(base[key], val, name + ".")
        else:
            base[key] = _check_type(name, base[key], val)
    return base


def set_dotted(cfg, dotted, raw):
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    parts = dotted.split(".")
    node = {}
    leaf = node
    for p in parts[:-1]:
        leaf[p] = {}
        leaf = leaf[p]
    leaf[parts[-1]] = val
    merge(cfg, node)


def resolve(args, extra):
    cfg = default_config()
    if args.config:
        try:
            doc = load_json(args.config)
        except DataError as exc:
            raise ConfigError(str(exc)) from None
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        merge(cfg, doc)
    for item in extra:
        if not item.startswith("--") or "=" not in item:
            raise ConfigError(f"unrecognised argument '{item}'")
        key, raw = item[2:].split("=", 1)
        set_dotted(cfg, key, raw)
    for flag in ("out", "seed", "scheme", "data", "truth", "threads"):
        val = getattr(args, flag, None)
        if val is not None:
            cfg[flag] = val
    if cfg["threads"] is None and os.environ.get("MNP_THREADS"):
        try:
            cfg["threads"] = int(os.environ["MNP_THREADS"])
        except ValueError:
            raise ConfigError("MNP_THREADS must be an integer") from None
    if cfg["threads"] is not None and cfg["threads"] < 1:
        raise ConfigError("config key 'threads' must be at least 1")
    try:
        SurrogateScheme.parse(cfg["scheme"])
    except ValueError as exc:
        raise ConfigError(f"config key 'scheme': {exc}") from None
    if cfg["seed"] is None:
        cfg["seed"] = secrets.randbits(63)
    for section in ("sim", "train", "gibbs", "eval"):
        if cfg[section]["seed"] is None:
            cfg[section]["seed"] = cfg["seed"]
    for name, val in [("seed", cfg["seed"])] + [(s + ".seed", cfg[s]["seed"])
                                                for s in ("sim", "train", "gibbs", "eval")]:
        if not isinstance(val, int) or isinstance(val, bool) or val < 0:
            raise ConfigError(f"config key '{name}' must be a non-negative integer")
    return cfg


def _build(cls, section, cfg):
    try:
        obj = cls(**cfg[section])
    except TypeError as exc:
        raise ConfigError(f"section '{section}': {exc}") from None
    return obj


def _sim_config(cfg):
    sc = _build(SimConfig, "sim", cfg)
    if sc.true_a is not None:
        sc.true_a = np.asarray(sc.true_a, dtype=np.float64)
    if sc.true_delta_sigma is not None:
        sc.true_delta_sigma = np.asarray(sc.true_delta_sigma, dtype=np.float64)
    try:
        sc.validate()
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise ConfigError(f"section 'sim': {exc}") from None
    return sc


def _train_config(cfg):
    tc = _build(TrainConfig, "train", cfg)
    try:
        tc.validate()
    except ValueError as exc:
        raise ConfigError(f"section 'train': {exc}") from None
    return tc


def _require(cfg, key):
    if not cfg.get(key):
        raise ConfigError(f"config key '{key}' is required for this command (or pass --{key})")
    return cfg[key]


def _load_inputs(cfg, need_truth=False):
    data, header = read_dataset(_require(cfg, "data"))
    truth = None
    if cfg.get("truth"):
        truth = read_truth(cfg["truth"])
        if (truth.d, truth.p) != (data.d, data.p):
            raise DataError(f"truth dimensions {(truth.d, truth.p)} do not match data "
                            f"{(data.d, data.p)}", cfg["truth"])
    elif need_truth:
        _require(cfg, "truth")
    return data, header, truth


def _outdir(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


RUNTIME_KEYS = ("out", "threads")


def reproducible_part(cfg):
    """The config without keys that cannot change results (output location,
    worker counts); this is what gets hashed and embedded in outputs."""
    return {k: v for k, v in cfg.items() if k not in RUNTIME_KEYS}


def _write_resolved(out, cfg):
    h = config_hash(reproducible_part(cfg))
    dump_json({"config_hash": h, "config": cfg}, out / "resolved_config.json")
    return h


def _training_subset(cfg, data):
    if not cfg["eval"]["holdout"]:
        return data, None
    train_idx, test_idx = split(data.n, cfg["eval"]["seed"], cfg["eval"]["train_fraction"])
    return data.subset(train_idx), data.subset(test_idx)


def _attach_metrics(res: FitResult, cfg, data, truth):
    draws = cfg["eval"]["draws"]
    if draws <= 0:
        return
    train, test = _training_subset(cfg, data)
    seed = cfg["eval"]["seed"]
    res.metrics["in-sample"] = metrics(train, res.params, truth, draws, seed).as_dict()
    if test is not None:
        res.metrics["out-of-sample"] = metrics(test, res.params, truth, draws, seed,
                                               "out-of-sample").as_dict()


# commands -------------------------------------------------------------------------------

def cmd_simulate(cfg):
    sc = _sim_config(cfg)
    data, truth = simulate(sc)
    out = _outdir(cfg)
    h = _write_resolved(out, cfg)
    write_dataset(out / "data.jsonl", data, sc.design_layout, sc.seed)
    write_truth(out / "truth.json", truth, sc.design_layout, sc.seed, h)
    return f"wrote {out / 'data.jsonl'} (n={data.n}, d={data.d}, p={data.p})"


def cmd_fit(cfg):
    tc = _train_config(cfg)
    data, _, truth = _load_inputs(cfg)
    out = _outdir(cfg)
    h = _write_resolved(out, cfg)
    train, _ = _training_subset(cfg, data)
    res = fit(train, cfg["scheme"], tc, threads=cfg["threads"])
    res.config = reproducible_part(cfg)
    _attach_metrics(res, cfg, data, truth)
    write_trace(out / "trace.csv", res.trace)
    write_fit(out / "fit.json", res, "trace.csv", h)
    msg = f"wrote {out / 'fit.json'} ({res.steps} steps, converged={res.converged})"
    if truth is not None:
        msg += f" rmse={rmse(res.params, truth):.4f}"
    return msg


def cmd_mcmc(cfg):
    gc = _build(GibbsConfig, "gibbs", cfg)
    data, _, truth = _load_inputs(cfg)
    try:
        gc.validate(data.d)
    except ValueError as exc:
        raise ConfigError(f"section 'gibbs': {exc}") from None
    out = _outdir(cfg)
    h = _write_resolved(out, cfg)
    train, _ = _training_subset(cfg, data)
    draws = gibbs_fit(train, gc, threads=cfg["threads"])
    res = FitResult(method="mcmc", params=draws.point_estimate(), n=train.n, d=data.d, p=data.p,
                    seconds=draws.seconds, converged=True, steps=gc.iterations,
                    config=reproducible_part(cfg),
                    extra={"retained": int(draws.a.shape[0]), "guard_events": draws.guard_events,
                           "violations": draws.violations,
                           "split_half_z": draws.split_half().tolist()})
    _attach_metrics(res, cfg, data, truth)
    write_fit(out / "mcmc.json", res, None, h)
    msg = f"wrote {out / 'mcmc.json'} ({res.extra['retained']} draws)"
    if truth is not None:
        msg += f" rmse={rmse(res.params, truth):.4f}"
    return msg


def cmd_evaluate(cfg, fit_path):
    data, _, truth = _load_inputs(cfg)
    res = read_fit(fit_path)
    if (res.d, res.p) != (data.d, data.p):
        raise DataError(f"fit dimensions {(res.d, res.p)} do not match data {(data.d, data.p)}",
                        fit_path)
    out = _outdir(cfg)
    h = _write_resolved(out, cfg)
    draws, seed = cfg["eval"]["draws"], cfg["eval"]["seed"]
    if draws < 1:
        raise ConfigError("config key 'eval.draws' must be at least 1 for evaluate")
    train, test = _training_subset(cfg, data)
    reports = {"in-sample": metrics(train, res.params, truth, draws, seed).as_dict()}
    if test is not None:
        reports["out-of-sample"] = metrics(test, res.params, truth, draws, seed,
                                           "out-of-sample").as_dict()
    dump_json({"config_hash": h, "fit": str(fit_path), "reports": reports}, out / "metrics.json")
    text = "".join(f"[{tag}]\n" + "".join(f"{k}={v!r}\n" for k, v in rep.items() if v is not None)
                   for tag, rep in reports.items())
    (out / "metrics.txt").write_text(text)
    return text.rstrip()


def cmd_bootstrap(cfg):
    tc = _train_config(cfg)
    data, _, truth = _load_inputs(cfg)
    out = _outdir(cfg)
    h = _write_resolved(out, cfg)
    R = cfg["eval"]["replicates"]
    if R < 2:
        raise ConfigError("config key 'eval.replicates' must be at least 2")
    res = bootstrap(data, cfg["scheme"], tc, R=R, seed=cfg["eval"]["seed"],
                    workers=cfg["threads"] or 1)
    obj = {
        "config_hash": h,
        "n": data.n, "d": data.d, "p": data.p,
        "R": R,
        "succeeded": res.indices,
        "failures": {str(k): v for k, v in res.failures.items()},
        "flagged": res.flagged,
        "replicates": [r.vector().tolist() for r in res.replicates],
        "mean": res.mean.tolist() if res.replicates else None,
        "std": res.std.tolist() if res.replicates else None,
        "seconds": res.seconds,
    }
    if truth is not None and res.replicates:
        obj["coverage_2sd"] = res.coverage(truth)
    dump_json(obj, out / "bootstrap.json")
    return f"wrote {out / 'bootstrap.json'} ({len(res.replicates)}/{R} replicates)"


COMPARE_COLUMNS = ("method", "scheme", "hit_rate", "log_score", "brier_score", "rmse",
                   "time_min")


def cmd_compare(cfg, fit_paths):
    if len(fit_paths) < 2:
        raise ConfigError("compare needs at least two fit results")
    truth = read_truth(_require(cfg, "truth"))
    fits = [read_fit(p) for p in fit_paths]
    dims = {(f.n, f.d, f.p) for f in fits}
    if len(dims) != 1:
        raise DataError(f"fit results disagree on (n, d, p): {sorted(dims)}")
    if (truth.d, truth.p) != (fits[0].d, fits[0].p):
        raise DataError("truth dimensions do not match the fit results", cfg["truth"])
    data = None
    if cfg.get("data"):
        data, _ = read_dataset(cfg["data"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARE_COLUMNS)
    for f in fits:
        if data is not None:
            rep = metrics(data, f.params, truth, cfg["eval"]["draws"], cfg["eval"]["seed"]).as_dict()
        else:
            rep = dict(f.metrics.get("in-sample") or {})
        row = [f.method, f.scheme or ""]
        for key in ("hit_rate", "log_score", "brier_score"):
            row.append(repr(float(rep[key])) if rep.get(key) is not None else "")
        row.append(repr(rmse(f.params, truth)))
        row.append(repr(f.seconds / 60.0))
        w.writerow(row)
    out = _outdir(cfg)
    _write_resolved(out, cfg)
    (out / "compare.csv").write_text(buf.getvalue())
    return buf.getvalue().rstrip()


# entry point ---------------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="mnpcvi", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config")
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--scheme", choices=[s.value for s in SurrogateScheme])
        sp.add_argument("--threads", type=int)
        if name != "simulate":
            sp.add_argument("--data")
            sp.add_argument("--truth")
        if name == "evaluate":
            sp.add_argument("--fit", required=True)
        if name == "compare":
            sp.add_argument("fits", nargs="+")
    return ap


def run(argv=None):
    ap = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args, extra = ap.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0
    cfg = None
    try:
        cfg = resolve(args, extra)
        if cfg["threads"]:
            _accel.set_threads(cfg["threads"])
        if args.command == "simulate":
            msg = cmd_simulate(cfg)
        elif args.command == "fit":
            msg = cmd_fit(cfg)
        elif args.command == "mcmc":
            msg = cmd_mcmc(cfg)
        elif args.command == "evaluate":
            msg = cmd_evaluate(cfg, args.fit)
        elif args.command == "bootstrap":
            msg = cmd_bootstrap(cfg)
        else:
            msg = cmd_compare(cfg, args.fits)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        diag = {"command": args.command, "error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, TrainingError):
            diag["diagnostics"] = exc.diagnostics
        out = Path(cfg["out"] if cfg else ".")
        out.mkdir(parents=True, exist_ok=True)
        dump_json(diag, out / "diagnostics.json")
        print(f"numerical failure: {exc} (see {out / 'diagnostics.json'})", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # DataError and any remaining input validation failure
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(msg)
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
