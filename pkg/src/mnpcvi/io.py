"""File formats: JSON-lines datasets, JSON results and truths, CSV traces.

Alternatives are 1-based in files and 0-based in memory.
"""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .model import ChoiceDataset, ModelParams
from .trainer import FitResult, LossTrace


class DataError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"cannot serialise {type(x).__name__}")


def dump_json(obj, path):
    text = json.dumps(obj, indent=2, default=_jsonable) + "\n"
    _atomic_write(path, text)


def load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON ({exc.msg})", path, exc.lineno) from None
    except OSError as exc:
        raise DataError(str(exc.strerror or exc), path) from None


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


# datasets ------------------------------------------------------------------------

def dataset_lines(data: ChoiceDataset, layout="custom", seed=None):
    header = {"n": data.n, "d": data.d, "p": data.p, "layout": layout, "seed": seed}
    yield json.dumps(header)
    for i in range(data.n):
        yield json.dumps({"y": int(data.y[i]) + 1, "X": data.X[i].tolist()})


def write_dataset(path, data: ChoiceDataset, layout="custom", seed=None):
    _atomic_write(path, "".join(line + "\n" for line in dataset_lines(data, layout, seed)))


def read_dataset(path):
    """Returns ``(dataset, header)``."""
    try:
        fh = open(path)
    except OSError as exc:
        raise DataError(str(exc.strerror or exc), path) from None
    with fh:
        first = fh.readline()
        if not first.strip():
            raise DataError("empty file (missing header)", path, 1)
        header = _parse_line(first, path, 1)
        for key in ("n", "d", "p"):
            if not isinstance(header.get(key), int) or isinstance(header.get(key), bool):
                raise DataError(f"header field {key!r} must be an integer", path, 1)
        n, d, p = header["n"], header["d"], header["p"]
        if n < 1 or d < 2 or p < 1:
            raise DataError("header needs n >= 1, d >= 2, p >= 1", path, 1)
        X = np.empty((n, d, p))
        y = np.empty(n, dtype=np.int64)
        i = 0
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            if i >= n:
                raise DataError(f"more records than the header's n={n}", path, lineno)
            rec = _parse_line(line, path, lineno)
            yi = rec.get("y")
            if not isinstance(yi, int) or isinstance(yi, bool) or not 1 <= yi <= d:
                raise DataError(f"choice index must be an integer in 1..{d}, got {yi!r}",
                                path, lineno)
            try:
                Xi = np.array(rec.get("X"), dtype=np.float64)
            except (TypeError, ValueError):
                raise DataError("X must be a numeric d x p array", path, lineno) from None
            if Xi.shape != (d, p):
                raise DataError(f"X has shape {Xi.shape}, expected {(d, p)}", path, lineno)
            if not np.all(np.isfinite(Xi)):
                raise DataError("X has non-finite entries", path, lineno)
            X[i] = Xi
            y[i] = yi - 1
            i += 1
        if i != n:
            raise DataError(f"header says n={n} but found {i} records", path)
    return ChoiceDataset(X, y), header


def _parse_line(line, path, lineno):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON ({exc.msg})", path, lineno) from None
    if not isinstance(obj, dict):
        raise DataError("expected a JSON object", path, lineno)
    return obj


# parameters -------------------------------------------------------------------------

def params_to_dict(params: ModelParams):
    return {"a": params.a.tolist(), "delta_sigma": params.delta_sigma.ravel().tolist()}


def params_from_dict(obj, d=None, p=None, where=None):
    try:
        a = np.array(obj["a"], dtype=np.float64)
        S = np.array(obj["delta_sigma"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad parameter block ({exc})", where) from None
    k = int(round(np.sqrt(S.size)))
    if S.ndim == 1:
        if k * k != S.size:
            raise DataError("delta_sigma must hold (d-1)^2 entries", where)
        S = S.reshape(k, k)
    if d is not None and S.shape != (d - 1, d - 1):
        raise DataError(f"delta_sigma has shape {S.shape}, expected {(d - 1, d - 1)}", where)
    if p is not None and a.shape != (p,):
        raise DataError(f"a has length {a.size}, expected {p}", where)
    return ModelParams(a, S)


def write_truth(path, truth: ModelParams, layout=None, seed=None, cfg_hash=None):
    obj = {"d": truth.d, "p": truth.p, "layout": layout, "seed": seed}
    obj.update(params_to_dict(truth))
    if cfg_hash is not None:
        obj["config_hash"] = cfg_hash
    dump_json(obj, path)


def read_truth(path):
    obj = load_json(path)
    return params_from_dict(obj, obj.get("d"), obj.get("p"), path)


# fit results -------------------------------------------------------------------------

def fit_to_dict(res: FitResult, trace_path=None, cfg_hash=None):
    out = {
        "method": res.method,
        "n": res.n, "d": res.d, "p": res.p,
        "scheme": res.scheme,
        "a": res.params.a.tolist(),
        "delta_sigma": res.params.delta_sigma.ravel().tolist(),
        "seconds": res.seconds,
        "converged": res.converged,
        "epochs": res.epochs,
        "steps": res.steps,
        "clamped_per_epoch": list(res.clamped_per_epoch),
        "metrics": res.metrics,
        "trace": None if trace_path is None else str(trace_path),
        "config": res.config,
        "config_hash": cfg_hash,
        "extra": res.extra,
    }
    if res.nu is not None:
        out["encoder"] = {"config": res.encoder, "nu": res.nu.tolist()}
    return out


def write_fit(path, res: FitResult, trace_path=None, cfg_hash=None):
    dump_json(fit_to_dict(res, trace_path, cfg_hash), path)


def read_fit(path):
    obj = load_json(path)
    for key in ("method", "n", "d", "p", "a", "delta_sigma"):
        if key not in obj:
            raise DataError(f"missing field {key!r}", path)
    if obj["method"] not in ("cvi", "mcmc"):
        raise DataError(f"unknown method tag {obj['method']!r}", path)
    params = params_from_dict(obj, obj["d"], obj["p"], path)
    enc = obj.get("encoder") or {}
    trace = None
    if obj.get("trace"):
        tpath = Path(obj["trace"])
        if not tpath.is_absolute():
            tpath = Path(path).parent / tpath
        if tpath.exists():
            trace = LossTrace.from_csv(tpath.read_text())
    return FitResult(
        method=obj["method"], params=params, n=obj["n"], d=obj["d"], p=obj["p"],
        seconds=float(obj.get("seconds", 0.0)), scheme=obj.get("scheme"),
        nu=np.array(enc["nu"]) if "nu" in enc else None,
        encoder=enc.get("config"), trace=trace,
        converged=bool(obj.get("converged", False)), epochs=int(obj.get("epochs", 0)),
        steps=int(obj.get("steps", 0)), clamped_per_epoch=list(obj.get("clamped_per_epoch", [])),
        metrics=dict(obj.get("metrics") or {}), config=dict(obj.get("config") or {}),
        extra=dict(obj.get("extra") or {}),
    )


def write_trace(path, trace: LossTrace):
    _atomic_write(path, trace.to_csv())
