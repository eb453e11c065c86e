"""Command-line entry point: ``linkmerge {fit,fit-sep,simulate,eval,experiment}``.

Input CSVs need a header row; the first column is ``value`` and every other
column is a context coordinate named ``cat_*`` (categorical) or ``num_*``
(numeric).  Every output embeds the resolved configuration: CSVs on a first
``# config: {...}`` line, JSON summaries under ``"config"``.  Either can be
passed back through ``--config`` to reproduce the run.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .deconvolution import DeconvConfig
from .distributions import NoiseSpec
from .linkfit import match_merge
from .matching import CATEGORICAL, NUMERIC, Dataset, group_exact, group_near
from .separable import match_merge_sep
from .simlab import (
    H_FAMILIES,
    SimConfig,
    evaluate_table,
    results_csv,
    run_grid_experiment,
    run_misspecified,
    simulate,
    simulate_holdout,
)

log = logging.getLogger("linkmerge")

EXIT_SCHEMA = 1
EXIT_NO_CONTEXT = 2
EXIT_NUMERIC = 3

CONFIG_PREFIX = "# config: "

DEFAULTS = {
    "noise": "dirac",
    "sigma": None,
    "range": None,
    "scale": None,
    "nu": None,
    "tau": None,
    "freq_max": None,
    "n_freq": 1024,
    "n_x": 512,
    "delta": 0.05,
    "psi": None,
    "seed": 0,
    "decreasing": False,
    "upsilon": None,
    # simulate / experiment
    "h_family": "power_abs",
    "m": 1000,
    "n": 1000,
    "x_lo": -5.0,
    "x_hi": 5.0,
    "holdout": 0,
    "kind": "grid",
    "sizes": "100,500,1000",
    "noises": "gaussian:0.1,gaussian:1,uniform:0.5,student:0.1:4",
    "noise_deconv": None,
    "repetitions": 20,
}

# execution details that never change results, so they stay out of outputs
NOT_EMBEDDED = {"out_dir", "threads", "config", "command", "func", "out"}


class SchemaError(ValueError):
    pass


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- config


def load_config(path) -> dict:
    """Read a JSON config, a JSON run summary or a CSV with an embedded config line."""
    text = Path(path).read_text()
    if text.startswith(CONFIG_PREFIX):
        return json.loads(text.splitlines()[0][len(CONFIG_PREFIX) :])
    data = json.loads(text)
    return data.get("config", data) if isinstance(data, dict) else {}


def resolve_config(args: argparse.Namespace, keys) -> dict:
    """Defaults < LINKMERGE_SEED < config file < command-line flags."""
    cfg = {k: DEFAULTS[k] for k in keys if k in DEFAULTS}
    env_seed = os.environ.get("LINKMERGE_SEED")
    if env_seed is not None and "seed" in cfg:
        cfg["seed"] = int(env_seed)
    if getattr(args, "config", None):
        file_cfg = load_config(args.config)
        cfg.update({k: v for k, v in file_cfg.items() if k in keys})
    for k in keys:
        v = getattr(args, k, None)
        if v is not None and v is not False:
            cfg[k] = v
    return cfg


def noise_from(cfg: dict, key: str = "noise") -> NoiseSpec:
    family = cfg[key]
    if family is None:
        return None
    if ":" in str(family):
        return NoiseSpec.parse(family)
    if family == "dirac":
        return NoiseSpec.dirac()
    if family == "gaussian":
        return NoiseSpec.gaussian(_required(cfg, "sigma", family))
    if family == "uniform":
        return NoiseSpec.uniform(_required(cfg, "range", family))
    if family == "student":
        return NoiseSpec.scaled_student(_required(cfg, "scale", family), _required(cfg, "nu", family))
    raise SchemaError(f"unknown noise family {family!r}")


def _required(cfg, key, family):
    if cfg.get(key) is None:
        raise SchemaError(f"--{key} is required for {family} noise")
    return float(cfg[key])


def deconv_from(cfg: dict) -> DeconvConfig:
    return DeconvConfig(tau=cfg["tau"], freq_max=cfg["freq_max"], n_freq=int(cfg["n_freq"]), n_x=int(cfg["n_x"]))


def embedded(cfg: dict) -> dict:
    return {k: v for k, v in sorted(cfg.items()) if k not in NOT_EMBEDDED}


# ---------------------------------------------------------------- io


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(cfg: dict, header, rows) -> str:
    buf = io.StringIO()
    buf.write(CONFIG_PREFIX + json.dumps(embedded(cfg), sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _data_lines(path):
    with open(path, newline="") as fh:
        return [line for line in fh if not line.startswith("#")]


def read_dataset(path) -> Dataset:
    """Parse a ``value[,cat_*|num_*...]`` CSV."""
    try:
        rows = list(csv.reader(_data_lines(path)))
    except OSError as exc:
        raise SchemaError(f"{path}: {exc}") from None
    if not rows:
        raise SchemaError(f"{path}: missing header row")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "value":
        raise SchemaError(f"{path}: first column must be 'value'")
    kinds = []
    for name in header[1:]:
        if name.startswith("cat_"):
            kinds.append(CATEGORICAL)
        elif name.startswith("num_"):
            kinds.append(NUMERIC)
        else:
            raise SchemaError(f"{path}: context column {name!r} must be prefixed cat_ or num_")
    body = [r for r in rows[1:] if r]
    if not body:
        raise SchemaError(f"{path}: no data rows")
    values, cols = [], [[] for _ in kinds]
    for lineno, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(r)}")
        try:
            v = float(r[0])
            for j, kind in enumerate(kinds):
                cols[j].append(float(r[j + 1]) if kind == NUMERIC else r[j + 1].strip())
        except ValueError:
            raise SchemaError(f"{path}:{lineno}: unparsable number") from None
        if not math.isfinite(v) or any(k == NUMERIC and not math.isfinite(c[-1]) for k, c in zip(kinds, cols)):
            raise SchemaError(f"{path}:{lineno}: non-finite number")
        values.append(v)
    return Dataset(np.array(values), tuple(cols), tuple(kinds), tuple(header[1:]))


def read_table(path, columns) -> np.ndarray:
    rows = list(csv.reader(_data_lines(path)))
    if not rows:
        raise SchemaError(f"{path}: missing header row")
    header = [h.strip() for h in rows[0]]
    try:
        idx = [header.index(c) for c in columns]
        return np.array([[float(r[i]) for i in idx] for r in rows[1:] if r], dtype=float).reshape(-1, len(columns))
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from None


# ---------------------------------------------------------------- commands

FIT_KEYS = ("x_csv", "y_csv", "noise", "sigma", "range", "scale", "nu", "tau", "freq_max", "n_freq", "n_x",
            "delta", "psi", "seed", "decreasing")


def _load_pair(cfg):
    dx, dy = read_dataset(cfg["x_csv"]), read_dataset(cfg["y_csv"])
    if dx.names != dy.names:
        raise SchemaError(f"context columns differ: {list(dx.names)} vs {list(dy.names)}")
    return dx, dy


def _link_rows(est, key_repr):
    lo = est.band_lo if est.band_lo is not None else [math.nan] * est.u_grid.size
    hi = est.band_hi if est.band_hi is not None else [math.nan] * est.u_grid.size
    for u, h, a, b in zip(est.u_grid, est.h_hat, lo, hi):
        yield key_repr, u, h, a, b


LINK_HEADER = ("group_key", "u", "h_hat", "band_lo", "band_hi")


def _key_repr(key) -> str:
    return "all" if key == () else "|".join(_fmt_key(k) for k in key)


def _fmt_key(k):
    return repr(k) if isinstance(k, float) else str(k)


def cmd_fit(args) -> int:
    cfg = resolve_config(args, FIT_KEYS + ("upsilon",))
    out_dir = Path(args.out_dir)
    dx, dy = _load_pair(cfg)
    noise = noise_from(cfg)
    if cfg["upsilon"] is not None:
        centers = sorted(set(dx.row_keys()))
        groups = group_near(dx, dy, centers, float(cfg["upsilon"]))
    else:
        groups = group_exact(dx, dy)
    if len(groups) == 0:
        raise CliError("no context value is shared by the two datasets", EXIT_NO_CONTEXT)
    result = match_merge(groups, noise, deconv_from(cfg), float(cfg["delta"]), cfg["psi"],
                         decreasing=bool(cfg["decreasing"]), workers=args.threads)
    rows = [row for est in result.estimates for row in _link_rows(est, _key_repr(est.group_key))]
    write_atomic(out_dir / "link.csv", csv_text(cfg, LINK_HEADER, rows))
    summary = {
        "config": embedded(cfg),
        "groups_fitted": [_key_repr(e.group_key) for e in result.estimates],
        "groups_skipped": {_key_repr(k): v for k, v in result.skipped.items()},
        "groups_failed": {_key_repr(k): v for k, v in result.failed.items()},
        "matching": {
            "upsilon": groups.upsilon,
            "dropped_x": {_key_repr(k): v for k, v in groups.dropped_x.items()},
            "dropped_y": {_key_repr(k): v for k, v in groups.dropped_y.items()},
        },
        "diagnostics": {_key_repr(e.group_key): e.diagnostics for e in result.estimates},
    }
    write_atomic(out_dir / "summary.json", json_text(summary))
    if result.failed:
        raise CliError("; ".join(result.failed.values()), EXIT_NUMERIC)
    return 0


def cmd_fit_sep(args) -> int:
    cfg = resolve_config(args, FIT_KEYS)
    out_dir = Path(args.out_dir)
    dx, dy = _load_pair(cfg)
    if any(k != NUMERIC for k in dx.kinds):
        raise SchemaError("fit-sep needs numeric (num_*) context columns only")
    noise = noise_from(cfg)
    try:
        fit = match_merge_sep(dx, dy, noise, deconv_from(cfg), float(cfg["delta"]), cfg["psi"],
                              decreasing=bool(cfg["decreasing"]))
    except ValueError as exc:
        if "collinear" in str(exc) or "rows" in str(exc):
            raise CliError(f"regression failed: {exc}", EXIT_NUMERIC) from None
        raise CliError(f"group 'all': {exc}", EXIT_NUMERIC) from None
    except ArithmeticError as exc:
        raise CliError(f"group 'all': {exc}", EXIT_NUMERIC) from None
    est = fit.estimate
    write_atomic(out_dir / "link.csv", csv_text(cfg, LINK_HEADER, _link_rows(est, "all")))
    summary = {
        "config": embedded(cfg),
        "groups_fitted": ["all"],
        "model_x": fit.model_x.to_dict(),
        "model_y": fit.model_y.to_dict(),
        "context_columns": list(dx.names),
        "diagnostics": est.diagnostics,
    }
    write_atomic(out_dir / "summary.json", json_text(summary))
    return 0


SIM_KEYS = ("h_family", "m", "n", "x_lo", "x_hi", "noise", "sigma", "range", "scale", "nu", "seed", "holdout")


def cmd_simulate(args) -> int:
    cfg = resolve_config(args, SIM_KEYS)
    out_dir = Path(args.out_dir)
    if cfg["h_family"] not in H_FAMILIES or cfg["h_family"] == "table":
        raise SchemaError(f"invalid h_family {cfg['h_family']!r}")
    sim = SimConfig(int(cfg["m"]), int(cfg["n"]), cfg["h_family"], None, float(cfg["x_lo"]), float(cfg["x_hi"]),
                    noise_from(cfg), seed=int(cfg["seed"]))
    data = simulate(sim)
    write_atomic(out_dir / "x.csv", csv_text(cfg, ("value",), ([v] for v in data.dx.values)))
    write_atomic(out_dir / "y.csv", csv_text(cfg, ("value",), ([v] for v in data.dy.values)))
    write_atomic(out_dir / "truth.csv", csv_text(cfg, ("x", "h"), zip(data.truth.x, data.truth.h)))
    if int(cfg["holdout"]) > 0:
        hold = simulate_holdout(sim, int(cfg["holdout"]))
        write_atomic(out_dir / "holdout.csv", csv_text(cfg, ("x", "y"), hold.tolist()))
    return 0


def cmd_eval(args) -> int:
    table = list(csv.reader(_data_lines(args.link_csv)))
    if not table or [h.strip() for h in table[0][:3]] != list(LINK_HEADER[:3]):
        raise SchemaError(f"{args.link_csv}: not a link CSV")
    rows = [r for r in table[1:] if r]
    keys = sorted({r[0] for r in rows})
    key = args.group
    if key is None:
        if len(keys) != 1:
            raise SchemaError(f"link CSV holds several groups {keys}; pick one with --group")
        key = keys[0]
    sel = [r for r in rows if r[0] == key]
    if not sel:
        raise SchemaError(f"group {key!r} not in link CSV")
    u = np.array([float(r[1]) for r in sel])
    h = np.array([float(r[2]) for r in sel])
    holdout = read_table(args.holdout_csv, ("x", "y"))
    report = evaluate_table(u, h, holdout)
    text = json_text({"group_key": key, **report.to_dict()})
    if args.out:
        write_atomic(Path(args.out), text)
    sys.stdout.write(text)
    return 0


EXP_KEYS = ("kind", "sizes", "noises", "noise_deconv", "h_family", "repetitions", "seed", "x_lo", "x_hi",
            "tau", "freq_max", "n_freq", "n_x")


def cmd_experiment(args) -> int:
    cfg = resolve_config(args, EXP_KEYS)
    out_dir = Path(args.out_dir)
    if cfg["h_family"] not in H_FAMILIES or cfg["h_family"] == "table":
        raise SchemaError(f"invalid h_family {cfg['h_family']!r}")
    noises = [NoiseSpec.parse(s) for s in str(cfg["noises"]).split(",") if s]
    sizes = [int(s) for s in str(cfg["sizes"]).split(",") if s]
    deconv = deconv_from(cfg)
    reps, seed = int(cfg["repetitions"]), int(cfg["seed"])
    if cfg["kind"] == "grid":
        cells = run_grid_experiment([(s, s) for s in sizes], noises, cfg["h_family"], reps, seed,
                                    (float(cfg["x_lo"]), float(cfg["x_hi"])), deconv, workers=args.threads)
        text = results_csv(cells)
        write_atomic(out_dir / "results.csv", CONFIG_PREFIX + json.dumps(embedded(cfg), sort_keys=True) + "\n" + text)
        return 0
    if cfg["kind"] != "misspecified":
        raise SchemaError(f"unknown experiment kind {cfg['kind']!r}")
    if not cfg["noise_deconv"]:
        raise SchemaError("--noise-deconv is required for the misspecified experiment")
    wrong = NoiseSpec.parse(cfg["noise_deconv"])
    summary = {"config": embedded(cfg), "cells": []}
    rows = []
    for size in sizes:
        for noise in noises:
            sim = SimConfig(size, size, cfg["h_family"], None, float(cfg["x_lo"]), float(cfg["x_hi"]), noise, wrong,
                            seed)
            rep = run_misspecified(sim, reps, deconv)
            summary["cells"].append({
                "m": size, "n": size, "noise_true": rep.noise_true, "noise_deconv": rep.noise_deconv,
                "median_mse_correct": rep.median_correct, "median_mse_wrong": rep.median_wrong,
                "all_monotone": rep.all_monotone, "all_finite": rep.all_finite,
            })
            rows += [(size, rep.noise_true, rep.noise_deconv, r["rep"], r["mse_correct"], r["mse_wrong"])
                     for r in rep.rows()]
    header = ("n", "noise_true", "noise_deconv", "rep", "mse_correct", "mse_wrong")
    write_atomic(out_dir / "misspecified.csv", csv_text(cfg, header, rows))
    write_atomic(out_dir / "summary.json", json_text(summary))
    return 0


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_SCHEMA, f"{self.prog}: error: {message}\n")


def _noise_flags(p, prefix=""):
    p.add_argument("--noise", help="dirac | gaussian | uniform | student, or compact form like gaussian:0.1")
    p.add_argument("--sigma", type=float, help="gaussian standard deviation")
    p.add_argument("--range", type=float, help="uniform half-range a of U([-a, a])")
    p.add_argument("--scale", type=float, help="student multiplier")
    p.add_argument("--nu", type=float, help="student degrees of freedom")


def _deconv_flags(p):
    p.add_argument("--tau", type=float, help="Fourier truncation threshold (default n^-1/2, 0 for dirac)")
    p.add_argument("--freq-max", dest="freq_max", type=float, help="largest frequency divided by the noise CF")
    p.add_argument("--n-freq", dest="n_freq", type=int, help="DFT length (default 1024)")
    p.add_argument("--n-x", dest="n_x", type=int, help="evaluation grid size (default 512)")


def _common(p):
    p.add_argument("--config", help="JSON config, or a previous output carrying an embedded config")
    p.add_argument("--seed", type=int, help="random seed (default $LINKMERGE_SEED or 0)")
    p.add_argument("--out-dir", dest="out_dir", default=".", help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads; never changes the output")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="linkmerge", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, func, help_ in (("fit", cmd_fit, "fit one link per shared context value"),
                              ("fit-sep", cmd_fit_sep, "regress out numeric context, then fit one link")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("x_csv", nargs="?")
        p.add_argument("y_csv", nargs="?")
        _noise_flags(p)
        _deconv_flags(p)
        _common(p)
        p.add_argument("--delta", type=float, help="confidence parameter of the bands (default 0.05)")
        p.add_argument("--psi", type=float, help="deconvolution error for the bands (default: indicative rate)")
        p.add_argument("--decreasing", action="store_true", default=None, help="fit a non-increasing link")
        if name == "fit":
            p.add_argument("--upsilon", type=float, help="match contexts within this radius instead of exactly")
        p.set_defaults(func=func)

    p = sub.add_parser("simulate", help="write a synthetic x.csv / y.csv / truth.csv")
    p.add_argument("--h-family", dest="h_family", help=f"one of {', '.join(H_FAMILIES[:-1])}")
    p.add_argument("--m", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--x-lo", dest="x_lo", type=float)
    p.add_argument("--x-hi", dest="x_hi", type=float)
    p.add_argument("--holdout", type=int, help="also write this many paired (x, y) rows to holdout.csv")
    _noise_flags(p)
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", help="holdout MSE and risk of a fitted link")
    p.add_argument("link_csv")
    p.add_argument("holdout_csv")
    p.add_argument("--group", help="group_key to evaluate when the link CSV holds several")
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="repeated simulations: grid or misspecified")
    p.add_argument("--kind", choices=("grid", "misspecified"))
    p.add_argument("--sizes", help="comma-separated m=n values")
    p.add_argument("--noises", help="comma-separated compact noise specs")
    p.add_argument("--noise-deconv", dest="noise_deconv", help="deconvolution noise for --kind misspecified")
    p.add_argument("--h-family", dest="h_family")
    p.add_argument("--repetitions", type=int)
    p.add_argument("--x-lo", dest="x_lo", type=float)
    p.add_argument("--x-hi", dest="x_hi", type=float)
    _deconv_flags(p)
    _common(p)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command in ("fit", "fit-sep"):
        cfg_src = load_config(args.config) if args.config else {}
        args.x_csv = args.x_csv or cfg_src.get("x_csv")
        args.y_csv = args.y_csv or cfg_src.get("y_csv")
        if not (args.x_csv and args.y_csv):
            parser.error("x_csv and y_csv are required (as arguments or in --config)")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"linkmerge: {exc}", file=sys.stderr)
        return exc.code
    except (SchemaError, OSError) as exc:
        print(f"linkmerge: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (ValueError, ArithmeticError) as exc:
        print(f"linkmerge: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if args.command in ("fit", "fit-sep") else EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
