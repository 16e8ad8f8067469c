"""Command line harness: ``idcwh {make-data,train,encode,eval,sweep}``.

Settings are layered: TrainConfig defaults, then the preset's settings when
``--data preset:NAME`` is used, then ``--config FILE``, then explicit flags.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import plotting
from .core import ConfigError, TrainConfig, n_words, parse_config_value, read_config_file, validate_config, write_config_file
from .data import DataError, Dataset, load_any, save_features
from .encoder import CheckpointError, encode_binary, load_checkpoint, save_checkpoint
from .experiment import evaluate_encoder, sweep_row
from .presets import PRESETS, get_preset
from .retrieval import CodeLengthError, RetrievalIndex, evaluate, load_codes, save_codes
from .trainer import DivergenceError, train

EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_DIVERGED = 5

log = logging.getLogger("idcwh")

LOG_COLUMNS = ("epoch", "l1", "l2", "quant", "total", "lr_encoder", "lr_centers")
SWEEP_COLUMNS = ("index", "sigma_sq", "beta", "gamma", "code_length", "seed", "variant",
                 "map", "p_at_h2", "r_at_h2", "dwdb", "status", "error")
CONFIG_FIELDS = [f.name for f in dataclasses.fields(TrainConfig)]


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def resolve_data(spec: str):
    """``(dataset, preset or None)`` from a file path or ``preset:NAME``."""
    if spec.startswith("preset:"):
        try:
            preset = get_preset(spec.split(":", 1)[1])
        except KeyError as exc:
            raise CliError(str(exc.args[0]), EXIT_DATA) from None
        return preset.dataset(), preset
    try:
        return load_any(spec), None
    except (OSError, DataError) as exc:
        raise CliError(f"{spec}: {exc}", EXIT_DATA) from None


def resolve_config(args, preset=None) -> TrainConfig:
    base = TrainConfig(**preset.config) if preset else TrainConfig()
    try:
        if getattr(args, "config", None):
            base = read_config_file(args.config, base)
        overrides = {}
        for name in CONFIG_FIELDS:
            raw = getattr(args, name, None)
            if raw is not None:
                overrides[name] = parse_config_value(name, raw)
        return validate_config(base.replace(**overrides))
    except (ConfigError, OSError) as exc:
        raise CliError(f"config error: {exc}", EXIT_CONFIG) from None


def protocol_of(args, preset):
    if preset is not None:
        return dict(train_in_database=preset.train_in_database, self_retrieval=preset.self_retrieval)
    return dict(train_in_database=args.train_in_database, self_retrieval=args.self_retrieval)


def write_train_outputs(out: Path, cfg: TrainConfig, state, plots=True):
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.idcp", state.encoder, state.centers.mu)
    write_config_file(cfg, out / "config.txt")
    final = dataclasses.asdict(state.history[-1]) if state.history else None
    (out / "final_loss.json").write_text(json.dumps({"variant": cfg.variant, "final": final}, indent=2) + "\n")
    if plots and state.history:
        plotting.plot_loss_history(state.history, out / "loss.png")


def _fmt(v):
    return repr(float(v))


def cmd_make_data(args):
    preset = get_preset(args.preset)
    save_features(preset.dataset(args.data_seed), args.out)
    print(f"wrote {args.out}")


def cmd_train(args):
    ds, preset = resolve_data(args.data)
    cfg = resolve_config(args, preset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.tsv"
    with open(log_path, "w") as fh:
        fh.write(f"# variant={cfg.variant} theta_mode={cfg.theta_mode.value} seed={cfg.seed}\n")
        fh.write("\t".join(LOG_COLUMNS) + "\n")

        def on_epoch(epoch, b, lrs):
            fh.write("\t".join([str(epoch), *map(_fmt, (b.l1, b.l2, b.quant, b.total, *lrs))]) + "\n")
            fh.flush()

        try:
            state = train(ds, cfg, on_epoch=on_epoch)
        except DivergenceError as exc:
            fh.write(f"# diverged epoch={exc.epoch} iteration={exc.iteration}\n")
            raise CliError(str(exc), EXIT_DIVERGED) from None
        except ValueError as exc:
            raise CliError(f"{args.data}: {exc}", EXIT_DATA) from None
    write_train_outputs(out, cfg, state, plots=not args.no_plots)
    if state.history:
        print(f"{cfg.variant}: final total loss {state.history[-1].total:.6g}")
    print(f"wrote {out / 'checkpoint.idcp'}")


def cmd_encode(args):
    ds, preset = resolve_data(args.data)
    try:
        params, _ = load_checkpoint(args.checkpoint)
    except (OSError, CheckpointError) as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    if params.sizes[0] != ds.dim:
        raise CliError(f"checkpoint expects {params.sizes[0]}-dim features, data has {ds.dim}", EXIT_DATA)
    tid = args.train_in_database or (preset is not None and preset.train_in_database)
    ids = ds.indices(args.split, train_in_database=tid)
    w = n_words(params.code_length)
    codes = encode_binary(params, ds.features[ids]) if len(ids) else np.zeros((0, w), np.uint64)
    save_codes(args.out, codes.reshape(len(ids), w), ds.labels[ids], params.code_length)
    print(f"wrote {len(ids)} codes to {args.out}")


def _load_codes(path):
    try:
        return load_codes(path)
    except (OSError, ValueError) as exc:
        raise CliError(str(exc), EXIT_DATA) from None


def write_report(report, out: Path, plots=True):
    out.mkdir(parents=True, exist_ok=True)
    report.to_json(out / "metrics.json")
    report.to_csv(out / "metrics.csv")
    if plots:
        plotting.plot_pr_curve(report, out / "pr_curve.png")
        plotting.plot_precision_at_n(report, out / "precision_at_n.png")


def cmd_eval(args):
    q_codes, q_labels, q_len = _load_codes(args.query)
    d_codes, d_labels, d_len = _load_codes(args.database)
    if q_len != d_len:
        raise CliError(f"code length mismatch: query {q_len} vs database {d_len}", EXIT_DATA)
    if q_labels.shape[1] != d_labels.shape[1]:
        raise CliError("query and database label spaces differ", EXIT_DATA)
    n_list = [int(v) for v in args.n_list.split(",")] if args.n_list else None
    try:
        index = RetrievalIndex(d_codes, d_labels, d_len)
        report = evaluate(q_codes, q_labels, index, n_list=n_list, radius=args.radius,
                          top_k=args.top_k, exclude_self=args.exclude_self)
    except (ValueError, CodeLengthError) as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    write_report(report, Path(args.out), plots=not args.no_plots)
    print(f"MAP={report.map:.4f} P@H{args.radius}={report.p_at_h2:.4f} "
          f"R@H{args.radius}={report.r_at_h2:.4f} dw/db={report.dwdb:.4f}")


def parse_grid(spec: str) -> dict:
    """``"sigma_sq=0.5,1,2;beta=0.01"`` (or a file with one ``key=v1,v2`` per line)."""
    if os.path.exists(spec):
        spec = ";".join(Path(spec).read_text().splitlines())
    grid = {}
    for part in spec.split(";"):
        part = part.split("#", 1)[0].strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"grid entry {part!r}: expected key=v1,v2,...")
        key, values = (s.strip() for s in part.split("=", 1))
        if key == "hidden_sizes":
            raise ConfigError("hidden_sizes cannot be swept")
        grid[key] = [parse_config_value(key, v) for v in values.split(",") if v.strip()]
        if not grid[key]:
            raise ConfigError(f"grid entry {key!r} has no values")
    if not grid:
        raise ConfigError("empty grid")
    return grid


def grid_points(base: TrainConfig, grid: dict):
    keys = list(grid)
    for i, combo in enumerate(itertools.product(*(grid[k] for k in keys))):
        changes = dict(zip(keys, combo))
        changes.setdefault("seed", base.seed + i)
        yield i, base.replace(**changes)


def _run_sweep_point(item):
    index, cfg, ds, protocol = item
    row = {"index": index, **{k: getattr(cfg, k) for k in ("sigma_sq", "beta", "gamma", "code_length", "seed")},
           "variant": cfg.variant, "status": "ok", "error": ""}
    try:
        state = train(ds, validate_config(cfg))
        report = evaluate_encoder(state.encoder, ds, **protocol)
        row.update(sweep_row(cfg, report))
    except (DivergenceError, ValueError, ConfigError) as exc:
        row.update(status="failed", error=str(exc), map="", p_at_h2="", r_at_h2="", dwdb="")
    return row


def run_sweep(ds: Dataset, base: TrainConfig, grid: dict, protocol: dict, workers: int = 1):
    items = [(i, cfg, ds, protocol) for i, cfg in grid_points(base, grid)]
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_sweep_point, items))
    else:
        rows = [_run_sweep_point(it) for it in items]
    return sorted(rows, key=lambda r: r["index"])


def thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("IDCWH_THREADS", "1")))
    except ValueError:
        return 1


def cmd_sweep(args):
    ds, preset = resolve_data(args.data)
    base = resolve_config(args, preset)
    try:
        grid = parse_grid(args.grid)
    except ConfigError as exc:
        raise CliError(f"config error: {exc}", EXIT_CONFIG) from None
    workers = min(args.jobs or thread_cap(), thread_cap())
    rows = run_sweep(ds, base, grid, protocol_of(args, preset), workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    if not args.no_plots:
        for key in grid:
            if key in ("sigma_sq", "beta", "gamma", "code_length") and len(grid[key]) > 1:
                group = "code_length" if key != "code_length" else "gamma"
                plotting.plot_sweep(rows, key, out / f"sweep_{key}.png", group=group)
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} grid points, {failed} failed; wrote {out / 'sweep.csv'}")


def _add_config_flags(p):
    p.add_argument("--config", help="key=value config file")
    g = p.add_argument_group("training settings (override the config file)")
    for name in CONFIG_FIELDS:
        g.add_argument("--" + name.replace("_", "-"), dest=name, metavar="V")


def _add_protocol_flags(p):
    p.add_argument("--train-in-database", action="store_true",
                   help="add training samples to the retrieval database")
    p.add_argument("--self-retrieval", action="store_true",
                   help="rank the training set against itself, excluding each query")


def build_parser():
    parser = argparse.ArgumentParser(prog="idcwh", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="write a bundled preset dataset to an IDCW file")
    p.add_argument("preset", choices=sorted(PRESETS))
    p.add_argument("out")
    p.add_argument("--data-seed", type=int, default=100)
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("train", help="train an encoder and class centers")
    p.add_argument("--data", required=True, help="IDCW/CSV file or preset:NAME")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-plots", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="write packed codes for one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="database", choices=["train", "query", "database", "all"])
    p.add_argument("--train-in-database", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("eval", help="retrieval metrics for query codes against database codes")
    p.add_argument("--query", required=True)
    p.add_argument("--database", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-list", help="comma-separated P@N cutoffs")
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--top-k", type=int, help="truncate MAP at this rank")
    p.add_argument("--exclude-self", action="store_true",
                   help="query file equals database file; drop each query's own entry")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train and evaluate over a hyperparameter grid")
    p.add_argument("--data", required=True)
    p.add_argument("--grid", required=True, help="'sigma_sq=0.5,1,2;beta=0.01' or a grid file")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, help="worker processes (capped by IDCWH_THREADS)")
    p.add_argument("--no-plots", action="store_true")
    _add_protocol_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CliError as exc:
        print(f"idcwh {args.command}: {exc}", file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
