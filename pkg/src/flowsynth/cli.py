"""Command line entry point: ``flowsynth <command> [options]``.

Every option can also come from a JSON config file (``--config`` or the
``FLOWSYNTH_CONFIG`` environment variable) using the option name with
underscores as the key; flags given on the command line win.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation, simdata, tasks
from .baselines import BnModel, GmmModel, fit_bn, fit_gmm
from .checkpoint import BN_MAGIC, GMM_MAGIC, STAN_MAGIC, CheckpointError, peek_magic
from .model import StanConfig, StanModel
from .schema import AttributeSchema, infer_schema, read_frame, write_frame

log = logging.getLogger("flowsynth")

CONFIG_ENV = "FLOWSYNTH_CONFIG"
MODELS = ("stan-a", "stan-b", "gmm", "bn")


class ConfigError(Exception):
    pass


# --------------------------------------------------------------------------- helpers

def _path(p, what, must_exist=True) -> Path:
    if p is None:
        raise ConfigError(f"missing {what}")
    p = Path(p)
    if must_exist and not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _out_path(p, what) -> Path:
    p = _path(p, what, must_exist=False)
    if p.parent and not p.parent.exists():
        raise ConfigError(f"directory for {what} does not exist: {p.parent}")
    return p


def _schema(args, k=None) -> AttributeSchema:
    if args.schema is None:
        return AttributeSchema.netflow(k=k or 10)
    schema = AttributeSchema.load(_path(args.schema, "schema file"))
    return schema if k is None else AttributeSchema(schema.attributes, schema.generation_order, k)


def load_model(path):
    path = _path(path, "checkpoint")
    magic = peek_magic(path)
    if magic == STAN_MAGIC:
        return StanModel.load(path)
    if magic == GMM_MAGIC:
        return GmmModel.load(path)
    if magic == BN_MAGIC:
        return BnModel.load(path)
    raise CheckpointError(f"{path}: not a checkpoint (bad magic {magic!r})")


def _write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------- commands

def cmd_train(args) -> int:
    if args.model not in MODELS:
        raise ConfigError(f"--model must be one of {MODELS}")
    data = _path(args.data, "training data")
    out = _out_path(args.out, "checkpoint output (--out)")
    schema = _schema(args, args.k)
    frame, report = read_frame(data, schema, on_error=args.on_error)
    if args.max_rows:
        frame = frame.iloc[:args.max_rows].reset_index(drop=True)
    log.info("read %d rows from %s", len(frame), data)
    if args.model.startswith("stan"):
        cfg = StanConfig(mask=args.model[-1].upper(), k=schema.k, components=args.components, trunk=args.trunk,
                         epochs=args.epochs, patience=args.patience, batch_size=args.batch_size,
                         seed=args.seed, threads=args.threads)

        def progress(col, epoch, tr, va):
            log.info("%-5s epoch %3d  train %.4f  validation %.4f", col, epoch, tr, va)

        model = StanModel.train(frame, schema, cfg, time_format=report.time_format, progress=progress)
        training = {"model": args.model, "config": cfg.to_dict(), "rows": len(frame),
                    "epochs": model.log.epochs, "best_epoch": model.log.best_epoch}
    elif args.model == "gmm":
        model = fit_gmm(frame, schema, args.components, report.time_format)
        training = {"model": "gmm", "rows": len(frame), "components": args.components}
    else:
        model = fit_bn(frame, schema, args.bn_child, args.bn_parent, args.components,
                       time_format=report.time_format)
        training = {"model": "bn", "rows": len(frame), "components": args.components,
                    "child": args.bn_child, "parent": args.bn_parent, "cells": len(model.cells)}
    model.save(out)
    _write_json(training, args.log or f"{out}.log.json")
    log.info("wrote %s", out)
    return 0


def cmd_generate(args) -> int:
    if (args.rows is None) == (args.horizon is None):
        raise ConfigError("give exactly one of --rows and --horizon")
    if args.rows is not None and args.rows < 0:
        raise ConfigError("--rows must be >= 0")
    out = _out_path(args.out, "output CSV (--out)")
    model = load_model(args.checkpoint)
    if args.schema is not None and _schema(args).to_dict()["attributes"] != model.schema.to_dict()["attributes"]:
        raise ConfigError("the given schema does not match the checkpoint's schema")
    frame = model.generate(np.random.default_rng(args.seed), rows=args.rows, horizon=args.horizon)
    write_frame(frame, out, model.schema, model.time_format)
    log.info("wrote %d rows to %s", len(frame), out)
    return 0


def cmd_evaluate(args) -> int:
    real_path = _path(args.real, "real data (--real)")
    synth_path = _path(args.synthetic, "synthetic data (--synthetic)")
    out = _out_path(args.out, "report output (--out)")
    model = load_model(args.checkpoint) if args.checkpoint else None
    schema = model.schema if model is not None and args.schema is None else _schema(args)
    real, _ = read_frame(real_path, schema)
    synth, _ = read_frame(synth_path, schema)
    train = read_frame(_path(args.train, "training data (--train)"), schema)[0] if args.train else None
    report, hists = evaluation.evaluate(real, synth, schema, density=model, train=train)
    report["inputs"] = {"real": real_path.name, "synthetic": synth_path.name}
    evaluation.write_report(report, out)
    if args.histograms:
        d = Path(args.histograms)
        d.mkdir(parents=True, exist_ok=True)
        for name, (hp, hq) in hists.items():
            evaluation.write_histogram_csv(d / f"hist_{name}.csv", hp, hq)
        if schema.is_netflow():
            evaluation.write_distribution_csv(d / "unique_peers.csv", evaluation.unique_ip_distribution(real),
                                              evaluation.unique_ip_distribution(synth))
            evaluation.write_distribution_csv(d / "byte_volume.csv", evaluation.byte_volume_distribution(real),
                                              evaluation.byte_volume_distribution(synth))
    log.info("wrote %s", out)
    return 0


def cmd_rules(args) -> int:
    data = _path(args.data, "data (--data)")
    frame, _ = read_frame(data, AttributeSchema.netflow())
    report = evaluation.run_domain_tests(frame, annotate=bool(args.annotate))
    doc = report.to_dict()
    doc["rows"] = len(frame)
    if args.out:
        _write_json(doc, _out_path(args.out, "report output (--out)"))
    else:
        json.dump(doc, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    if args.annotate:
        ann = frame.copy()
        ann["first_failed_test"] = report.first_failure   # 0: passed every applicable test
        ann.to_csv(_out_path(args.annotate, "annotation output"), index=False, lineterminator="\n")
    return 0


def cmd_tasks(args) -> int:
    real, _ = read_frame(_path(args.real, "real data (--real)"), AttributeSchema.netflow())
    synth_paths = [_path(p, "synthetic data (--synthetic)") for p in (args.synthetic or [])]
    out_dir = _path(args.out_dir, "output directory (--out-dir)", must_exist=False)
    out_dir.mkdir(parents=True, exist_ok=True)
    synth = [read_frame(p, AttributeSchema.netflow())[0] for p in synth_paths]
    if len(synth) == 1 and args.sets > 1:
        # one file: split into disjoint consecutive chunks, one per error-bar sample
        size = len(synth[0]) // args.sets
        synth = [synth[0].iloc[i * size:(i + 1) * size].reset_index(drop=True) for i in range(args.sets)]
    fractions = [float(f) for f in args.fractions]
    names = ("protocol", "bytes") if args.task == "both" else (args.task,)
    summary = {}
    for name in names:
        results = tasks.substitution_curve(real, synth, name, fractions, args.folds, args.seed, args.cap, args.lag)
        tasks.write_curve_csv(results, out_dir / f"curve_{name}.csv")
        summary[name] = [{"fraction": r.fraction, "metric": r.metric, "mean": r.value, "stddev": r.stddev,
                          "per_set": r.per_set, "per_fold": r.per_fold,
                          "residual_quantiles": r.residual_quantiles} for r in results]
    _write_json(summary, out_dir / "tasks.json")
    log.info("wrote task curves to %s", out_dir)
    return 0


def run_simulation(n=10000, seed=0, epochs=400, patience=30, k=10, components=10):
    """Simulated-process experiment: correlations and task MSEs per data source."""
    train = simdata.simulate(n, seed)
    test = simdata.simulate(n, seed + 1)
    schema = simdata.sim_schema(k)
    sources = {"real": train}
    for mask in ("A", "B"):
        cfg = StanConfig(mask=mask, k=k, components=components, trunk="naive", epochs=epochs,
                         patience=patience, seed=seed)
        model = StanModel.train(train.to_frame(), schema, cfg)
        sources[f"stan-{mask.lower()}"] = simdata.SimSeries.from_frame(
            model.generate(np.random.default_rng([seed, 1]), rows=n))
    gmm = fit_gmm(train.to_frame(), schema, components)
    sources["gmm"] = simdata.SimSeries.from_frame(gmm.generate(np.random.default_rng([seed, 2]), rows=n))
    report = {"n": n, "seed": seed, "epochs": epochs, "patience": patience, "sources": {}}
    for name, s in sources.items():
        t1, t2 = simdata.sim_tasks(s, test)
        report["sources"][name] = {**simdata.correlations(s), "mse_t1": t1, "mse_t2": t2}
    return report, sources


def cmd_simulate(args) -> int:
    out_dir = _path(args.out_dir, "output directory (--out-dir)", must_exist=False)
    out_dir.mkdir(parents=True, exist_ok=True)
    report, sources = run_simulation(args.n, args.seed, args.epochs, args.patience, args.k or 10, args.components)
    for name, s in sources.items():
        simdata.write_scatter(s, out_dir / f"scatter_{name}.csv")
    sources["real"].write_csv(out_dir / "simulated.csv")
    _write_json(report, out_dir / "simulate.json")
    for name, r in report["sources"].items():
        log.info("%-7s R(x_t,x_t-1)=%.3f R(x_t,y_t)=%.3f T1=%.4f T2=%.4f", name, r["r_xt_xt1"], r["r_xt_yt"],
                 r["mse_t1"], r["mse_t2"])
    return 0


def cmd_schema_infer(args) -> int:
    schema = infer_schema(_path(args.data, "data (--data)"), k=args.k or 10)
    if args.out:
        schema.save(_out_path(args.out, "schema output (--out)"))
    else:
        json.dump(schema.to_dict(), sys.stdout, indent=2)
        sys.stdout.write("\n")
    return 0


# --------------------------------------------------------------------------- parsing

DEFAULTS = {
    "model": "stan-b", "components": 10, "trunk": "desk", "epochs": 30, "patience": 5, "batch_size": 512,
    "seed": 0, "threads": 1, "on_error": "abort", "bn_child": "byt", "bn_parent": "pkt",
    "task": "both", "fractions": list(tasks.DEFAULT_FRACTIONS), "folds": 5, "sets": 5, "lag": 8, "n": 10000,
}
SIM_DEFAULTS = {"epochs": 400, "patience": 30}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flowsynth", description="synthetic netflow generation and evaluation")
    ap.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--schema")
        return p

    p = common(sub.add_parser("train", help="fit a generator or baseline"))
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--log", help="training log JSON (default: <out>.log.json)")
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--k", type=int)
    p.add_argument("--components", type=int)
    p.add_argument("--trunk", choices=("full", "desk", "naive"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-rows", type=int)
    p.add_argument("--on-error", choices=("abort", "skip"))
    p.add_argument("--bn-child")
    p.add_argument("--bn-parent")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("generate", help="sample synthetic flows from a checkpoint"))
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.add_argument("--rows", type=int)
    p.add_argument("--horizon", type=float, help="stop once this many seconds of traffic exist")
    p.set_defaults(func=cmd_generate)

    p = common(sub.add_parser("evaluate", help="compare synthetic flows with real ones"))
    p.add_argument("--real")
    p.add_argument("--synthetic")
    p.add_argument("--train", help="training CSV, widens the likelihood binning")
    p.add_argument("--checkpoint", help="score this model's likelihood on --real")
    p.add_argument("--out")
    p.add_argument("--histograms", help="directory for per-attribute histogram CSVs")
    p.set_defaults(func=cmd_evaluate)

    p = common(sub.add_parser("rules", help="run the flow sanity tests"))
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--annotate", help="write the input with a first_failed_test column")
    p.set_defaults(func=cmd_rules)

    p = common(sub.add_parser("tasks", help="downstream task substitution curves"))
    p.add_argument("--real")
    p.add_argument("--synthetic", nargs="+")
    p.add_argument("--out-dir")
    p.add_argument("--task", choices=("protocol", "bytes", "both"))
    p.add_argument("--fractions", nargs="+", type=float)
    p.add_argument("--folds", type=int)
    p.add_argument("--sets", type=int, help="split a single synthetic file into this many sets")
    p.add_argument("--cap", type=int, help="training rows per fold")
    p.add_argument("--lag", type=int)
    p.set_defaults(func=cmd_tasks)

    p = common(sub.add_parser("simulate", help="two-variable simulated experiment"))
    p.add_argument("--out-dir")
    p.add_argument("--n", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--components", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("schema", help="schema utilities")
    ssub = p.add_subparsers(dest="schema_command", required=True)
    q = ssub.add_parser("infer", help="guess a schema from a CSV")
    q.add_argument("--data")
    q.add_argument("--out")
    q.add_argument("--k", type=int)
    q.set_defaults(func=cmd_schema_infer)
    return ap


def _merge_config(args, parser_dests):
    path = args.config or os.environ.get(CONFIG_ENV)
    config = {}
    if path:
        try:
            with open(path) as fh:
                config = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(config, dict):
            raise ConfigError("config must be a JSON object")
        config = {k.replace("-", "_"): v for k, v in config.items()}
        unknown = sorted(set(config) - parser_dests)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
    defaults = dict(DEFAULTS)
    if args.command == "simulate":
        defaults.update(SIM_DEFAULTS)
    for key in parser_dests:
        if getattr(args, key, None) is None:
            setattr(args, key, config.get(key, defaults.get(key)))
    return args


def _dests(parser: argparse.ArgumentParser) -> set:
    out = set()
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sp in action.choices.values():
                out |= _dests(sp)
        elif action.dest not in ("help", "config", "verbose", "command", "schema_command", "func"):
            out.add(action.dest)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args = _merge_config(args, _dests(parser))
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        return args.func(args)
    except ConfigError as exc:
        print(f"flowsynth: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"flowsynth: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
