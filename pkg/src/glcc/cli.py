"""``glcc`` command-line entry point.

Every command accepts ``--config FILE`` (a JSON object), ``--set KEY=VALUE``
overrides (values parsed as JSON when possible) and dedicated flags, applied
in that order.  Each command writes its outputs plus ``config.resolved.json``,
the fully resolved configuration, into ``--out-dir``.

Errors print two lines to stderr, ``error=<kind> command=<name>`` followed by
a human-readable detail, and exit with 2 (configuration), 3 (data) or
4 (numerical).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .config import TrainConfig
from .container import dumps_json
from .data import (
    SplitSpec,
    SyntheticSpec,
    apply_split,
    encode_tokens,
    generate_synthetic,
    load_dataset,
    read_label_tokens,
    read_matrix,
    save_dataset,
)
from .errors import ConfigError, DataError, GLCCError
from .evaluation import (
    DEFAULT_FRACTIONS,
    DEFAULT_GRID,
    grid_search,
    score,
    sweep_labeled_fraction,
    write_summary,
)
from .graphs import build_graphs, load_graph_cache, save_graph_cache
from .model import load_model, predict_batch, save_model, train

log = logging.getLogger("glcc")

CONFIG_ECHO = "config.resolved.json"

# (flag, serialized key, type) for TrainConfig fields
TRAIN_FLAGS = (
    ("--lambda", "lambda", float),
    ("--gamma", "gamma", float),
    ("--r", "r", float),
    ("--k-graph", "k_graph", int),
    ("--k-hess", "k_hess", int),
    ("--intrinsic-dim", "intrinsic_dim", int),
    ("--w-large", "w_large", float),
    ("--max-iter", "max_iter", int),
    ("--tol", "tol", float),
    ("--seed", "seed", int),
    ("--metric", "metric", str),
)
TRAIN_KEYS = frozenset(TrainConfig().to_dict())
IO_OPTIONS = {"delimiter": ",", "header": False}

COMMAND_OPTIONS: dict[str, dict[str, Any]] = {
    "synth": {
        "n": 200, "m": 2, "c": 2, "noise": 0.1, "manifold": "arcs", "dims": None, "seed": 0,
        "n_test": 100, "labeled_fraction": 0.1,
    },
    "build-graphs": {},
    "train": {},
    "predict": {},
    "eval": {},
    "sweep": {"fractions": list(DEFAULT_FRACTIONS), "repeats": 5, "methods": ["glcc", "ridge"]},
    "grid": {
        "lambdas": list(DEFAULT_GRID), "gammas": list(DEFAULT_GRID),
        "labeled_fraction": 0.3, "grid_metric": "accuracy",
    },
}
# commands whose config includes the training hyper-parameters
USES_TRAIN_CONFIG = {"build-graphs", "train", "sweep", "grid"}


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _parse_set(text: str) -> tuple[str, Any]:
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise argparse.ArgumentTypeError(f"--set expects KEY=VALUE, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().replace("-", "_"), value


# ---------------------------------------------------------------- configuration


def _read_config_file(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: the config must be a JSON object")
    return data


def resolve(args: argparse.Namespace) -> tuple[TrainConfig | None, dict]:
    """Merge defaults, the config file, ``--set`` pairs and flags, in that order."""
    command = args.command
    merged: dict[str, Any] = {}
    if args.config:
        merged.update(_read_config_file(args.config))
    merged.update(dict(args.set or []))
    for key, value in vars(args).items():
        if key.startswith("opt_") and value is not None:
            merged[key[4:]] = value
    option_defaults = {**IO_OPTIONS, **COMMAND_OPTIONS[command]}
    if command == "synth":
        allowed = set(option_defaults)
    elif command in USES_TRAIN_CONFIG:
        allowed = set(option_defaults) | TRAIN_KEYS
    else:
        allowed = set(option_defaults)
    unknown = sorted(set(merged) - allowed)
    if unknown:
        raise ConfigError(f"unknown config key(s) for '{command}': {', '.join(unknown)}")
    options = {k: merged.get(k, v) for k, v in option_defaults.items()}
    config = None
    if command in USES_TRAIN_CONFIG:
        config = TrainConfig.from_dict({k: v for k, v in merged.items() if k in TRAIN_KEYS}, strict=True)
    return config, options


def _echo(out_dir: Path, args, config: TrainConfig | None, options: dict, inputs: dict, outputs: dict) -> None:
    resolved = {"command": args.command, "version": __version__, "options": options, "inputs": inputs, "outputs": outputs}
    if config is not None:
        resolved["train"] = config.to_dict()
    (out_dir / CONFIG_ECHO).write_text(dumps_json(resolved))


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args, options):
    return load_dataset(
        args.views,
        args.labels,
        delimiter=options["delimiter"],
        header=options["header"],
        truth_path=getattr(args, "truth", None),
    )


# ---------------------------------------------------------------- commands


def cmd_synth(args, config, options) -> int:
    out = _out_dir(args)
    n_train, n_test = int(options["n"]), int(options["n_test"])
    if n_test < 0:
        raise ConfigError(f"n_test must be >= 0, got {n_test}")
    spec = SyntheticSpec.from_dict({**options, "n": n_train + n_test})
    full = generate_synthetic(spec)
    train_part = apply_split(
        full.subset(np.arange(n_train)), SplitSpec(float(options["labeled_fraction"]), stratified=True, seed=spec.seed)
    )
    delim = options["delimiter"]
    outputs = {"train": save_dataset(train_part, out / "train", delimiter=delim)}
    if n_test:
        outputs["test"] = save_dataset(full.subset(np.arange(n_train, n_train + n_test)), out / "test", delimiter=delim)
    _echo(out, args, None, options, {}, outputs)
    print(f"wrote {n_train} training and {n_test} test samples to {out}")
    return 0


def cmd_build_graphs(args, config, options) -> int:
    out = _out_dir(args)
    Xs = [read_matrix(p, options["delimiter"], options["header"]) for p in args.views]
    names = [Path(p).stem for p in args.views]
    graphs = build_graphs(Xs, config, names if len(set(names)) == len(names) else None)
    path = out / "graphs.glcc"
    save_graph_cache(path, graphs)
    _echo(out, args, config, options, {"views": args.views}, {"graphs": str(path)})
    print(f"wrote graphs for {graphs.m} view(s), n={graphs.n} to {path}")
    return 0


def cmd_train(args, config, options) -> int:
    out = _out_dir(args)
    dataset = _load(args, options)
    outputs = {}
    if args.graphs:
        graphs = load_graph_cache(args.graphs, config, dataset.Xs)
    else:
        graphs = build_graphs(dataset.Xs, config, dataset.view_names)
        outputs["graphs"] = str(out / "graphs.glcc")
        save_graph_cache(outputs["graphs"], graphs)
    params, trace = train(dataset, graphs, config)
    outputs["model"] = str(out / "model.glcc")
    outputs["trace"] = str(out / "trace.csv")
    save_model(outputs["model"], params, config)
    Path(outputs["trace"]).write_text(trace.to_text())
    inputs = {"views": args.views, "labels": args.labels, "graphs": args.graphs}
    _echo(out, args, config, options, inputs, outputs)
    status = "converged" if trace.converged else "iteration cap"
    print(f"trained {trace.iterations} iteration(s) ({status}), objective {trace.objectives[-1]:.10g}")
    return 0


def cmd_predict(args, config, options) -> int:
    out = _out_dir(args)
    params, _ = load_model(args.model)
    if len(args.views) != params.m:
        raise DataError(f"the model has {params.m} view(s) but {len(args.views)} view file(s) were given")
    Zs = [read_matrix(p, options["delimiter"], options["header"]) for p in args.views]
    for i, (p, Z, d) in enumerate(zip(args.views, Zs, params.dims)):
        if Z.shape[1] != d:
            raise DataError(f"view {i} ({p}) has {Z.shape[1]} features, the model expects {d}")
    labels, scores = predict_batch(params, Zs)
    path = out / "predictions.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=options["delimiter"], lineterminator="\n")
        writer.writerow(["label", *params.class_names])
        for lab, row in zip(labels, scores):
            writer.writerow([params.class_names[lab], *(repr(float(v)) for v in row)])
    _echo(out, args, None, options, {"model": args.model, "views": args.views}, {"predictions": str(path)})
    print(f"wrote {labels.size} prediction(s) to {path}")
    return 0


def _read_predictions(path, delimiter) -> tuple[list[str], list[str], np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"predictions file not found: {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delimiter) if r]
    if len(rows) < 2 or rows[0][0] != "label":
        raise DataError(f"{path}: expected a 'label,<class...>' header followed by prediction rows")
    classes = rows[0][1:]
    tokens, scores = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(classes) + 1:
            raise DataError(f"{path}: row {lineno} has {len(row)} columns, expected {len(classes) + 1}")
        tokens.append(row[0])
        try:
            scores.append([float(v) for v in row[1:]])
        except ValueError:
            raise DataError(f"{path}: non-numeric score at row {lineno}") from None
    return classes, tokens, np.array(scores)


def cmd_eval(args, config, options) -> int:
    out = _out_dir(args)
    classes, tokens, scores = _read_predictions(args.predictions, options["delimiter"])
    labels, _ = encode_tokens(tokens, classes)
    truth, _ = encode_tokens(read_label_tokens(args.truth, len(tokens), options["delimiter"], options["header"]), classes)
    if np.any(truth < 0):
        raise DataError(f"{args.truth}: every evaluated sample needs a ground-truth class")
    report = score(labels, scores, truth)
    outputs = {"report": str(out / "report.json"), "summary": str(out / "report.glcc")}
    payload = {**report.to_dict(), "class_names": classes}
    Path(outputs["report"]).write_text(dumps_json(payload))
    write_summary(outputs["summary"], "eval", {"class_names": classes, "accuracy": report.accuracy, "map": report.map},
                  {"per_class_ap": report.per_class_ap, "confusion": report.confusion})
    _echo(out, args, None, options, {"predictions": args.predictions, "truth": args.truth}, outputs)
    print(f"accuracy {report.accuracy:.4f}  MAP {report.map:.4f}  (n={report.n_test})")
    return 0


def cmd_sweep(args, config, options) -> int:
    out = _out_dir(args)
    dataset = _load(args, options)
    table = sweep_labeled_fraction(
        dataset, options["fractions"], config, repeats=int(options["repeats"]), seed=config.seed,
        methods=tuple(options["methods"]),
    )
    outputs = {"table": str(out / "sweep.csv"), "summary": str(out / "sweep.glcc"), "traces": str(out / "traces")}
    Path(outputs["table"]).write_text(table.to_text())
    traces = Path(outputs["traces"])
    traces.mkdir(exist_ok=True)
    fraction_index = {f: i for i, f in enumerate(table.fractions)}
    for run in table.runs:
        if run.trace is not None:
            (traces / f"fraction{fraction_index[run.fraction]}_repeat{run.repeat}.csv").write_text(run.trace.to_text())
    runs = np.array([[fraction_index[r.fraction], r.repeat, table.methods.index(r.method), r.report.accuracy, r.report.map]
                     for r in table.runs])
    write_summary(outputs["summary"], "sweep", {"fractions": table.fractions, "methods": table.methods,
                                                 "run_columns": ["fraction_index", "repeat", "method_index", "accuracy", "map"]},
                  {"runs": runs})
    _echo(out, args, config, options, {"views": args.views, "labels": args.labels}, outputs)
    sys.stdout.write(table.to_text())
    return 0


def cmd_grid(args, config, options) -> int:
    out = _out_dir(args)
    dataset = _load(args, options)
    result = grid_search(
        dataset, options["lambdas"], options["gammas"], config, seed=config.seed,
        labeled_fraction=float(options["labeled_fraction"]), metric=options["grid_metric"],
    )
    outputs = {"table": str(out / "grid.csv"), "summary": str(out / "grid.glcc")}
    Path(outputs["table"]).write_text(result.to_text())
    lam, gam, value = result.best
    write_summary(outputs["summary"], "grid", {"lambdas": result.lambdas, "gammas": result.gammas, "metric": result.metric,
                                                "best": {"lambda": lam, "gamma": gam, "value": value}},
                  {"cells": result.cells})
    inputs = {"views": args.views, "labels": args.labels, "truth": args.truth}
    _echo(out, args, config, options, inputs, outputs)
    print(f"best lambda={lam!r} gamma={gam!r} {result.metric}={value:.4f}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "build-graphs": cmd_build_graphs,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "grid": cmd_grid,
}


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glcc", description="Semi-supervised multi-feature classification.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="repeat for more logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text, train_flags=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", type=_parse_set, metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--out-dir", required=True, help="directory for outputs and the resolved config")
        p.add_argument("--delimiter", dest="opt_delimiter")
        p.add_argument("--header", dest="opt_header", action="store_const", const=True, help="input files have a header row")
        if train_flags:
            for flag, key, typ in TRAIN_FLAGS:
                p.add_argument(flag, dest=f"opt_{key}", type=typ)
            p.add_argument("--normalize", dest="opt_normalize", action="store_const", const=True,
                           help="z-score each view before building graphs")
        return p

    p = command("synth", "generate a synthetic multi-view dataset")
    for flag, typ in (("--n", int), ("--m", int), ("--c", int), ("--noise", float), ("--seed", int), ("--n-test", int),
                      ("--labeled-fraction", float)):
        p.add_argument(flag, dest="opt_" + flag[2:].replace("-", "_"), type=typ)
    p.add_argument("--manifold", dest="opt_manifold", choices=("arcs", "gaussian"))

    p = command("build-graphs", "build and cache per-view Laplacian and Hessian graphs", train_flags=True)
    p.add_argument("--views", nargs="+", required=True)

    p = command("train", "train a model", train_flags=True)
    p.add_argument("--views", nargs="+", required=True)
    p.add_argument("--labels", required=True, help="index,class file; '?' marks unlabeled rows")
    p.add_argument("--graphs", help="graph cache from build-graphs (built inline if omitted)")

    p = command("predict", "classify new samples")
    p.add_argument("--model", required=True)
    p.add_argument("--views", nargs="+", required=True)

    p = command("eval", "score a predictions file against ground truth")
    p.add_argument("--predictions", required=True)
    p.add_argument("--truth", required=True)

    p = command("sweep", "accuracy versus labeled fraction", train_flags=True)
    p.add_argument("--views", nargs="+", required=True)
    p.add_argument("--labels", required=True, help="fully labeled index,class file")
    p.add_argument("--fractions", dest="opt_fractions", type=_float_list)
    p.add_argument("--repeats", dest="opt_repeats", type=int)
    p.add_argument("--methods", dest="opt_methods", type=_str_list, help="comma list of glcc, ridge")

    p = command("grid", "lambda/gamma grid search", train_flags=True)
    p.add_argument("--views", nargs="+", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--truth", help="ground truth for the '?' rows of a partially labeled file")
    p.add_argument("--lambdas", dest="opt_lambdas", type=_float_list)
    p.add_argument("--gammas", dest="opt_gammas", type=_float_list)
    p.add_argument("--labeled-fraction", dest="opt_labeled_fraction", type=float)
    p.add_argument("--grid-metric", dest="opt_grid_metric", choices=("accuracy", "map"))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        config, options = resolve(args)
        return COMMANDS[args.command](args, config, options)
    except GLCCError as exc:
        print(f"error={exc.kind} command={args.command}", file=sys.stderr)
        print(str(exc), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error=data_error command={args.command}", file=sys.stderr)
        print(str(exc), file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
