"""Command-line front end: ``prvfln {train,eval,synth,sweep,inspect}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data, schema or
snapshot error, 3 numeric divergence.

Environment:
``PRVFLN_OUTPUT_DIR``
    base directory for output paths that are not given explicitly.
``PRVFLN_THREADS``
    worker processes for ``sweep`` when ``--workers`` is not given.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import typing
import warnings
from dataclasses import asdict, fields

from .errors import ConfigError, DataError, SnapshotError
from .evaluation import MetricsWriter, holdout, prequential, score
from .learner import Learner, LearnerConfig
from .streams import GENERATORS, StreamSpec, open_stream, synth, write_csv
from .sweep import DEFAULT_SCOPES, DEFAULT_SEEDS, format_table, sweep

logger = logging.getLogger("prvfln")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
ENV_OUTPUT = "PRVFLN_OUTPUT_DIR"
ENV_THREADS = "PRVFLN_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- flag construction -----------------------------------------------------------

def _flag_type(f):
    hints = typing.get_type_hints(LearnerConfig)
    hint = hints[f.name]
    if hint is bool:
        return bool
    if hint is int or typing.get_args(hint) and int in typing.get_args(hint):
        return int
    if hint is float:
        return float
    return str


def _add_learner_flags(parser):
    group = parser.add_argument_group("learner")
    for f in fields(LearnerConfig):
        name = "--" + f.name.replace("_", "-")
        kind = _flag_type(f)
        if kind is bool:
            group.add_argument(name, action=argparse.BooleanOptionalAction, default=None)
        else:
            group.add_argument(name, type=kind, default=None, metavar=f.name.upper())
    group.add_argument("--scope", type=float, nargs=2, metavar=("LOW", "HIGH"),
                       help="shorthand for --scope-low/--scope-high")


def _add_stream_flags(parser, need_target=True):
    group = parser.add_argument_group("stream")
    group.add_argument("--data", help="delimited file with a header row")
    group.add_argument("--generator", choices=sorted(GENERATORS), help="synthetic stream instead of --data")
    group.add_argument("--gen-param", action="append", default=[], metavar="KEY=VALUE",
                       help="generator keyword argument (JSON value), repeatable")
    group.add_argument("--inputs", help="comma-separated input columns (default: all non-target)")
    group.add_argument("--targets", help="comma-separated target columns" if need_target else
                       "comma-separated target columns, if present")
    group.add_argument("--classes", help="comma-separated class labels (classification)")
    group.add_argument("--limit", type=int, help="stop after this many samples")
    group.add_argument("--delimiter", default=",")
    group.add_argument("--seed", type=int, default=0)


def _out_path(value, default_name):
    if value:
        return value
    return os.path.join(os.environ.get(ENV_OUTPUT, "."), default_name)


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("-q", "--quiet", action="store_true")
    parser = _Parser(prog="prvfln", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[common], help="prequential or holdout run; writes metrics and a snapshot")
    _add_stream_flags(p)
    _add_learner_flags(p)
    p.add_argument("--protocol", choices=("prequential", "holdout"), default="prequential")
    p.add_argument("--train-fraction", type=float, default=0.8, help="holdout training share")
    p.add_argument("--snapshot", help="output snapshot path")
    p.add_argument("--metrics", help="output metrics directory")
    p.add_argument("--inline-events", action="store_true", help="embed events in metrics.jsonl")

    p = sub.add_parser("eval", parents=[common], help="score a stream with a stored model, without training")
    _add_stream_flags(p)
    p.add_argument("--snapshot", required=True)
    p.add_argument("--metrics", help="output metrics directory (default: summary to stdout only)")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic stream to a file")
    p.add_argument("generator", choices=sorted(GENERATORS))
    p.add_argument("--gen-param", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int)
    p.add_argument("--out", help="output file")
    p.add_argument("--delimiter", default=",")

    p = sub.add_parser("sweep", parents=[common], help="random-scope robustness sweep")
    _add_stream_flags(p)
    _add_learner_flags(p)
    p.add_argument("--scopes", help="semicolon-separated LOW,HIGH pairs (default: four standard scopes)")
    p.add_argument("--seeds", help="comma-separated seeds (default 0..4)")
    p.add_argument("--workers", type=int, help=f"worker processes (default ${ENV_THREADS} or 1)")
    p.add_argument("--out", help="output directory for runs.jsonl and table.json")

    p = sub.add_parser("inspect", parents=[common], help="summarise a snapshot")
    p.add_argument("snapshot")
    p.add_argument("--json", action="store_true", help="full JSON including per-cloud detail")
    return parser


# -- resolution --------------------------------------------------------------------

def _split(text):
    return [t.strip() for t in text.split(",") if t.strip()] if text else None


def _gen_params(items):
    params = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--gen-param expects KEY=VALUE, got {item!r}")
        try:
            params[key] = json.loads(value)
        except json.JSONDecodeError:
            params[key] = value
        if isinstance(params[key], list):
            params[key] = tuple(params[key])
    return params


def resolve_config(args) -> LearnerConfig:
    values = {}
    for f in fields(LearnerConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    if getattr(args, "scope", None):
        values["scope_low"], values["scope_high"] = args.scope
    try:
        return LearnerConfig(**values).validate()
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def resolve_stream(args, mode="regression", require_target=True) -> StreamSpec:
    if bool(args.data) == bool(args.generator):
        raise UsageError("give exactly one of --data or --generator")
    if args.limit is not None and args.limit < 0:
        raise UsageError("--limit must be non-negative")
    if args.generator:
        params = _gen_params(args.gen_param)
        return StreamSpec(args.generator, params, limit=args.limit, seed=args.seed, mode=mode)
    if not os.path.isfile(args.data):
        raise DataError(f"data file not found: {args.data}")
    targets = _split(args.targets)
    if require_target and not targets:
        raise UsageError("--targets is required with --data")
    return StreamSpec(args.data, inputs=_split(args.inputs), targets=targets, limit=args.limit,
                      seed=args.seed, mode=mode, classes=_split(args.classes), delimiter=args.delimiter)


def _stream_length(spec: StreamSpec):
    if spec.synthetic:
        n = synth(spec.source, spec.params, spec.seed).length
        return n if spec.limit is None else min(n, spec.limit)
    return sum(1 for _ in open_stream(spec))


def _log_config(command, **parts):
    logger.info("resolved config %s", json.dumps({"command": command, **parts}, sort_keys=True,
                                                  default=str))


def _divergence_code(summary):
    if summary["unstable"]:
        logger.error("numeric divergence: rmse=%s, target std=%s", summary["rmse"], summary["target_std"])
        return EXIT_DIVERGED
    return EXIT_OK


# -- commands ----------------------------------------------------------------------

def run_train(args):
    config = resolve_config(args)
    spec = resolve_stream(args, config.mode)
    if args.protocol == "holdout" and not 0 < args.train_fraction < 1:
        raise UsageError("--train-fraction must lie in (0, 1)")
    snapshot = _out_path(args.snapshot, "model.bin")
    metrics = _out_path(args.metrics, "metrics")
    _log_config("train", learner=asdict(config), stream=asdict(spec), protocol=args.protocol,
                train_fraction=args.train_fraction, snapshot=snapshot, metrics=metrics)

    learner = Learner(config, seed=args.seed)
    with MetricsWriter(metrics, inline_events=args.inline_events) as sink:
        if args.protocol == "holdout":
            train_size = int(round(args.train_fraction * _stream_length(spec)))
            report = holdout(learner, open_stream(spec), max(train_size, 1), sink=sink, keep_records=False)
        else:
            report = prequential(learner, open_stream(spec), sink=sink, keep_records=False)
    os.makedirs(os.path.dirname(os.path.abspath(snapshot)), exist_ok=True)
    with open(snapshot, "wb") as handle:
        handle.write(learner.snapshot())
    print(json.dumps(report.summary))
    return _divergence_code(report.summary)


def _read_snapshot(path):
    try:
        with open(path, "rb") as handle:
            return Learner.restore(handle.read())
    except FileNotFoundError:
        raise DataError(f"snapshot not found: {path}") from None


def run_eval(args):
    learner = _read_snapshot(args.snapshot)
    spec = resolve_stream(args, learner.config.mode)
    _log_config("eval", snapshot=args.snapshot, stream=asdict(spec), metrics=args.metrics)
    if args.metrics:
        with MetricsWriter(args.metrics) as sink:
            report = score(learner, open_stream(spec), sink=sink, keep_records=False)
    else:
        report = score(learner, open_stream(spec), keep_records=False)
    print(json.dumps(report.summary))
    return _divergence_code(report.summary)


def run_synth(args):
    params = _gen_params(args.gen_param)
    out = _out_path(args.out, f"{args.generator}.csv")
    _log_config("synth", generator=args.generator, params=params, seed=args.seed, limit=args.limit, out=out)
    spec = StreamSpec(args.generator, params, limit=args.limit, seed=args.seed)
    stream = open_stream(spec)
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    rows = write_csv(out, stream, delimiter=args.delimiter)
    print(json.dumps({"path": out, "rows": rows}))
    return EXIT_OK


def _scopes(text):
    if not text:
        return DEFAULT_SCOPES
    scopes = []
    for part in text.split(";"):
        try:
            low, high = (float(v) for v in part.split(","))
        except ValueError:
            raise UsageError(f"bad scope {part!r}; expected LOW,HIGH") from None
        scopes.append((low, high))
    return tuple(scopes)


def run_sweep(args):
    config = resolve_config(args)
    spec = resolve_stream(args, config.mode)
    scopes = _scopes(args.scopes)
    try:
        seeds = tuple(int(s) for s in _split(args.seeds)) if args.seeds else DEFAULT_SEEDS
    except ValueError:
        raise UsageError(f"bad --seeds {args.seeds!r}") from None
    workers = args.workers or int(os.environ.get(ENV_THREADS, "1"))
    if workers < 1:
        raise UsageError("--workers must be positive")
    out = _out_path(args.out, "sweep")
    _log_config("sweep", learner=asdict(config), stream=asdict(spec), scopes=scopes, seeds=seeds,
                workers=workers, out=out)
    try:
        runs, table = sweep(spec, config, scopes, seeds, workers)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "runs.jsonl"), "w") as handle:
        for r in runs:
            handle.write(json.dumps(r) + "\n")
    with open(os.path.join(out, "table.json"), "w") as handle:
        json.dump(table, handle, indent=2)
        handle.write("\n")
    print(format_table(table))
    return EXIT_OK


def run_inspect(args):
    learner = _read_snapshot(args.snapshot)
    info = learner.describe()
    if args.json:
        print(json.dumps(info, indent=2))
        return EXIT_OK
    print(f"step        {info['step']}")
    print(f"inputs      {info['n_inputs']}  outputs {info['n_outputs']}")
    print(f"clouds (R)  {info['n_clouds']}")
    print(f"archive     {info['archive_size']}")
    print(f"admitted    {info['admitted']}/{info['seen']}")
    if "mask" in info:
        print(f"mask        {info['mask']}")
    for c in info.get("clouds", []):
        mean = ", ".join(f"{v:.4g}" for v in c["mean"])
        print(f"  cloud {c['id']:>4}  support {c['support']:>6}  mean [{mean}]")
    return EXIT_OK


COMMANDS = {"train": run_train, "eval": run_eval, "synth": run_synth, "sweep": run_sweep,
            "inspect": run_inspect}


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose > 1 else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr,
                        force=True)
    logging.captureWarnings(True)
    warnings.simplefilter("once", UserWarning)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except (DataError, SnapshotError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
