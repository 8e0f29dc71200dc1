"""``transitnet`` command line: preprocess, synth, train, evaluate, params, bench.

Every command exits 0 on success. Failures print one line
``error: <category>: <detail>`` to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .dataio import (
    TceRecord,
    load_lightcurve,
    read_shards,
    read_tce_table,
    split_shards,
    write_shards,
)
from .errors import (
    ArgumentError,
    ConfigurationError,
    PreprocessingError,
    TransitNetError,
)
from .fileutil import atomic_write_text
from .lightcurve import preprocess
from .model import (
    PRESET_NAMES,
    Model,
    build,
    count_params,
    load_checkpoint,
    preset,
    save_checkpoint,
)
from .numerics import make_rng
from .synthetic import DEFAULT_NOISE_SIGMA, DEFAULT_POSITIVE_FRAC, synth_generate
from .training import AdamConfig, TrainConfig, epochs_for, evaluate, train

log = logging.getLogger("transitnet")

DROPOUT_GRID = (0.0, 0.1, 0.2, 0.3)
SPLITS = ("train", "val", "test")
BENCH_HEADER = "arch,dropout,params,train_seconds,test_accuracy,seed"
EVAL_HEADER = "split,accuracy,precision,recall,n_examples,loss"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ArgumentError(message)


class BenchCellError(TransitNetError):
    def __init__(self, arch, dropout, cause: Exception):
        super().__init__(f"bench cell arch={arch} dropout={dropout}: {cause}")
        self.category = getattr(cause, "category", "bench")


@dataclass
class BenchResult:
    arch: str
    dropout: float
    params: int
    train_seconds: float
    test_accuracy: float
    seed: int
    step_seconds: list[float] = field(default_factory=list, repr=False)

    @property
    def mean_step_seconds(self) -> float:
        return self.train_seconds / len(self.step_seconds)

    def csv_row(self) -> str:
        return (f"{self.arch},{self.dropout!r},{self.params},{self.train_seconds!r},"
                f"{self.test_accuracy!r},{self.seed}")


def _arch(value: str) -> str:
    name = value.lower()
    if name not in PRESET_NAMES:
        raise argparse.ArgumentTypeError(f"unknown architecture {value!r}; choose from {', '.join(PRESET_NAMES)}")
    return name


def _dropout(value) -> float:
    try:
        rate = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"dropout {value!r} is not a number") from None
    if rate not in DROPOUT_GRID:
        raise argparse.ArgumentTypeError(f"dropout {rate} not in {list(DROPOUT_GRID)}")
    return rate


# options that must be present after merging the config file and the command line
_REQUIRED = {
    "preprocess": ("tce_table", "lightcurve_dir", "out_dir"),
    "synth": ("n", "out_dir"),
    "train": ("arch", "data_dir", "model_out"),
    "evaluate": ("model_path", "data_dir"),
    "params": ("arch",),
    "bench": ("data_dir",),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="transitnet", description="Transit-candidate CNN toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="JSON file supplying any flag; command line wins")
        return p

    p = command("preprocess", "light-curve CSVs + TCE table -> ten shards")
    p.add_argument("--tce-table", type=Path)
    p.add_argument("--lightcurve-dir", type=Path)
    p.add_argument("--out-dir", type=Path)
    p.add_argument("--seed", type=int, default=0)

    p = command("synth", "generate a seeded synthetic dataset as ten shards")
    p.add_argument("--n", type=int)
    p.add_argument("--positive-frac", type=float, default=DEFAULT_POSITIVE_FRAC)
    p.add_argument("--noise-sigma", type=float, default=DEFAULT_NOISE_SIGMA)
    p.add_argument("--out-dir", type=Path)
    p.add_argument("--seed", type=int, default=0)

    p = command("train", "train one architecture and write a checkpoint")
    p.add_argument("--arch", type=_arch)
    p.add_argument("--data-dir", type=Path)
    p.add_argument("--steps", type=int, default=10000)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--dropout", type=_dropout, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--learning-rate", type=float, default=AdamConfig().alpha)
    p.add_argument("--val-every", type=int, default=500)
    p.add_argument("--model-out", type=Path)
    p.add_argument("--metrics-out", type=Path)

    p = command("evaluate", "metrics of a checkpoint on one split")
    p.add_argument("--model-path", type=Path)
    p.add_argument("--data-dir", type=Path)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--metrics-out", type=Path)

    p = command("params", "trainable parameter count of an architecture")
    p.add_argument("--arch", type=_arch)
    p.add_argument("--include-optimizer-slots", action="store_true")

    p = command("bench", "time every (architecture, dropout) cell on one dataset")
    p.add_argument("--archs", type=_arch, nargs="+", default=list(PRESET_NAMES))
    p.add_argument("--dropouts", type=_dropout, nargs="+", default=[0.0])
    p.add_argument("--data-dir", type=Path)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--warmup", type=int, default=20)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--learning-rate", type=float, default=AdamConfig().alpha)
    p.add_argument("--out-csv", type=Path)
    return parser


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise ArgumentError(f"unknown command {name!r}")


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        sub = _subparser(parser, args.command)
        try:
            config = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigurationError(f"{args.config}: cannot read ({exc.strerror})") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{args.config}:{exc.lineno}: invalid JSON: {exc.msg}") from None
        if not isinstance(config, dict):
            raise ConfigurationError(f"{args.config}: expected a JSON object")
        actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, value in config.items():
            dest = key.lstrip("-").replace("-", "_")
            if dest not in actions or dest in ("config", "help"):
                raise ConfigurationError(f"{args.config}: unknown option {key!r} for {args.command}")
            action = actions[dest]
            if action.type is not None and value is not None:
                try:
                    value = ([action.type(v) for v in value] if isinstance(value, list)
                             else action.type(value))
                except (argparse.ArgumentTypeError, ValueError, TypeError) as exc:
                    raise ConfigurationError(f"{args.config}: {key}: {exc}") from None
            if action.choices is not None and value not in action.choices:
                raise ConfigurationError(f"{args.config}: {key}: invalid choice {value!r}")
            defaults[dest] = value
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    missing = [name for name in _REQUIRED[args.command] if getattr(args, name) is None]
    if missing:
        flags = ", ".join("--" + m.replace("_", "-") for m in missing)
        raise ArgumentError(f"{args.command}: missing required option(s) {flags}")
    return args


# -- commands ----------------------------------------------------------------

def cmd_preprocess(args) -> int:
    metas = read_tce_table(args.tce_table)
    unk = [m for m in metas if m.label_raw == "UNK"]
    if unk:
        log.info("excluding %d UNK rows", len(unk))
    records, skipped = [], []
    for meta in metas:
        if meta.label_raw == "UNK":
            continue
        lc = load_lightcurve(args.lightcurve_dir, meta.tce_id)
        try:
            views = preprocess(lc, meta)
        except PreprocessingError as exc:
            log.warning("skipping %s: %s", meta.tce_id, exc)
            skipped.append(meta.tce_id)
            continue
        records.append(TceRecord(meta.tce_id, int(meta.label_raw == "PC"), meta.label_raw, views))
    shard_set = split_shards(records, args.seed)
    shard_set.extra = {"source": "preprocess", "excluded_unk": len(unk), "skipped": skipped}
    write_shards(shard_set, args.out_dir)
    counts = Counter(r.label_raw for r in records)
    print(f"wrote {len(records)} records to {args.out_dir}")
    for label in ("PC", "AFP", "NTP"):
        print(f"  {label}: {counts.get(label, 0)}")
    print(f"excluded UNK: {len(unk)}")
    print(f"skipped (preprocessing failed): {len(skipped)}")
    return 0


def cmd_synth(args) -> int:
    records = synth_generate(args.n, args.positive_frac, args.noise_sigma, args.seed)
    shard_set = split_shards(records, args.seed)
    shard_set.extra = {"source": "synth", "positive_frac": args.positive_frac,
                       "noise_sigma": args.noise_sigma}
    write_shards(shard_set, args.out_dir)
    positives = sum(r.label for r in records)
    print(f"wrote {len(records)} synthetic records ({positives} positive) to {args.out_dir}")
    return 0


def cmd_train(args) -> int:
    spec = preset(args.arch, dropout_rate=args.dropout)
    shard_set = read_shards(args.data_dir)
    train_split = shard_set.train_arrays(spec.views)
    val_split = shard_set.validation_arrays(spec.views)
    model = build(spec, make_rng(args.seed))
    model._check_views(train_split.views)
    config = TrainConfig(steps=args.steps, batch_size=args.batch, seed=args.seed,
                         adam=AdamConfig(alpha=args.learning_rate), val_every=args.val_every)
    start = time.perf_counter()
    model, history = train(model, (train_split, val_split), config)
    elapsed = time.perf_counter() - start
    save_checkpoint(model, args.model_out)
    if args.metrics_out is not None:
        history.write_csv(args.metrics_out)
    final = history.val_accuracy.get(args.steps)
    print(f"final validation accuracy: {'n/a' if final is None else f'{final:.4f}'}")
    print(f"elapsed: {elapsed:.1f} s (training steps {history.train_seconds:.1f} s)")
    print(f"epochs: {epochs_for(args.steps, args.batch, len(train_split)):.1f}")
    return 0


def cmd_evaluate(args) -> int:
    model = load_checkpoint(args.model_path)
    split = read_shards(args.data_dir).split(args.split)
    m = evaluate(model, split)
    print(f"accuracy: {m.accuracy:.4f}")
    print(f"precision: {m.precision:.4f}")
    print(f"recall: {m.recall:.4f}")
    print(f"n: {m.n_examples}")
    if args.metrics_out is not None:
        atomic_write_text(args.metrics_out, f"{EVAL_HEADER}\n{args.split},{m.accuracy!r},"
                          f"{m.precision!r},{m.recall!r},{m.n_examples},{m.loss!r}\n")
    return 0


def cmd_params(args) -> int:
    # counting needs only the layer shapes, so parameters stay zero
    n = count_params(Model(preset(args.arch)), args.include_optimizer_slots)
    suffix = " (including Adam m and v slots)" if args.include_optimizer_slots else ""
    print(f"{args.arch}: {n} parameters, {n / 1e6:.1f}M{suffix}")
    return 0


def run_bench(archs, dropouts, data_dir, steps=200, warmup=20, batch=64, seed=0,
              learning_rate=AdamConfig().alpha) -> list[BenchResult]:
    """Train each (arch, dropout) cell from a fresh seeded model, one at a time.

    The dataset is loaded once. ``train_seconds`` sums the per-step times of
    the ``steps`` updates that follow ``warmup`` untimed ones.
    """
    if steps < 1 or warmup < 0:
        raise ArgumentError("bench needs steps >= 1 and warmup >= 0")
    shard_set = read_shards(data_dir)
    views = sorted({v for a in archs for v in preset(a).views})
    train_split = shard_set.train_arrays(views)
    test_split = shard_set.test_arrays(views)
    results = []
    for arch in archs:
        for rate in dropouts:
            try:
                model = build(preset(arch, dropout_rate=rate), make_rng(seed))
                config = TrainConfig(steps=warmup + steps, batch_size=batch, seed=seed,
                                     adam=AdamConfig(alpha=learning_rate), val_every=warmup + steps)
                model, history = train(model, (train_split, None), config)
                timed = history.step_seconds[warmup:]
                acc = evaluate(model, test_split).accuracy
            except (TransitNetError, FloatingPointError) as exc:
                raise BenchCellError(arch, rate, exc) from exc
            result = BenchResult(arch, rate, count_params(model), float(sum(timed)), acc, seed, timed)
            log.info("bench %s", result)
            results.append(result)
    return results


def cmd_bench(args) -> int:
    results = run_bench(args.archs, args.dropouts, args.data_dir, args.steps, args.warmup,
                        args.batch, args.seed, args.learning_rate)
    text = BENCH_HEADER + "\n" + "".join(r.csv_row() + "\n" for r in results)
    if args.out_csv is not None:
        atomic_write_text(args.out_csv, text)
    sys.stdout.write(text)
    return 0


COMMANDS = {
    "preprocess": cmd_preprocess,
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "params": cmd_params,
    "bench": cmd_bench,
}


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except TransitNetError as exc:
        print(f"error: {exc.category}: {_one_line(exc)}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except TransitNetError as exc:
        print(f"error: {exc.category}: {_one_line(exc)}", file=sys.stderr)
    except FloatingPointError as exc:
        print(f"error: numeric: {_one_line(exc)}", file=sys.stderr)
    except OSError as exc:
        where = f"{exc.filename}: " if exc.filename else ""
        print(f"error: io: {where}{_one_line(exc.strerror or exc)}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
