"""``adrc-lfa`` command line: gen, split, train, eval, bench and gridsearch.

Configuration is layered, lowest precedence first: built-in defaults, a flat
``key=value`` file given by ``--config``, ``ADRC_LFA_*`` environment variables,
and command-line flags. Keys are dotted (``adrc.omega=5``, ``pid.kp=1``).

Exit codes: 0 success, 2 usage or configuration error, 3 divergence, 4 I/O.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .controllers import RefinerKind
from .data import (
    DELIMITERS,
    DataSplit,
    HdiDataset,
    bundled_dataset,
    density,
    kfold,
    make_low_rank,
    parse_ratings,
    read_canonical,
    serialize,
)
from .errors import ConfigError, DivergenceError, EmptyDatasetError, EvaluationError, ParseError
from .evaluation import ModelSpec, SplitSpec, rmse, run_benchmark
from .gridsearch import grid_csv, grid_search
from .model import load_model, save_model
from .trainer import CONFIG_KEYS, TrainConfig, apply_overrides, canonical_key, fit


EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
ENV_PREFIX = "ADRC_LFA_"

RUN_KEYS = {
    "data": str, "dataset": str, "delimiter": str, "index_base": str,
    "train": str, "validation": str, "test": str,
    "fractions": str, "kfold": int, "fold": int, "seed": int, "init_seed": int,
    "out_dir": str, "save_model": str,
}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    """Everything a subcommand needs besides the training configuration."""

    data: str | None = None
    dataset: str | None = None
    delimiter: str = "whitespace"
    index_base: str = "auto"
    train: str | None = None
    validation: str | None = None
    test: str | None = None
    fractions: tuple[float, float, float] = (0.7, 0.2, 0.1)
    kfold: int | None = None
    fold: int = 0
    seed: int = 0
    init_seed: int = 0
    out_dir: str = "."
    save_model: str | None = None
    training: TrainConfig = field(default_factory=TrainConfig)


# ---------------------------------------------------------------- config layers

def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}", EXIT_CONFIG) from None
    except OSError as exc:
        raise CliError(f"cannot read config file {path}: {exc}", EXIT_IO) from None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{n}: expected key=value, got {raw!r}", EXIT_CONFIG)
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def env_config(environ=None) -> dict[str, str]:
    """``ADRC_LFA_ADRC_OMEGA=3`` becomes ``adrc.omega=3``; ``ADRC_LFA_MAX_EPOCHS`` becomes ``max_epochs``."""
    environ = os.environ if environ is None else environ
    out = {}
    for k, v in environ.items():
        if not k.startswith(ENV_PREFIX):
            continue
        key = k[len(ENV_PREFIX):].lower()
        for group in ("adrc_", "pid_"):
            if key.startswith(group):
                key = group[:-1] + "." + key[len(group):]
        out[key] = v
    return out


def _norm(key: str) -> str:
    key = canonical_key(key)
    return key.replace("-", "_") if key.replace("-", "_") in RUN_KEYS else key


def layered(file_cfg: dict, env_cfg: dict, flag_cfg: dict) -> dict:
    merged = {}
    for layer in (file_cfg, env_cfg, flag_cfg):
        for k, v in layer.items():
            merged[_norm(k)] = v
    return merged


def _parse_fractions(text) -> tuple[float, float, float]:
    if isinstance(text, (tuple, list)):
        parts = list(text)
    else:
        parts = [p for p in str(text).split(",") if p.strip()]
    try:
        vals = tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"fractions must be numbers, got {text!r}") from None
    if len(vals) != 3:
        raise ConfigError(f"fractions need three values train,test,validation, got {text!r}")
    return vals


def build_run_config(merged: dict) -> RunConfig:
    problems = []
    unknown = [k for k in merged if k not in RUN_KEYS and k not in CONFIG_KEYS]
    if unknown:
        problems.append("unknown config keys: " + ", ".join(sorted(unknown)))
    train_part = {k: v for k, v in merged.items() if k in CONFIG_KEYS}
    training = None
    try:
        training = apply_overrides(TrainConfig(), train_part)
    except ConfigError as exc:
        problems.append(str(exc))
    run = RunConfig()
    for k, cast in RUN_KEYS.items():
        if k not in merged or merged[k] is None:
            continue
        try:
            if k == "fractions":
                run.fractions = _parse_fractions(merged[k])
            else:
                setattr(run, k, cast(merged[k]))
        except (ValueError, ConfigError) as exc:
            problems.append(f"{k}: {exc}")
    if run.delimiter not in DELIMITERS:
        problems.append(f"delimiter must be one of {sorted(DELIMITERS)}, got {run.delimiter!r}")
    if run.index_base not in ("auto", "0", "1"):
        problems.append(f"index_base must be auto, 0 or 1, got {run.index_base!r}")
    if problems:
        raise ConfigError("; ".join(problems))
    run.training = training
    return run


# ---------------------------------------------------------------- data loading

def _load_ratings(path: str, run: RunConfig) -> HdiDataset:
    p = Path(path)
    if not p.exists():
        raise CliError(f"data file not found: {path}", EXIT_CONFIG)
    base = run.index_base if run.index_base == "auto" else int(run.index_base)
    try:
        return parse_ratings(p, delimiter=run.delimiter, index_base=base)
    except (ParseError, EmptyDatasetError) as exc:
        raise CliError(f"{path}: {exc}", EXIT_IO) from None
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from None


def load_dataset(run: RunConfig) -> HdiDataset:
    if run.data and run.dataset:
        raise CliError("give either --data or --dataset, not both", EXIT_CONFIG)
    if run.dataset:
        try:
            return bundled_dataset(run.dataset)
        except ConfigError as exc:
            raise CliError(str(exc), EXIT_CONFIG) from None
    if run.data:
        return _load_ratings(run.data, run)
    raise CliError("no data: pass --data PATH, --dataset NAME or --train/--validation files", EXIT_CONFIG)


def _read_part(path: str) -> HdiDataset:
    p = Path(path)
    if not p.exists():
        raise CliError(f"data file not found: {path}", EXIT_CONFIG)
    try:
        return read_canonical(p)
    except EmptyDatasetError:
        return HdiDataset([], [], [], 1, 1)
    except ParseError as exc:
        raise CliError(f"{path}: {exc}", EXIT_IO) from None


def _reshape(ds: HdiDataset | None, shape) -> HdiDataset | None:
    if ds is None:
        return None
    return HdiDataset(ds.rows, ds.cols, ds.values, *shape)


def load_split(run: RunConfig) -> DataSplit:
    """Pre-split files when ``--train`` is given, else split the loaded dataset."""
    if run.train:
        parts = [_read_part(run.train)]
        parts.append(_read_part(run.validation) if run.validation else None)
        parts.append(_read_part(run.test) if run.test else None)
        shape = (max(p.num_rows for p in parts if p is not None), max(p.num_cols for p in parts if p is not None))
        tr, va, te = (_reshape(p, shape) for p in parts)
        empty = HdiDataset([], [], [], *shape)
        return DataSplit(tr, va if va is not None else empty, te if te is not None else empty)
    ds = load_dataset(run)
    try:
        return split_spec(run).make(ds, run.fold if run.kfold else run.seed)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None


def split_spec(run: RunConfig) -> SplitSpec:
    if run.kfold is not None:
        if not 0 <= run.fold < run.kfold:
            raise CliError(f"fold must lie in [0, {run.kfold}), got {run.fold}", EXIT_CONFIG)
        return SplitSpec(kfold=run.kfold, seed=run.seed)
    return SplitSpec(fractions=run.fractions, seed=run.seed)


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from None


# ---------------------------------------------------------------- subcommands

def cmd_gen(args, run: RunConfig) -> int:
    try:
        ds = make_low_rank(args.rows, args.cols, args.rank, args.density, args.noise, run.seed)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    text = serialize(ds)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        _write(Path(args.out), text)
        print(f"wrote {len(ds)} entries ({ds.num_rows}x{ds.num_cols}, density {density(ds):.4%}) to {args.out}")
    return EXIT_OK


def cmd_split(args, run: RunConfig) -> int:
    sp = load_split(run)
    out = Path(run.out_dir)
    for name in ("train", "validation", "test"):
        part = getattr(sp, name)
        _write(out / f"{name}.tsv", serialize(part))
        print(f"{name}: {len(part)} entries, density {density(part):.4%}")
    return EXIT_OK


def _train_one(run: RunConfig, sp: DataSplit):
    valid = sp.validation if len(sp.validation) else None
    test = sp.test if len(sp.test) else None
    try:
        return fit(sp.train, valid, run.training, init_seed=run.init_seed, test_set=test)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None


def cmd_train(args, run: RunConfig) -> int:
    sp = load_split(run)
    res = _train_one(run, sp)
    out = Path(run.out_dir)
    _write(out / "history.csv", res.history_csv())
    summary = res.summary(run.training)
    tests = [r.test_rmse for r in res.history if not math.isnan(r.test_rmse)]
    summary["lowest_test_rmse"] = min(tests) if tests else None
    summary["seeds"] = {"split": run.seed, "init": run.init_seed, "shuffle": run.training.shuffle_seed}
    _write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if run.save_model:
        try:
            save_model(res.model, run.save_model)
        except OSError as exc:
            raise CliError(f"cannot write {run.save_model}: {exc}", EXIT_IO) from None
    if res.history:
        print(f"epochs: {len(res.history)} ({res.stop_reason.value})")
        print(f"final train RMSE: {res.history[-1].train_rmse:.6f}")
        if summary["best_valid_rmse"] is not None and res.history[0].valid_rmse == res.history[0].valid_rmse:
            print(f"lowest validation RMSE: {summary['best_valid_rmse']:.6f} at epoch {summary['best_epoch']}")
        if summary["lowest_test_rmse"] is not None:
            print(f"lowest test RMSE: {summary['lowest_test_rmse']:.6f}")
        print(f"total seconds: {summary['total_seconds']:.3f}")
    if res.stop_reason.value == "divergence":
        print(f"diverged: {res.error}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_eval(args, run: RunConfig) -> int:
    try:
        model = load_model(args.model)
    except FileNotFoundError:
        raise CliError(f"model file not found: {args.model}", EXIT_CONFIG) from None
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load model {args.model}: {exc}", EXIT_IO) from None
    if run.train or args.part == "all":
        ds = load_dataset(run) if args.part == "all" else getattr(load_split(run), args.part)
    else:
        ds = getattr(load_split(run), args.part)
    if ds.num_rows > model.num_rows or ds.num_cols > model.num_cols:
        raise CliError(f"data shape {ds.shape} exceeds model shape {(model.num_rows, model.num_cols)}", EXIT_CONFIG)
    try:
        value = rmse(model, ds)
    except EvaluationError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    print(f"{args.part} RMSE: {value:.6f} over {len(ds)} entries")
    return EXIT_OK


def parse_model_spec(text: str, base: TrainConfig) -> ModelSpec:
    """``[name=]kind[:key=val,...]``, e.g. ``ads=adrc:omega=0.5,h=0.3``."""
    name = None
    head, _, opts = text.partition(":")
    if "=" in head:
        name, head = head.split("=", 1)
    kind = head.strip().lower()
    try:
        RefinerKind(kind)
    except ValueError:
        raise ConfigError(f"model kind must be sgd, pid or adrc, got {head!r}") from None
    overrides = {"controller": kind}
    for item in filter(None, (s.strip() for s in opts.split(","))):
        if "=" not in item:
            raise ConfigError(f"model option {item!r} is not key=value")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    return ModelSpec(name or kind, apply_overrides(base, overrides))


def cmd_bench(args, run: RunConfig) -> int:
    if not args.model:
        raise CliError("bench needs at least one --model", EXIT_CONFIG)
    try:
        models = [parse_model_spec(m, run.training) for m in args.model]
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except (ConfigError, ValueError) as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    ds = load_dataset(run)
    try:
        spec = split_spec(run)
        report = run_benchmark(ds, spec, models, seeds=seeds, reference=args.reference,
                               dataset_name=run.dataset or Path(run.data).stem,
                               init_seed=run.init_seed if args.fixed_init else None)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    out = Path(run.out_dir)
    _write(out / "bench.json", report.to_json() + "\n")
    table = report.table()
    _write(out / "bench.txt", table)
    print(table, end="")
    diverged = [r for r in report.rows if r.diverged]
    for r in diverged:
        print(f"diverged: {r.model} run {r.run}: {r.error}", file=sys.stderr)
    return EXIT_DIVERGED if diverged and len(diverged) == len(report.rows) else EXIT_OK


def parse_grid(items: list[str]) -> dict[str, list]:
    grid = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"grid entry {item!r} is not key=v1,v2,...")
        k, v = item.split("=", 1)
        values = [s.strip() for s in v.split(",") if s.strip()]
        try:
            grid[k.strip()] = [float(s) for s in values]
        except ValueError:
            raise ConfigError(f"grid values for {k!r} must be numbers") from None
    if not grid:
        raise ConfigError("grid is empty: pass --grid key=v1,v2,...")
    return grid


def cmd_gridsearch(args, run: RunConfig) -> int:
    try:
        grid = parse_grid(args.grid)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    sp = load_split(run)
    if len(sp.validation) == 0:
        raise CliError("gridsearch needs a nonempty validation set", EXIT_CONFIG)
    try:
        rows = grid_search(sp.train, sp.validation, run.training, grid, init_seed=run.init_seed,
                           workers=args.workers)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    text = grid_csv(rows)
    _write(Path(run.out_dir) / "gridsearch.csv", text)
    for r in rows[: args.top]:
        params = " ".join(f"{k}={v:g}" for k, v in r.params.items())
        print(f"#{r.rank}: {params} -> valid RMSE {r.best_valid_rmse:.6f} at epoch {r.best_epoch}")
    return EXIT_OK


# ---------------------------------------------------------------- argument parser

def _add_common(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    g = p.add_argument_group("data")
    g.add_argument("--config", default=None, help="flat key=value config file")
    g.add_argument("--data", default=S, help="ratings file row<sep>col<sep>value")
    g.add_argument("--dataset", default=S, help="bundled dataset name (tiny, small, ml100k)")
    g.add_argument("--delimiter", default=S, choices=sorted(DELIMITERS))
    g.add_argument("--index-base", dest="index_base", default=S, choices=["auto", "0", "1"])
    g.add_argument("--train", default=S, help="pre-split training file (canonical format)")
    g.add_argument("--validation", default=S)
    g.add_argument("--test", default=S)
    g.add_argument("--fractions", default=S, help="train,test,validation fractions")
    g.add_argument("--kfold", type=int, default=S)
    g.add_argument("--fold", type=int, default=S)
    g.add_argument("--seed", type=int, default=S, help="split and generator seed")
    g.add_argument("--init-seed", dest="init_seed", type=int, default=S)
    g.add_argument("--out-dir", dest="out_dir", default=S)
    g.add_argument("-v", "--verbose", action="count", default=0)

    t = p.add_argument_group("training")
    t.add_argument("--eta", type=float, default=S)
    t.add_argument("--lambda", dest="lambda", type=float, default=S)
    t.add_argument("--f", type=int, default=S, help="latent dimension")
    t.add_argument("--init-scale", dest="init_scale", type=float, default=S)
    t.add_argument("--max-epochs", dest="max_epochs", type=int, default=S)
    t.add_argument("--tol", type=float, default=S)
    t.add_argument("--shuffle", dest="shuffle", action="store_const", const="true", default=S)
    t.add_argument("--no-shuffle", dest="shuffle", action="store_const", const="false", default=S)
    t.add_argument("--shuffle-seed", dest="shuffle_seed", type=int, default=S)
    t.add_argument("--stop-metric", dest="stop_metric", choices=["validation", "train"], default=S)
    t.add_argument("--controller", choices=[k.value for k in RefinerKind], default=S)
    for key in ("h", "r", "omega", "b", "b0", "b1", "b2", "beta1", "beta2", "beta3"):
        t.add_argument(f"--adrc.{key}", dest=f"adrc.{key}", type=float, default=S)
    t.add_argument("--adrc.init", dest="adrc.init", choices=["zero", "warm"], default=S)
    for key in ("kp", "ki", "kd"):
        t.add_argument(f"--pid.{key}", dest=f"pid.{key}", type=float, default=S)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adrc-lfa", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic low-rank rating file")
    _add_common(p)
    p.add_argument("--rows", type=int, default=200)
    p.add_argument("--cols", type=int, default=150)
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--density", type=float, default=0.2)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("split", help="write train/validation/test files")
    _add_common(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train one model; writes history.csv and summary.json")
    _add_common(p)
    p.add_argument("--save-model", dest="save_model", default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="RMSE of a saved model on a data part")
    _add_common(p)
    p.add_argument("--model", required=True, help="checkpoint written by train --save-model")
    p.add_argument("--part", choices=["train", "validation", "test", "all"], default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="compare several models on identical splits")
    _add_common(p)
    p.add_argument("--model", action="append", help="[name=]kind[:key=val,...]; repeatable")
    p.add_argument("--seeds", default="0", help="comma-separated run seeds (split seed or fold index)")
    p.add_argument("--reference", default=None, help="model whose lowest validation RMSE is the target")
    p.add_argument("--fixed-init", action="store_true", help="use --init-seed for every run")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gridsearch", help="rank grid points by lowest validation RMSE")
    _add_common(p)
    p.add_argument("--grid", action="append", help="key=v1,v2,...; repeatable")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--top", type=int, default=5)
    p.set_defaults(func=cmd_gridsearch)
    return parser


_NON_CONFIG = {"command", "func", "config", "verbose", "rows", "cols", "rank", "noise", "density",
               "out", "model", "part", "seeds", "reference", "fixed_init", "grid", "workers", "top"}


def main(argv: list[str] | None = None, environ=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_cfg = read_config_file(args.config) if args.config else {}
        flag_cfg = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
        try:
            run = build_run_config(layered(file_cfg, env_config(environ), flag_cfg))
        except ConfigError as exc:
            raise CliError(f"invalid configuration: {exc}", EXIT_CONFIG) from None
        return args.func(args, run)
    except CliError as exc:
        print(f"adrc-lfa {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except DivergenceError as exc:
        print(f"adrc-lfa {args.command}: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
