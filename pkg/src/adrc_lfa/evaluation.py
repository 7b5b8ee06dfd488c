"""RMSE evaluation and the multi-model comparison harness."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from . import _kernels as K
from .data import kfold, split_dataset
from .errors import ConfigError, EvaluationError

if TYPE_CHECKING:
    from .trainer import TrainConfig

log = logging.getLogger(__name__)


def rmse(model, dataset, clamp: tuple[float, float] | None = None) -> float:
    """Root mean squared prediction error over ``dataset``.

    The residual sum uses compensated summation so the result does not depend
    on instance order beyond the last few ulps. ``clamp`` optionally clips
    predictions to a rating range first.
    """
    n = len(dataset)
    if n == 0:
        raise EvaluationError("RMSE over an empty dataset is undefined")
    if clamp is None:
        sq = K.squared_error_sum(model.x, model.y, dataset.rows, dataset.cols, dataset.values, 0, n)
    else:
        pred = np.clip(K.predict_many(model.x, model.y, dataset.rows, dataset.cols), *clamp)
        sq = math.fsum((dataset.values - pred) ** 2)
    return math.sqrt(sq / n)


def time_saving(cost_high: float, cost_low: float) -> float:
    """Relative saving ``(high - low) / high`` of the cheaper run."""
    if cost_high <= 0:
        raise ValueError("cost_high must be positive")
    return (cost_high - cost_low) / cost_high


# --------------------------------------------------------------------------
# Benchmark harness
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    name: str
    config: "TrainConfig"


@dataclass(frozen=True)
class SplitSpec:
    """Either a hold-out split by ``fractions`` or ``kfold`` rotating folds.

    For hold-out splits each benchmark seed reshuffles the data; for k-fold
    the folds are drawn once with ``seed`` and each benchmark seed selects a
    fold index.
    """

    fractions: tuple[float, float, float] = (0.7, 0.2, 0.1)
    kfold: int | None = None
    seed: int = 0

    def make(self, dataset, run_seed: int):
        if self.kfold is None:
            return split_dataset(dataset, self.fractions, run_seed)
        return kfold(dataset, self.kfold, self.seed)[run_seed % self.kfold]


@dataclass
class BenchRow:
    model: str
    run: int
    stop_reason: str
    epochs: int
    best_valid_rmse: float
    best_epoch: int | None
    lowest_test_rmse: float
    test_rmse_at_best: float
    total_seconds: float
    epochs_to_target: int | None = None
    seconds_to_target: float | None = None
    error: str | None = None

    @property
    def diverged(self) -> bool:
        return self.stop_reason == "divergence"


@dataclass
class BenchReport:
    dataset: str
    models: list[str]
    rows: list[BenchRow] = field(default_factory=list)
    reference: str | None = None
    concurrent: bool = False

    def rows_for(self, model: str) -> list[BenchRow]:
        return [r for r in self.rows if r.model == model]

    def summary(self) -> dict[str, dict]:
        """Per-model means over runs (diverged runs excluded from the means)."""
        out = {}
        for name in self.models:
            rows = self.rows_for(name)
            ok = [r for r in rows if not r.diverged and r.epochs > 0]
            ett = [r.epochs_to_target for r in ok if r.epochs_to_target is not None]
            out[name] = {
                "runs": len(rows),
                "diverged": sum(r.diverged for r in rows),
                "lowest_test_rmse": _mean([r.lowest_test_rmse for r in ok]),
                "test_rmse_at_best": _mean([r.test_rmse_at_best for r in ok]),
                "best_valid_rmse": _mean([r.best_valid_rmse for r in ok]),
                "total_seconds": _mean([r.total_seconds for r in ok]),
                "epochs": _mean([r.epochs for r in ok]),
                "epochs_to_target": _mean(ett) if len(ett) == len(ok) else None,
                "target_reached": len(ett),
            }
        return out

    def savings(self) -> list[dict]:
        """Relative time and epochs-to-target saving for every model pair."""
        summ = self.summary()
        out = []
        for i, a in enumerate(self.models):
            for b in self.models[i + 1:]:
                entry = {"pair": [a, b]}
                for key in ("total_seconds", "epochs_to_target"):
                    ca, cb = summ[a][key], summ[b][key]
                    if ca is None or cb is None or math.isnan(ca) or math.isnan(cb) or max(ca, cb) <= 0:
                        entry[key] = None
                        continue
                    faster = a if ca <= cb else b
                    entry[key] = {"faster": faster, "saving": time_saving(max(ca, cb), min(ca, cb))}
                out.append(entry)
        return out

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "models": self.models,
            "reference": self.reference,
            "concurrent": self.concurrent,
            "runs": [_clean(asdict(r)) for r in self.rows],
            "summary": {k: _clean(v) for k, v in self.summary().items()},
            "savings": self.savings(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        """Aligned text table: one column per model, RMSE and seconds rows per dataset."""
        summ = self.summary()
        header = ["Case", ""] + self.models
        body = [
            [self.dataset, "RMSE:"] + [_fmt(summ[m]["lowest_test_rmse"], "{:.4f}") for m in self.models],
            ["", "Time:"] + [_fmt(summ[m]["total_seconds"], "{:.2f}(s)") for m in self.models],
            ["", "Epochs:"] + [_fmt(summ[m]["epochs"], "{:.1f}") for m in self.models],
            ["", "To target:"] + [_fmt(summ[m]["epochs_to_target"], "{:.1f}") for m in self.models],
        ]
        for m in self.models:
            if summ[m]["diverged"]:
                body.append(["", "diverged:", m, f"{summ[m]['diverged']}/{summ[m]['runs']} runs"]
                            + [""] * (len(self.models) - 2))
        widths = [max(len(str(r[i])) for r in [header] + body if i < len(r)) for i in range(len(header))]
        lines = []
        for r in [header] + body:
            lines.append("  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip())
        return "\n".join(lines) + "\n"


def _mean(xs) -> float:
    xs = [x for x in xs if x is not None and not math.isnan(x)]
    return float(np.mean(xs)) if xs else math.nan


def _fmt(v, spec: str) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "-"
    return spec.format(v)


def _clean(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


def _row_from_result(name: str, run: int, result) -> BenchRow:
    hist = result.history
    best = result.best
    tests = [r.test_rmse for r in hist if not math.isnan(r.test_rmse)]
    return BenchRow(
        model=name,
        run=run,
        stop_reason=result.stop_reason.value,
        epochs=len(hist),
        best_valid_rmse=best.valid_rmse if best else math.nan,
        best_epoch=best.epoch if best else None,
        lowest_test_rmse=min(tests) if tests else math.nan,
        test_rmse_at_best=best.test_rmse if best else math.nan,
        total_seconds=hist[-1].elapsed_ms / 1000.0 if hist else 0.0,
        error=result.error,
    )


def epochs_to_target(history, target: float) -> tuple[int | None, float | None]:
    """First epoch (and its elapsed seconds) whose validation RMSE is <= ``target``."""
    for r in history:
        if r.valid_rmse <= target:
            return r.epoch, r.elapsed_ms / 1000.0
    return None, None


def run_benchmark(dataset, split: SplitSpec, models: list[ModelSpec], seeds=(0,),
                  reference: str | None = None, dataset_name: str = "data",
                  init_seed: int | None = None) -> BenchReport:
    """Train every model on identical splits and initial factors for each seed.

    ``reference`` names the model whose lowest validation RMSE defines the
    epochs-to-target of every model in the same run; it defaults to the first
    model. A diverging model is recorded and does not stop the others.
    """
    from .trainer import fit

    if not models:
        raise ConfigError("benchmark needs at least one model")
    names = [m.name for m in models]
    if len(set(names)) != len(names):
        raise ConfigError(f"model names must be unique: {names}")
    reference = reference or names[0]
    if reference not in names:
        raise ConfigError(f"reference model {reference!r} not among {names}")
    report = BenchReport(dataset_name, names, reference=reference)
    for seed in seeds:
        sp = split.make(dataset, seed)
        results = {}
        for spec in models:
            res = fit(sp.train, sp.validation, spec.config,
                      init_seed=seed if init_seed is None else init_seed, test_set=sp.test)
            results[spec.name] = res
            log.info("run %s seed %d: %s after %d epochs", spec.name, seed, res.stop_reason.value, len(res.history))
        ref_best = results[reference].best
        for spec in models:
            row = _row_from_result(spec.name, seed, results[spec.name])
            if ref_best is not None and results[reference].stop_reason.value != "divergence":
                row.epochs_to_target, row.seconds_to_target = epochs_to_target(
                    results[spec.name].history, ref_best.valid_rmse)
            report.rows.append(row)
    return report
