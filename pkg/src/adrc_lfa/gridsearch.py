"""Exhaustive search over training hyperparameters and controller gains."""

from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from .data import HdiDataset
from .errors import ConfigError
from .trainer import TrainConfig, apply_overrides, canonical_key, fit

# keys a grid may vary; the short names are aliases of dotted config keys
GRID_KEYS = ("eta", "lambda", "adrc.omega", "adrc.h", "adrc.b2", "pid.kp", "pid.ki", "pid.kd",
             "adrc.b", "adrc.b1", "adrc.r", "f")


@dataclass(frozen=True)
class GridRow:
    rank: int
    params: dict
    best_valid_rmse: float
    best_epoch: int | None
    epochs: int
    stop_reason: str
    total_seconds: float


def expand_grid(grid: dict[str, list]) -> list[dict]:
    """Cartesian product of ``grid`` in key order, with canonical keys."""
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigError("grid is empty")
    keys = [canonical_key(k) for k in grid]
    bad = [k for k in keys if k not in GRID_KEYS]
    if bad:
        raise ConfigError(f"keys not searchable: {', '.join(bad)}")
    if len(set(keys)) != len(keys):
        raise ConfigError("grid repeats a key")
    return [dict(zip(keys, combo)) for combo in itertools.product(*grid.values())]


def _run_point(args):
    base, point, train_set, valid_set, init_seed = args
    config = apply_overrides(base, point)
    res = fit(train_set, valid_set, config, init_seed=init_seed)
    best = res.best
    return (
        best.valid_rmse if best else math.inf,
        best.epoch if best else None,
        len(res.history),
        res.stop_reason.value,
        res.history[-1].elapsed_ms / 1000.0 if res.history else 0.0,
    )


def grid_search(train_set: HdiDataset, valid_set: HdiDataset, base: TrainConfig,
                grid: dict[str, list], init_seed: int = 0, workers: int = 1) -> list[GridRow]:
    """Train every grid point and rank by lowest validation RMSE.

    Diverged points rank last with an infinite score. Ties keep grid order,
    so the ranking is reproducible regardless of ``workers``.
    """
    points = expand_grid(grid)
    for p in points:
        apply_overrides(base, p)  # fail fast on invalid values
    jobs = [(base, p, train_set, valid_set, init_seed) for p in points]
    if workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_point, jobs))
    else:
        outcomes = [_run_point(j) for j in jobs]
    order = sorted(range(len(points)), key=lambda i: (outcomes[i][0], i))
    return [GridRow(rank + 1, points[i], *outcomes[i]) for rank, i in enumerate(order)]


def best_config(base: TrainConfig, rows: list[GridRow]) -> TrainConfig:
    return apply_overrides(base, rows[0].params)


def grid_csv(rows: list[GridRow]) -> str:
    keys = list(rows[0].params) if rows else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", *keys, "best_valid_rmse", "best_epoch", "epochs", "stop_reason", "total_seconds"])
    for r in rows:
        w.writerow([r.rank, *(r.params[k] for k in keys), repr(r.best_valid_rmse),
                    "" if r.best_epoch is None else r.best_epoch, r.epochs, r.stop_reason,
                    f"{r.total_seconds:.3f}"])
    return buf.getvalue()
