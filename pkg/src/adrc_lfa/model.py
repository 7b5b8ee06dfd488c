"""Latent factor model: prediction, instant/full objective and the SGD step."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels as K
from .data import HdiDataset, RatingInstance
from .errors import ConfigError, DivergenceError


@dataclass
class FactorModel:
    """Row-node factors ``x`` (|M| x f) and column-node factors ``y`` (|N| x f)."""

    x: np.ndarray
    y: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.float64)
        if self.x.ndim != 2 or self.y.ndim != 2 or self.x.shape[1] != self.y.shape[1]:
            raise ValueError("x and y must be 2-d with the same number of columns")
        if self.x.shape[1] < 1:
            raise ValueError("latent dimension must be at least 1")

    @property
    def f(self) -> int:
        return self.x.shape[1]

    @property
    def num_rows(self) -> int:
        return self.x.shape[0]

    @property
    def num_cols(self) -> int:
        return self.y.shape[0]

    def copy(self) -> FactorModel:
        return FactorModel(self.x.copy(), self.y.copy(), self.seed)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y)))


@dataclass(frozen=True)
class LfaHyper:
    eta: float = 0.01
    lam: float = 0.05

    def __post_init__(self):
        problems = []
        if not (self.eta > 0 and math.isfinite(self.eta)):
            problems.append(f"eta must be positive, got {self.eta}")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            problems.append(f"lambda must be nonnegative, got {self.lam}")
        if problems:
            raise ConfigError("; ".join(problems))


def init_factors(num_rows: int, num_cols: int, f: int, seed: int = 0,
                 init_scale: float = 0.1) -> FactorModel:
    if num_rows < 1 or num_cols < 1 or f < 1:
        raise ConfigError("model dimensions must be positive")
    if not init_scale > 0:
        raise ConfigError("init_scale must be positive")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, init_scale, size=(num_rows, f))
    y = rng.uniform(0.0, init_scale, size=(num_cols, f))
    return FactorModel(x, y, seed)


def _check_index(model: FactorModel, m: int, n: int) -> None:
    if not (0 <= m < model.num_rows):
        raise IndexError(f"row {m} out of range for {model.num_rows} rows")
    if not (0 <= n < model.num_cols):
        raise IndexError(f"column {n} out of range for {model.num_cols} columns")


def predict(model: FactorModel, m: int, n: int) -> float:
    _check_index(model, m, n)
    return K.dot_rows(model.x, model.y, m, n)


def instant_error(model: FactorModel, instance: RatingInstance) -> float:
    m, n, r = instance
    return r - predict(model, m, n)


def instant_loss(model: FactorModel, instance: RatingInstance, hyper: LfaHyper) -> float:
    m, n, _ = instance
    e = instant_error(model, instance)
    return e * e + hyper.lam * float(model.x[m] @ model.x[m]) + hyper.lam * float(model.y[n] @ model.y[n])


def full_loss(model: FactorModel, dataset: HdiDataset, hyper: LfaHyper) -> float:
    """Sum of instant losses over every known entry.

    Regularization is charged once per instance, so a row node appearing in
    ``k`` instances has its squared norm counted ``k`` times.
    """
    if len(dataset) == 0:
        raise ValueError("full_loss needs a nonempty dataset")
    x, y = model.x, model.y
    sq = K.squared_error_sum(x, y, dataset.rows, dataset.cols, dataset.values, 0, len(dataset))
    xn = np.einsum("ij,ij->i", x, x)
    yn = np.einsum("ij,ij->i", y, y)
    reg = math.fsum(xn[dataset.rows]) + math.fsum(yn[dataset.cols])
    return sq + hyper.lam * reg


def sgd_step(model: FactorModel, instance: RatingInstance, refined_error: float,
             hyper: LfaHyper, index: int | None = None) -> None:
    """Apply one simultaneous update of ``x_m`` and ``y_n`` in place.

    Both right-hand sides use the pre-update rows. Raises
    :class:`DivergenceError` if the refined error or any updated entry is
    non-finite.
    """
    m, n, _ = instance
    _check_index(model, m, n)
    if not math.isfinite(refined_error):
        raise DivergenceError(f"non-finite refined error at instance {instance}", index)
    if not K.sgd_update(model.x, model.y, m, n, refined_error, hyper.eta, hyper.lam):
        raise DivergenceError(f"factor overflow at instance {instance}", index)


_MAGIC = "# adrc-lfa factor model"


def save_model(model: FactorModel, path: str | Path) -> None:
    """Text checkpoint: header line, then ``x`` rows, then ``y`` rows (repr precision)."""
    seed = -1 if model.seed is None else model.seed
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{_MAGIC}\n{model.num_rows} {model.num_cols} {model.f} {seed}\n")
        for mat in (model.x, model.y):
            for row in mat.tolist():
                fh.write(" ".join(repr(v) for v in row) + "\n")


def load_model(path: str | Path) -> FactorModel:
    with open(path, "r", encoding="utf-8") as fh:
        if fh.readline().rstrip("\n") != _MAGIC:
            raise ValueError(f"{path} is not a factor model checkpoint")
        rows, cols, f, seed = (int(t) for t in fh.readline().split())
        values = np.array([float(t) for t in fh.read().split()], dtype=np.float64)
    if values.size != (rows + cols) * f:
        raise ValueError(f"{path}: expected {(rows + cols) * f} values, found {values.size}")
    x = values[: rows * f].reshape(rows, f)
    y = values[rows * f:].reshape(cols, f)
    return FactorModel(x, y, None if seed < 0 else seed)
