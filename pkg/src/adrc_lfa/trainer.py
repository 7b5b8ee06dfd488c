"""Epoch loop wiring a controller bank between the instant error and the SGD step."""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .controllers import AdrcGains, ControllerBank, PidGains, RefinerKind, gains_dict, new_bank
from .data import HdiDataset
from .errors import ConfigError, DivergenceError
from .evaluation import rmse
from .model import FactorModel, LfaHyper, init_factors

log = logging.getLogger(__name__)


class StopReason(str, enum.Enum):
    MAX_EPOCHS = "max-epochs"
    TOLERANCE = "tolerance"
    DIVERGENCE = "divergence"


@dataclass(frozen=True)
class RefinerSpec:
    kind: RefinerKind = RefinerKind.SGD
    gains: AdrcGains | PidGains | None = None
    init_policy: str = "zero"

    def __post_init__(self):
        object.__setattr__(self, "kind", RefinerKind(self.kind))
        if self.gains is None and self.kind is RefinerKind.ADRC:
            object.__setattr__(self, "gains", AdrcGains())
        elif self.gains is None and self.kind is RefinerKind.PID:
            object.__setattr__(self, "gains", PidGains())


@dataclass(frozen=True)
class TrainConfig:
    hyper: LfaHyper = field(default_factory=LfaHyper)
    refiner: RefinerSpec = field(default_factory=RefinerSpec)
    f: int = 20
    init_scale: float = 0.1
    max_epochs: int = 1000
    tol: float = 1e-5
    shuffle: bool = True
    shuffle_seed: int = 0
    stop_metric: str = "validation"

    def __post_init__(self):
        problems = []
        if self.max_epochs < 1:
            problems.append(f"max_epochs must be at least 1, got {self.max_epochs}")
        if not self.tol >= 0:
            problems.append(f"tol must be nonnegative, got {self.tol}")
        if self.f < 1:
            problems.append(f"f must be at least 1, got {self.f}")
        if not (self.init_scale > 0 and math.isfinite(self.init_scale)):
            problems.append(f"init_scale must be positive, got {self.init_scale}")
        if self.stop_metric not in ("validation", "train"):
            problems.append(f"stop_metric must be 'validation' or 'train', got {self.stop_metric!r}")
        if self.refiner.init_policy not in ("zero", "warm"):
            problems.append(f"init policy must be 'zero' or 'warm', got {self.refiner.init_policy!r}")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        return {
            "eta": self.hyper.eta,
            "lambda": self.hyper.lam,
            "controller": self.refiner.kind.value,
            "gains": gains_dict(self.refiner.gains),
            "init_policy": self.refiner.init_policy,
            "f": self.f,
            "init_scale": self.init_scale,
            "max_epochs": self.max_epochs,
            "tol": self.tol,
            "shuffle": self.shuffle,
            "shuffle_seed": self.shuffle_seed,
            "stop_metric": self.stop_metric,
        }


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_rmse: float
    valid_rmse: float
    elapsed_ms: float
    test_rmse: float = math.nan


@dataclass
class TrainResult:
    model: FactorModel
    history: list[EpochRecord]
    stop_reason: StopReason
    error: str | None = None
    bank: ControllerBank | None = None

    @property
    def best(self) -> EpochRecord | None:
        """Record with the lowest validation RMSE (train RMSE if no validation set)."""
        if not self.history:
            return None
        key = "valid_rmse" if not math.isnan(self.history[0].valid_rmse) else "train_rmse"
        return min(self.history, key=lambda r: getattr(r, key))

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_rmse", "valid_rmse", "elapsed_ms"])
        for r in self.history:
            w.writerow([r.epoch, repr(r.train_rmse), repr(r.valid_rmse), f"{r.elapsed_ms:.3f}"])
        return buf.getvalue()

    def summary(self, config: TrainConfig | None = None) -> dict:
        best = self.best
        out = {
            "stop_reason": self.stop_reason.value,
            "epochs": len(self.history),
            "final_train_rmse": self.history[-1].train_rmse if self.history else None,
            "final_valid_rmse": self.history[-1].valid_rmse if self.history else None,
            "best_valid_rmse": best.valid_rmse if best else None,
            "best_epoch": best.epoch if best else None,
            "lowest_train_rmse": min(r.train_rmse for r in self.history) if self.history else None,
            "total_seconds": self.history[-1].elapsed_ms / 1000.0 if self.history else 0.0,
        }
        if self.error:
            out["error"] = self.error
        if config is not None:
            out["config"] = config.to_dict()
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in out.items()}

    def summary_json(self, config: TrainConfig | None = None) -> str:
        return json.dumps(self.summary(config), indent=2, sort_keys=True)


def epoch_order(n: int, epoch: int, shuffle: bool, shuffle_seed: int) -> np.ndarray:
    if not shuffle:
        return np.arange(n, dtype=np.int64)
    return np.random.default_rng([shuffle_seed, epoch]).permutation(n).astype(np.int64)


def train_epoch(model: FactorModel, train_set: HdiDataset, bank: ControllerBank,
                hyper: LfaHyper, order: np.ndarray | None = None) -> None:
    """One controller tick and one factor update per instance, in ``order``."""
    if bank.kind is not RefinerKind.SGD and bank.size != len(train_set):
        raise ConfigError(f"bank holds {bank.size} controllers for {len(train_set)} instances")
    if order is None:
        order = np.arange(len(train_set), dtype=np.int64)
    bad = K.run_epoch(
        model.x, model.y, train_set.rows, train_set.cols, train_set.values,
        np.ascontiguousarray(order, dtype=np.int64), bank.kind.code, bank.gain_vector,
        bank.states, bank.ticks, hyper.eta, hyper.lam,
    )
    if bad >= 0:
        inst = train_set[bad]
        raise DivergenceError(f"divergence at training instance {bad} {tuple(inst)}", bad)


def should_stop(history: list[EpochRecord], config: TrainConfig) -> StopReason | None:
    if not history:
        raise ValueError("should_stop needs a nonempty history")
    if history[-1].epoch >= config.max_epochs:
        return StopReason.MAX_EPOCHS
    if len(history) >= 2:
        key = "valid_rmse" if config.stop_metric == "validation" else "train_rmse"
        a, b = getattr(history[-2], key), getattr(history[-1], key)
        if math.isnan(a) or math.isnan(b):
            a, b = history[-2].train_rmse, history[-1].train_rmse
        if abs(b - a) < config.tol:
            return StopReason.TOLERANCE
    return None


def _safe_rmse(model: FactorModel, ds: HdiDataset | None) -> float:
    if ds is None or len(ds) == 0:
        return math.nan
    return rmse(model, ds)


def fit(train_set: HdiDataset, valid_set: HdiDataset | None, config: TrainConfig,
        init_seed: int = 0, test_set: HdiDataset | None = None) -> TrainResult:
    """Train until :func:`should_stop` fires or a value diverges.

    ``elapsed_ms`` covers factor updates plus the train/validation RMSE
    evaluation of each epoch. When ``test_set`` is given its RMSE is recorded
    per epoch outside the timed region.
    """
    if len(train_set) == 0:
        raise ConfigError("training set is empty")
    model = init_factors(train_set.num_rows, train_set.num_cols, config.f, init_seed, config.init_scale)
    spec = config.refiner
    if spec.init_policy == "warm":
        preds = K.predict_many(model.x, model.y, train_set.rows, train_set.cols)
        bank = new_bank(spec.kind, spec.gains, len(train_set), "warm", train_set.values, preds)
    else:
        bank = new_bank(spec.kind, spec.gains, len(train_set), spec.init_policy)

    K.warmup()
    history: list[EpochRecord] = []
    elapsed = 0.0
    for epoch in range(1, config.max_epochs + 1):
        order = epoch_order(len(train_set), epoch, config.shuffle, config.shuffle_seed)
        t0 = time.perf_counter()
        try:
            train_epoch(model, train_set, bank, config.hyper, order)
        except DivergenceError as exc:
            log.warning("stopping on divergence at epoch %d: %s", epoch, exc)
            return TrainResult(model, history, StopReason.DIVERGENCE, str(exc), bank)
        tr = rmse(model, train_set)
        va = _safe_rmse(model, valid_set)
        elapsed += (time.perf_counter() - t0) * 1000.0
        te = _safe_rmse(model, test_set)
        if not math.isfinite(tr):
            return TrainResult(model, history, StopReason.DIVERGENCE, f"non-finite train RMSE at epoch {epoch}", bank)
        history.append(EpochRecord(epoch, tr, va, elapsed, te))
        reason = should_stop(history, config)
        if reason is not None:
            log.debug("stop after epoch %d: %s", epoch, reason.value)
            return TrainResult(model, history, reason, None, bank)
    raise AssertionError("unreachable: should_stop fires at max_epochs")


def config_from_dict(d: dict) -> TrainConfig:
    kind = RefinerKind(d.get("controller", "sgd"))
    g = d.get("gains") or {}
    gains = AdrcGains(**g) if kind is RefinerKind.ADRC else PidGains(**g) if kind is RefinerKind.PID else None
    return TrainConfig(
        hyper=LfaHyper(d.get("eta", 0.01), d.get("lambda", 0.05)),
        refiner=RefinerSpec(kind, gains, d.get("init_policy", "zero")),
        **{k: d[k] for k in ("f", "init_scale", "max_epochs", "tol", "shuffle", "shuffle_seed", "stop_metric") if k in d},
    )




# flat dotted keys understood by apply_overrides; short aliases used by grids
ADRC_KEYS = {"adrc.h": "h", "adrc.r": "td_accel", "adrc.b": "b", "adrc.b0": "b0", "adrc.b1": "b1",
             "adrc.b2": "b2", "adrc.beta1": "beta1", "adrc.beta2": "beta2", "adrc.beta3": "beta3"}
PID_KEYS = {"pid.kp": "kp", "pid.ki": "ki", "pid.kd": "kd"}
PLAIN_KEYS = {"f": int, "init_scale": float, "max_epochs": int, "tol": float, "shuffle": bool,
              "shuffle_seed": int, "stop_metric": str}
ALIASES = {"lam": "lambda", "omega": "adrc.omega", "h": "adrc.h", "r": "adrc.r", "b": "adrc.b",
           "b0": "adrc.b0", "b1": "adrc.b1", "b2": "adrc.b2", "kp": "pid.kp", "ki": "pid.ki",
           "kd": "pid.kd", "init": "adrc.init", "init_policy": "adrc.init"}
CONFIG_KEYS = frozenset({"eta", "lambda", "controller", "adrc.omega", "adrc.init"} | set(ADRC_KEYS)
                        | set(PID_KEYS) | set(PLAIN_KEYS))


def canonical_key(key: str) -> str:
    key = key.strip().replace("-", "_") if not key.startswith(("adrc.", "pid.")) else key.strip()
    key = ALIASES.get(key, key)
    if key == "max_epoch":
        key = "max_epochs"
    return key


def _coerce_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def apply_overrides(config: TrainConfig, overrides: dict) -> TrainConfig:
    """Return ``config`` with flat dotted-key ``overrides`` applied.

    ``adrc.omega`` expands to the three observer gains and is applied before
    any explicit ``adrc.beta*`` key. Every invalid key or value is reported in
    one :class:`ConfigError`.
    """
    problems: list[str] = []
    vals = {}
    for raw, v in overrides.items():
        key = canonical_key(raw)
        if key not in CONFIG_KEYS:
            problems.append(f"unknown config key {raw!r}")
            continue
        vals[key] = v

    def num(key, cast=float):
        try:
            return cast(vals[key])
        except (TypeError, ValueError):
            problems.append(f"{key}: cannot parse {vals[key]!r} as {cast.__name__}")
            return None

    hyper = {"eta": config.hyper.eta, "lam": config.hyper.lam}
    for key, field_name in (("eta", "eta"), ("lambda", "lam")):
        if key in vals:
            hyper[field_name] = num(key)
    kind = config.refiner.kind
    if "controller" in vals:
        try:
            kind = RefinerKind(str(vals["controller"]).strip().lower())
        except ValueError:
            problems.append(f"controller must be one of sgd, pid, adrc, got {vals['controller']!r}")
    init_policy = str(vals.get("adrc.init", config.refiner.init_policy))
    if init_policy not in ("zero", "warm"):
        problems.append(f"adrc.init must be 'zero' or 'warm', got {init_policy!r}")

    base_adrc = config.refiner.gains if isinstance(config.refiner.gains, AdrcGains) else AdrcGains()
    adrc = gains_dict(base_adrc)
    if "adrc.omega" in vals:
        w = num("adrc.omega")
        if w is not None:
            adrc.update(beta1=3 * w, beta2=3 * w * w, beta3=w ** 3)
    for key, name in ADRC_KEYS.items():
        if key in vals:
            adrc[name] = num(key)
    base_pid = config.refiner.gains if isinstance(config.refiner.gains, PidGains) else PidGains()
    pid = gains_dict(base_pid)
    for key, name in PID_KEYS.items():
        if key in vals:
            pid[name] = num(key)
    plain = {}
    for key, cast in PLAIN_KEYS.items():
        if key in vals:
            plain[key] = num(key, _coerce_bool if cast is bool else cast)

    def build(fn, params):
        if any(v is None for v in params.values()):
            return None
        try:
            return fn(**params)
        except ConfigError as exc:
            problems.append(str(exc))
            return None

    new_hyper = build(LfaHyper, hyper)
    gains = None
    if kind is RefinerKind.ADRC:
        gains = build(AdrcGains, adrc)
    elif kind is RefinerKind.PID:
        gains = build(PidGains, pid)
    fields_ = {k: getattr(config, k) for k in PLAIN_KEYS}
    fields_.update(plain)
    if problems:
        build(lambda **kw: TrainConfig(**kw), fields_)
        raise ConfigError("; ".join(problems))
    return TrainConfig(hyper=new_hyper, refiner=RefinerSpec(kind, gains, init_policy), **fields_)


__all__ = [
    "EpochRecord", "RefinerSpec", "StopReason", "TrainConfig", "TrainResult",
    "apply_overrides", "canonical_key", "config_from_dict", "epoch_order", "fit",
    "should_stop", "train_epoch",
]
