"""Per-instance error refiners: pass-through, positional PID and linear ADRC.

Each known entry owns one controller. A controller is ticked once per visit
of its entry in the training loop; its output replaces the raw instant error
in the factor update.

The ADRC refiner runs three stages per tick:

* tracking differentiator (TD) on the rating, producing ``v1`` and its rate ``v2``;
* extended state observer (ESO) on the prediction, producing ``z1``, its
  rate ``z2`` and a lumped disturbance estimate ``z3``;
* error compensator (EC): ``u = (b1*(r - r_hat) + b2*(v2 - z2) - z3) / b0``.

The ESO consumes the previous tick's output ``u_prev``, since the current
output is not available until the EC has run.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, astuple, dataclass

import numpy as np

from . import _kernels as K
from .errors import ConfigError, DivergenceError


class RefinerKind(str, enum.Enum):
    SGD = "sgd"
    PID = "pid"
    ADRC = "adrc"

    @property
    def code(self) -> int:
        return {"sgd": K.KIND_SGD, "pid": K.KIND_PID, "adrc": K.KIND_ADRC}[self.value]


@dataclass(frozen=True)
class AdrcGains:
    """Shared ADRC gains.

    ``td_accel`` is the TD acceleration bound. ``beta1..3`` are the observer
    gains, usually set through :meth:`from_bandwidth`.
    """

    h: float = 0.3
    td_accel: float = 1.0
    beta1: float = 1.5
    beta2: float = 0.75
    beta3: float = 0.125
    b: float = 0.0
    b0: float = 1.0
    b1: float = 1.0
    b2: float = 0.01

    def __post_init__(self):
        problems = [f"adrc.{k} must be finite, got {v}" for k, v in asdict(self).items() if not math.isfinite(v)]
        if self.h <= 0:
            problems.append(f"adrc.h must be positive, got {self.h}")
        if self.td_accel <= 0:
            problems.append(f"adrc.r must be positive, got {self.td_accel}")
        if self.b0 == 0:
            problems.append("adrc.b0 must be nonzero")
        if problems:
            raise ConfigError("; ".join(problems))

    @classmethod
    def from_bandwidth(cls, omega: float = 0.5, **kw) -> AdrcGains:
        """Observer gains placing all ESO poles at ``-omega``: (3w, 3w^2, w^3)."""
        return cls(beta1=3 * omega, beta2=3 * omega**2, beta3=omega**3, **kw)

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


@dataclass(frozen=True)
class PidGains:
    kp: float = 1.0
    ki: float = 0.01
    kd: float = 0.1

    def __post_init__(self):
        if not all(math.isfinite(v) for v in astuple(self)):
            raise ConfigError(f"PID gains must be finite: {self}")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


@dataclass
class AdrcState:
    v1: float = 0.0
    v2: float = 0.0
    z1: float = 0.0
    z2: float = 0.0
    z3: float = 0.0
    u_prev: float = 0.0

    def _check(self):
        if not all(math.isfinite(v) for v in astuple(self)):
            raise DivergenceError(f"non-finite ADRC state {self}")


@dataclass
class PidState:
    err_sum: float = 0.0
    err_prev: float = 0.0


def sgn(x: float) -> int:
    return int(K.sgn(x))


def td_step(state: AdrcState, target: float, gains: AdrcGains) -> None:
    state.v1, state.v2 = K.td_update(state.v1, state.v2, target, gains.h, gains.td_accel)
    state._check()


def eso_step(state: AdrcState, prediction: float, gains: AdrcGains) -> None:
    state.z1, state.z2, state.z3 = K.eso_update(
        state.z1, state.z2, state.z3, state.u_prev, prediction,
        gains.h, gains.beta1, gains.beta2, gains.beta3, gains.b,
    )
    state._check()


def ec_step(state: AdrcState, target: float, prediction: float, gains: AdrcGains) -> float:
    u = K.ec_output(target, prediction, state.v2, state.z2, state.z3, gains.b0, gains.b1, gains.b2)
    state.u_prev = u
    state._check()
    return u


class ControllerBank:
    """One controller state per training instance, stored as a 2-d array.

    ``states[i]`` is ``(v1, v2, z1, z2, z3, u_prev)`` for ADRC and
    ``(err_sum, err_prev)`` for PID; pass-through banks hold no state.
    ``ticks[i]`` counts how many times instance ``i`` has been refined.
    """

    def __init__(self, kind: RefinerKind | str, gains: AdrcGains | PidGains | None, num_instances: int):
        kind = RefinerKind(kind)
        if num_instances < 0:
            raise ConfigError("num_instances must be nonnegative")
        if kind is RefinerKind.ADRC:
            gains = gains if gains is not None else AdrcGains()
            if not isinstance(gains, AdrcGains):
                raise ConfigError("ADRC bank needs AdrcGains")
            width = K.ADRC_STATE_WIDTH
        elif kind is RefinerKind.PID:
            gains = gains if gains is not None else PidGains()
            if not isinstance(gains, PidGains):
                raise ConfigError("PID bank needs PidGains")
            width = K.PID_STATE_WIDTH
        else:
            gains = None
            width = 0
        self.kind = kind
        self.gains = gains
        self.size = num_instances
        rows = num_instances if width else 0
        self.states = np.zeros((rows, width), dtype=np.float64)
        self.ticks = np.zeros(num_instances, dtype=np.int64)
        self._gain_vec = gains.as_array() if gains is not None else np.zeros(0)

    @property
    def gain_vector(self) -> np.ndarray:
        return self._gain_vec

    def __len__(self) -> int:
        return len(self.states)

    def state(self, i: int) -> AdrcState | PidState:
        if self.kind is RefinerKind.ADRC:
            return AdrcState(*self.states[i].tolist())
        if self.kind is RefinerKind.PID:
            return PidState(*self.states[i].tolist())
        raise TypeError("pass-through bank has no state")

    def warm_start(self, targets: np.ndarray, predictions: np.ndarray) -> None:
        """Set ``v1`` to each rating and ``z1`` to each initial prediction (ADRC only)."""
        if self.kind is not RefinerKind.ADRC:
            return
        self.states[:, 0] = targets
        self.states[:, 2] = predictions


def new_bank(kind, gains=None, num_instances: int = 0, init_policy: str = "zero",
             targets=None, predictions=None) -> ControllerBank:
    bank = ControllerBank(kind, gains, num_instances)
    if init_policy == "warm":
        if targets is None or predictions is None:
            raise ConfigError("warm init needs targets and initial predictions")
        bank.warm_start(np.asarray(targets), np.asarray(predictions))
    elif init_policy != "zero":
        raise ConfigError(f"unknown init policy {init_policy!r}")
    return bank


def refine(bank: ControllerBank, instance_index: int, target: float, prediction: float) -> float:
    if bank.kind is not RefinerKind.SGD and not (0 <= instance_index < bank.size):
        raise IndexError(f"instance {instance_index} outside bank of size {bank.size}")
    u = K.refine_one(bank.kind.code, bank.states, instance_index, target, prediction, bank.gain_vector)
    if 0 <= instance_index < bank.size:
        bank.ticks[instance_index] += 1
    if not math.isfinite(u):
        raise DivergenceError(f"non-finite refined error for instance {instance_index}", instance_index)
    return u


def gains_dict(gains: AdrcGains | PidGains | None) -> dict:
    return asdict(gains) if gains is not None else {}
