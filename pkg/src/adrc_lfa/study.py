"""Fold-wise comparison of a tuned refiner against tuned plain SGD.

For every fold, both models are tuned by grid search on that fold's
validation part, refit with the winning settings, and compared on how many
epochs the candidate needs to reach the reference's lowest validation RMSE
and on lowest test RMSE.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

from .data import HdiDataset, kfold
from .evaluation import epochs_to_target
from .gridsearch import best_config, grid_search
from .trainer import TrainConfig, apply_overrides, fit

SGD_GRID = {"eta": [0.005, 0.01], "lambda": [0.03, 0.05, 0.08]}
ADS_GRID = {"adrc.omega": [0.3, 0.5, 1.0], "adrc.h": [0.3, 0.5, 1.0], "adrc.b2": [-0.05, 0.0, 0.05]}


@dataclass(frozen=True)
class FoldOutcome:
    fold: int
    reference_params: dict
    candidate_params: dict
    reference_best_epoch: int
    reference_valid_rmse: float
    reference_test_rmse: float
    candidate_epochs_to_target: int | None
    candidate_best_epoch: int
    candidate_valid_rmse: float
    candidate_test_rmse: float

    @property
    def faster(self) -> bool:
        """Candidate reached the reference's best in strictly fewer epochs."""
        e = self.candidate_epochs_to_target
        return e is not None and e < self.reference_best_epoch

    @property
    def test_ratio(self) -> float:
        return self.candidate_test_rmse / self.reference_test_rmse


@dataclass
class StudyReport:
    folds: list[FoldOutcome] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def wins(self) -> int:
        return sum(f.faster for f in self.folds)

    def to_dict(self) -> dict:
        return {"seconds": self.seconds, "wins": self.wins, "folds": [asdict(f) for f in self.folds]}

    def table(self) -> str:
        lines = [f"{'fold':>4} {'sgd best ep':>11} {'ads to target':>13} {'sgd test':>9} {'ads test':>9} {'ratio':>7}"]
        for f in self.folds:
            to = "-" if f.candidate_epochs_to_target is None else str(f.candidate_epochs_to_target)
            lines.append(f"{f.fold:>4} {f.reference_best_epoch:>11} {to:>13} {f.reference_test_rmse:>9.5f} "
                         f"{f.candidate_test_rmse:>9.5f} {f.test_ratio:>7.4f}")
        lines.append(f"faster on {self.wins}/{len(self.folds)} folds, {self.seconds:.1f} s")
        return "\n".join(lines)


def acceleration_study(
    dataset: HdiDataset,
    base: TrainConfig | None = None,
    sgd_grid: dict | None = None,
    ads_grid: dict | None = None,
    k: int = 5,
    seed: int = 0,
    init_seed: int = 0,
    tune_fold: int | None = None,
) -> StudyReport:
    """Tune plain SGD, then ADS on top of the tuned SGD settings, and compare per fold.

    ``tune_fold=None`` tunes on each fold's own validation part; an integer
    tunes once on that fold and reuses the settings everywhere.
    """
    base = base or TrainConfig(f=10)
    sgd_grid = SGD_GRID if sgd_grid is None else sgd_grid
    ads_grid = ADS_GRID if ads_grid is None else ads_grid
    start = time.perf_counter()
    folds = kfold(dataset, k, seed)

    def tune(sp):
        rs = grid_search(sp.train, sp.validation, base, sgd_grid, init_seed=init_seed)
        sgd = best_config(base, rs)
        ads_base = apply_overrides(sgd, {"controller": "adrc"})
        ra = grid_search(sp.train, sp.validation, ads_base, ads_grid, init_seed=init_seed)
        return sgd, best_config(ads_base, ra), rs[0].params, ra[0].params

    fixed = tune(folds[tune_fold]) if tune_fold is not None else None
    report = StudyReport()
    for i, sp in enumerate(folds):
        sgd, ads, sgd_params, ads_params = fixed or tune(sp)
        ref = fit(sp.train, sp.validation, sgd, init_seed, sp.test)
        cand = fit(sp.train, sp.validation, ads, init_seed, sp.test)
        target = ref.best.valid_rmse
        report.folds.append(FoldOutcome(
            fold=i,
            reference_params=sgd_params,
            candidate_params=ads_params,
            reference_best_epoch=ref.best.epoch,
            reference_valid_rmse=target,
            reference_test_rmse=min(h.test_rmse for h in ref.history),
            candidate_epochs_to_target=epochs_to_target(cand.history, target)[0],
            candidate_best_epoch=cand.best.epoch,
            candidate_valid_rmse=cand.best.valid_rmse,
            candidate_test_rmse=min(h.test_rmse for h in cand.history),
        ))
    report.seconds = time.perf_counter() - start
    return report


__all__ = ["ADS_GRID", "SGD_GRID", "FoldOutcome", "StudyReport", "acceleration_study"]
