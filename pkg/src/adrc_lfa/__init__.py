"""Latent factor analysis of incomplete matrices with controller-refined SGD."""

from .controllers import (
    AdrcGains,
    AdrcState,
    ControllerBank,
    PidGains,
    PidState,
    RefinerKind,
    ec_step,
    eso_step,
    new_bank,
    refine,
    sgn,
    td_step,
)
from .data import (
    DataSplit,
    HdiDataset,
    RatingInstance,
    bundled_dataset,
    density,
    kfold,
    make_low_rank,
    parse_ratings,
    serialize,
    split_dataset,
)
from .errors import (
    ConfigError,
    DivergenceError,
    EmptyDatasetError,
    EvaluationError,
    ParseError,
)
from .evaluation import (
    BenchReport,
    BenchRow,
    ModelSpec,
    SplitSpec,
    epochs_to_target,
    rmse,
    run_benchmark,
    time_saving,
)
from .gridsearch import GridRow, best_config, expand_grid, grid_search
from .model import (
    FactorModel,
    LfaHyper,
    full_loss,
    init_factors,
    instant_error,
    instant_loss,
    predict,
    sgd_step,
)
from .study import FoldOutcome, StudyReport, acceleration_study
from .trainer import (
    EpochRecord,
    RefinerSpec,
    StopReason,
    TrainConfig,
    TrainResult,
    apply_overrides,
    fit,
    should_stop,
    train_epoch,
)

__version__ = "0.1.0"
