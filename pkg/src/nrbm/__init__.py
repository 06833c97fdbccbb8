"""Nonnegative restricted Boltzmann machines and stability tooling."""

__version__ = "0.1.0"

from .data import DataMatrix, bootstrap, load_dense_csv, load_idx, load_sparse_bow, make_batches
from .errors import (
    CorruptError,
    DegenerateError,
    DimError,
    FormatError,
    NrbmError,
    NumericError,
    OracleSizeError,
    RangeError,
    UsageError,
    VersionError,
)
from .rbm import RbmParams, cd_statistics, energy, hidden_conditional, visible_conditional
from .train import TrainConfig, dead_units, hidden_posteriors, init_params, train
from .stability import (
    classification_metrics,
    conjugate_weights,
    consistency_index,
    fit_lasso,
    jaccard_index,
    run_stability_protocol,
    select_top,
)
