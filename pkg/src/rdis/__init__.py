"""Time-series imputation with random drop training, ensembles and self-training."""

from .autodiff import Adam, AdamState, Tensor, adam_step, backward
from .baselines import KnnConfig, backward_fill, forward_fill, knn_impute, mean_fill
from .data import (
    Dataset,
    EvalSet,
    Normalizer,
    Table,
    inject_missing,
    load_cache,
    load_csv,
    make_windows,
    save_cache,
    split,
    synthetic_sinusoids,
)
from .ensemble import (
    EnsembleState,
    TrainConfig,
    TrainData,
    TrainReport,
    ensemble_predict,
    impute,
    load_ensemble,
    save_ensemble,
    train_rdi,
)
from .errors import (
    ConfigError,
    ContractError,
    DegenerateInputError,
    DimensionError,
    IngestionError,
    RdisError,
    ReportError,
    TrainingError,
)
from .kernels import BACKEND
from .losses import MaskedLoss, eval_mse, masked_mse, rdi_loss, reconstruction_loss, self_loss
from .masking import DropPlan, augment, mask_from_sentinel, random_drop, random_drop_windows
from .models import (
    BiGRUImputer,
    GRUImputer,
    GruParams,
    LinearImputer,
    build_imputer,
    forward_bi,
    forward_linear,
    forward_uni,
    gru_cell,
    load_params,
    save_params,
)
from .selftrain import PseudoSet, SelfTrainConfig, build_pseudo, entropy_of, train_rdis

__version__ = "0.1.0"
