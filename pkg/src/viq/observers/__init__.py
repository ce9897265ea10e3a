"""Observer families, training engine, embeddings, and checkpoints."""

from .checkpoints import load_observer, save_observer
from .embed import embed_family
from .families import (
    ObserverFamily,
    TrainedObserver,
    constant_family,
    conv_family,
    family_descriptor,
    family_from_descriptor,
    init_params,
    linear_family,
    mlp_family,
    pack_params,
    predict_proba,
    predict_proba_batch,
    tabular_family,
    unpack_params,
)
from .tabular import fit_constant, fit_tabular
from .training import (
    TrainConfig,
    dataset_loss,
    finite_diff_gradient,
    gradient,
    train_observer,
)

__all__ = [
    "ObserverFamily",
    "TrainedObserver",
    "TrainConfig",
    "constant_family",
    "conv_family",
    "dataset_loss",
    "embed_family",
    "family_descriptor",
    "family_from_descriptor",
    "finite_diff_gradient",
    "fit_constant",
    "fit_tabular",
    "gradient",
    "init_params",
    "linear_family",
    "load_observer",
    "mlp_family",
    "pack_params",
    "predict_proba",
    "predict_proba_batch",
    "save_observer",
    "tabular_family",
    "train_observer",
    "unpack_params",
]
