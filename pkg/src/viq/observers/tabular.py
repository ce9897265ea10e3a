"""Closed-form observers: per-cell frequency tables and the constant
label-marginal predictor.

On a finite quantization of the input space, the conditional label
frequencies are the exact minimizer of the mean NLL over the tabular
family, so no iterative optimization is involved.  The constant
predictor at the empirical marginal plays the same role for the
constant family and serves as the baseline for pointwise information
values.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError
from .families import TrainedObserver, constant_family, tabular_family

LOG_FLOOR = 1e-300


def fit_tabular(data, quantizer, num_cells=None, alpha=0.0):
    """Per-cell conditional label frequencies with Laplace smoothing.

    quantizer maps an image to a cell index in [0, num_cells); when
    num_cells is None it is inferred as max(cell) + 1 over the data.
    alpha = 0 gives raw frequencies; cells never seen in the data fall
    back to the global label marginal so prediction stays defined.
    """
    if len(data) == 0:
        raise InvalidInputError("empty dataset")
    cells = np.array([quantizer(img) for img, _ in data.samples], dtype=np.int64)
    if np.any(cells < 0):
        raise InvalidInputError("quantizer produced a negative cell index")
    if num_cells is None:
        num_cells = int(cells.max()) + 1
    elif np.any(cells >= num_cells):
        raise InvalidInputError("quantizer produced a cell index >= num_cells")
    labels = data.labels()
    L = data.num_classes
    counts = np.zeros((num_cells, L))
    np.add.at(counts, (cells, labels), 1.0)
    row_totals = counts.sum(axis=1, keepdims=True)
    marginal = counts.sum(axis=0) / len(data)
    probs = np.empty_like(counts)
    seen = row_totals[:, 0] > 0
    with np.errstate(invalid="ignore"):
        probs[seen] = (counts[seen] + alpha) / (row_totals[seen] + alpha * L)
    probs[~seen] = marginal
    with np.errstate(divide="ignore"):
        table = np.log(np.maximum(probs, LOG_FLOOR))

    family = tabular_family(L, num_cells, input_dims=data.samples[0][0].shape)
    theta = table.ravel()
    nll = -float(np.mean(table[cells, labels]))
    return TrainedObserver(family, theta, [(0, nll)], 0, quantizer=quantizer)


def fit_constant(data):
    """The constant observer at the empirical label marginal.

    Its mean NLL equals the empirical label entropy, which makes it the
    canonical baseline for pointwise information values.
    """
    if len(data) == 0:
        raise InvalidInputError("empty dataset")
    freqs = np.asarray(data.class_counts, dtype=np.float64) / len(data)
    with np.errstate(divide="ignore"):
        logits = np.log(np.maximum(freqs, LOG_FLOOR))
    nll = -float(np.mean(logits[data.labels()]))
    return TrainedObserver(constant_family(data.num_classes), logits, [(0, nll)], 0)
