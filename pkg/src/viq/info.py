"""Usable-information measures built on trained observers.

An observer family that cannot represent every conditional distribution
extracts less information from an image than an unrestricted one, and
the gap is exactly what these measures quantify.  The conditional
entropy of labels given images, taken over a family, is the best mean
negative log-likelihood any member of the family achieves; subtracting
it from the label entropy gives the information the family can use.
With the unrestricted tabular family on a finite alphabet this reduces
to ordinary mutual information, for which exact_mi_discrete is the
direct-summation oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .observers import predict_proba_batch

PROB_CLAMP = 1e-12
_CONTEXTS = ("train", "val", "test", "exact")


@dataclass(frozen=True)
class NatsValue:
    """An information quantity in nats, tagged with its evaluation split.

    clamped records whether any per-sample probability hit the floor
    that keeps logs finite.
    """

    value: float
    context: str = "train"
    clamped: bool = False

    def __post_init__(self):
        if self.context not in _CONTEXTS:
            raise InvalidInputError(f"unknown context {self.context!r}")
        if not np.isfinite(self.value):
            raise InvalidInputError("information value must be finite")


@dataclass(frozen=True)
class JointPMF:
    """Joint distribution over a finite (x, y) alphabet."""

    table: np.ndarray = field()

    def __post_init__(self):
        table = np.asarray(self.table, dtype=np.float64)
        if table.ndim != 2:
            raise InvalidInputError("joint table must be 2-D")
        if np.any(table < 0):
            raise InvalidInputError("joint probabilities must be nonnegative")
        if abs(table.sum() - 1.0) > 1e-12:
            raise InvalidInputError("joint table must sum to 1 within 1e-12")
        object.__setattr__(self, "table", table)


def _check_priors(priors):
    p = np.asarray(priors, dtype=np.float64)
    if p.ndim != 1 or p.size < 2:
        raise InvalidInputError("priors must be a 1-D vector of >= 2 entries")
    if np.any(p < 0):
        raise InvalidInputError("priors must be nonnegative")
    if abs(p.sum() - 1.0) > 1e-9:
        raise InvalidInputError("priors must sum to 1 within 1e-9")
    return p


def label_entropy(priors, context="train"):
    """H(Y) in nats; zero-probability entries contribute nothing."""
    p = _check_priors(priors)
    nz = p[p > 0]
    return NatsValue(float(-np.sum(nz * np.log(nz))), context)


def v_conditional_entropy(obs, data):
    """Mean negative log-probability the observer gives the true labels.

    Per-sample probabilities are floored at 1e-12 so a hard zero on a
    true label cannot blow up the mean; the flag records whether the
    floor fired.
    """
    if len(data) == 0:
        raise InvalidInputError("empty dataset")
    probs = predict_proba_batch(obs, data.images())
    true_probs = probs[np.arange(len(data)), data.labels()]
    clamped = bool(np.any(true_probs < PROB_CLAMP))
    logs = np.log(np.maximum(true_probs, PROB_CLAMP))
    return NatsValue(float(-np.mean(logs)), data.split, clamped)


def v_information(obs, data, priors=None):
    """Usable information in nats: label entropy minus conditional entropy.

    priors default to the empirical label frequencies of the split the
    value is computed on.  Evaluated on a held-out split the result can
    be negative for an overfit observer; the context records the split.
    """
    if len(data) == 0:
        raise InvalidInputError("empty dataset")
    if priors is None:
        priors = data.priors()
    h_y = label_entropy(priors, data.split)
    h_v = v_conditional_entropy(obs, data)
    return NatsValue(h_y.value - h_v.value, data.split, h_v.clamped)


def exact_mi_discrete(joint):
    """Mutual information of a finite joint by direct summation."""
    if not isinstance(joint, JointPMF):
        joint = JointPMF(joint)
    table = joint.table
    px = table.sum(axis=1, keepdims=True)
    py = table.sum(axis=0, keepdims=True)
    mask = table > 0
    terms = np.zeros_like(table)
    terms[mask] = table[mask] * np.log(table[mask] / (px @ py)[mask])
    return NatsValue(float(terms.sum()), "exact")


def pointwise_v_info(obs, baseline, sample):
    """Information gain of one sample over the label-marginal baseline.

    Positive when the observer beats the constant predictor on this
    sample, negative when the image misleads it.  Averaged over the
    split the baseline was fit on, these recover v_information with the
    baseline's priors.
    """
    if baseline.family.kind != "constant":
        raise InvalidInputError("baseline must be a constant-family observer")
    if baseline.family.num_classes != obs.family.num_classes:
        raise InvalidInputError("observer and baseline disagree on class count")
    image, label = sample
    if not 0 <= label < obs.family.num_classes:
        raise InvalidInputError(f"label {label} out of range")
    images = np.asarray(image, dtype=np.float64)[None]
    p_obs = predict_proba_batch(obs, images)[0, label]
    p_base = predict_proba_batch(baseline, images)[0, label]
    clamped = bool(p_obs < PROB_CLAMP or p_base < PROB_CLAMP)
    value = float(
        np.log(max(p_obs, PROB_CLAMP)) - np.log(max(p_base, PROB_CLAMP))
    )
    return NatsValue(value, "train", clamped)
