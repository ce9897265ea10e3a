"""Conventional task and fidelity metrics: AUC, accuracy, SSIM, PSNR,
and the least-squares agreement analysis.

AUC is computed by exact pair counting through midranks, so ties
contribute exactly one half and no ROC discretization is involved.
SSIM follows the standard reference formulation: 11x11 Gaussian window
with sigma 1.5, stability constants K1 = 0.01 and K2 = 0.03, valid
windows only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .observers import predict_proba_batch

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class ScoreSet:
    """Confidence scores split by true class membership."""

    positives: np.ndarray
    negatives: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positives, dtype=np.float64)
        neg = np.asarray(self.negatives, dtype=np.float64)
        if pos.size == 0 or neg.size == 0:
            raise InvalidInputError("both score classes must be nonempty")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
            raise InvalidInputError("scores must be finite")
        object.__setattr__(self, "positives", pos)
        object.__setattr__(self, "negatives", neg)


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r_squared: float

    def __post_init__(self):
        if not -1e-12 <= self.r_squared <= 1 + 1e-12:
            raise InvalidInputError("r_squared out of [0, 1]")


def _midranks(values):
    """Ranks 1..n with ties sharing their average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(scores):
    """Probability a positive outranks a negative, ties counted half."""
    pos, neg = scores.positives, scores.negatives
    m, n = len(pos), len(neg)
    ranks = _midranks(np.concatenate([pos, neg]))
    u = ranks[:m].sum() - m * (m + 1) / 2.0
    return float(u / (m * n))


def confidence_scores(obs, data):
    """Class-1 softmax probabilities of a binary split as a ScoreSet."""
    if data.num_classes != 2:
        raise InvalidInputError("confidence scores need a binary task")
    if len(data) == 0:
        raise InvalidInputError("empty dataset")
    probs = predict_proba_batch(obs, data.images())[:, 1]
    labels = data.labels()
    return ScoreSet(probs[labels == 1], probs[labels == 0])


def accuracy(obs, data):
    """Fraction of argmax predictions matching labels; ties resolve to
    the lowest class index."""
    if len(data) == 0:
        raise InvalidInputError("empty dataset")
    probs = predict_proba_batch(obs, data.images())
    return float(np.mean(probs.argmax(axis=1) == data.labels()))


def _gaussian_window():
    half = SSIM_WINDOW // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(coords[:, None] ** 2 + coords[None, :] ** 2) / (2 * SSIM_SIGMA**2))
    return g / g.sum()


def _window_means(img, window):
    view = np.lib.stride_tricks.sliding_window_view(img, window.shape)
    return np.einsum("ijkl,kl->ij", view, window)


def ssim(a, b, data_range=None):
    """Mean local structural similarity over all valid window positions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise InvalidInputError(f"images must share a 2-D shape, got {a.shape} and {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise InvalidInputError(f"images must be at least {SSIM_WINDOW} pixels per side")
    if data_range is None:
        lo = min(a.min(), b.min())
        hi = max(a.max(), b.max())
        data_range = hi - lo
        if data_range == 0:
            return 1.0  # two identical constant images
    if data_range <= 0:
        raise InvalidInputError("data_range must be > 0")

    window = _gaussian_window()
    mu_a = _window_means(a, window)
    mu_b = _window_means(b, window)
    var_a = _window_means(a * a, window) - mu_a**2
    var_b = _window_means(b * b, window) - mu_b**2
    cov = _window_means(a * b, window) - mu_a * mu_b

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    return float(score.mean())


def psnr(a, b, peak):
    """Peak signal-to-noise ratio in dB; identical inputs give +inf."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {a.shape} vs {b.shape}")
    if peak <= 0:
        raise InvalidInputError("peak must be > 0")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return np.inf
    return float(10.0 * np.log10(peak * peak / mse))


def linear_fit_r2(xs, ys):
    """Ordinary least squares of ys on xs with the explained-variance
    ratio; constant ys give r_squared 0 by convention."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise InvalidInputError("xs and ys must be 1-D and equally long")
    if len(xs) < 3:
        raise InvalidInputError("need at least 3 points")
    x_var = np.var(xs)
    if x_var == 0:
        raise InvalidInputError("xs are all equal")
    slope = float(np.cov(xs, ys, bias=True)[0, 1] / x_var)
    intercept = float(ys.mean() - slope * xs.mean())
    residuals = ys - (slope * xs + intercept)
    ss_res = float(np.sum(residuals**2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    if ss_tot == 0.0:
        return FitResult(slope, intercept, 0.0)
    r2 = min(max(1.0 - ss_res / ss_tot, 0.0), 1.0)
    return FitResult(slope, intercept, r2)
