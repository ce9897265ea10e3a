"""Differentiable layer primitives used by observers and the restorer.

Every layer is a pair of pure functions: ``*_forward(...)`` returns the
output plus a cache, and ``*_backward(cache, dout)`` returns the input
gradient followed by parameter gradients.  All arrays are float64;
batches are (N, features) for dense layers and (N, C, H, W) for
convolutional ones.  Gradients are exact reverse-mode derivatives of
the forward expressions, which the finite-difference tests rely on.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError

IN_EPS = 1e-5


def linear_forward(X, W, b):
    """Affine map: X (N, D) times W (K, D) transposed, plus b (K,)."""
    out = X @ W.T + b
    return out, (X, W)


def linear_backward(cache, dout):
    X, W = cache
    dX = dout @ W
    dW = dout.T @ X
    db = dout.sum(axis=0)
    return dX, dW, db


def relu_forward(X):
    out = np.maximum(X, 0.0)
    return out, (X > 0.0)


def relu_backward(cache, dout):
    return dout * cache


def conv3x3_forward(X, W):
    """Same-padded 3x3 convolution; X (N, C, H, W), W (K, C, 3, 3).

    Computed as nine shifted tensor contractions, one per kernel tap.
    """
    N, C, H, Wd = X.shape
    K = W.shape[0]
    Xp = np.zeros((N, C, H + 2, Wd + 2))
    Xp[:, :, 1:-1, 1:-1] = X
    out = np.zeros((N, K, H, Wd))
    for di in range(3):
        for dj in range(3):
            patch = Xp[:, :, di : di + H, dj : dj + Wd]
            out += np.tensordot(patch, W[:, :, di, dj], axes=([1], [1])).transpose(0, 3, 1, 2)
    return out, (Xp, W, X.shape)


def conv3x3_backward(cache, dout):
    Xp, W, x_shape = cache
    N, C, H, Wd = x_shape
    dW = np.zeros_like(W)
    dXp = np.zeros_like(Xp)
    for di in range(3):
        for dj in range(3):
            patch = Xp[:, :, di : di + H, dj : dj + Wd]
            dW[:, :, di, dj] = np.tensordot(dout, patch, axes=([0, 2, 3], [0, 2, 3]))
            dXp[:, :, di : di + H, dj : dj + Wd] += np.tensordot(
                dout, W[:, :, di, dj], axes=([1], [0])
            ).transpose(0, 3, 1, 2)
    return dXp[:, :, 1:-1, 1:-1], dW


def instance_norm_forward(X, gamma, beta):
    """Normalize each (sample, channel) plane to zero mean, unit variance.

    Population variance with eps 1e-5; gamma and beta are per-channel.
    """
    mu = X.mean(axis=(2, 3), keepdims=True)
    centered = X - mu
    var = (centered**2).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + IN_EPS)
    xhat = centered * inv
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (centered, inv, xhat, gamma)


def instance_norm_backward(cache, dout):
    centered, inv, xhat, gamma = cache
    M = centered.shape[2] * centered.shape[3]
    dgamma = np.sum(dout * xhat, axis=(0, 2, 3))
    dbeta = np.sum(dout, axis=(0, 2, 3))
    dxhat = dout * gamma[None, :, None, None]
    dvar = np.sum(dxhat * centered, axis=(2, 3), keepdims=True) * (-0.5) * inv**3
    dmu = -inv * np.sum(dxhat, axis=(2, 3), keepdims=True) + dvar * (
        -2.0 / M
    ) * np.sum(centered, axis=(2, 3), keepdims=True)
    dX = dxhat * inv + dvar * (2.0 / M) * centered + dmu / M
    return dX, dgamma, dbeta


def avgpool2_forward(X):
    """2x average pooling; spatial dims must be even."""
    N, C, H, W = X.shape
    if H % 2 or W % 2:
        raise InvalidInputError(f"avgpool2 needs even dims, got {H}x{W}")
    out = X.reshape(N, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))
    return out, X.shape


def avgpool2_backward(cache, dout):
    N, C, H, W = cache
    dX = np.repeat(np.repeat(dout, 2, axis=2), 2, axis=3) / 4.0
    return dX


def upsample2_forward(X):
    """Nearest-neighbor 2x upsampling."""
    out = np.repeat(np.repeat(X, 2, axis=2), 2, axis=3)
    return out, X.shape


def upsample2_backward(cache, dout):
    N, C, H, W = cache
    return dout.reshape(N, C, H, 2, W, 2).sum(axis=(3, 5))


def softmax_cross_entropy(logits, labels):
    """Mean NLL and its logits gradient, with log-sum-exp stabilization.

    logits (N, L), labels (N,) ints.  Returns (loss, dlogits, probs).
    """
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    lse = m[:, 0] + np.log(np.exp(shifted).sum(axis=1))
    n = logits.shape[0]
    loss = float(np.mean(lse - logits[np.arange(n), labels]))
    probs = np.exp(logits - lse[:, None])
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits, probs


def softmax(logits):
    """Row-wise stable softmax; tolerates -inf entries."""
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=-1, keepdims=True)
