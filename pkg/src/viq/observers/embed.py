"""Exact parameter embeddings between nested observer families.

embed_family(src, dst_family) returns parameters under which dst
reproduces src's input-output map exactly, so training warm-started
from the embedding can only improve on src's loss.  Supported chains:

* constant -> linear_logistic, mlp, conv_stack
* linear_logistic -> mlp (first hidden layer needs >= 2L units)
* mlp -> wider mlp of the same depth
* conv_stack(k, b) -> conv_stack(k+1, b) on the same geometry

The constructions pair every exact-zero block with a live counterpart:
filler units get random input weights but zero outgoing weights, and
the appended conv module gets a random convolution behind a zero gate.
Outputs are untouched while gradients at the new parameters stay
nonzero, so the extra capacity is trainable from the first step.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError, UnsupportedEmbeddingError
from ..rng import RandomStream, hash64
from .families import glorot_uniform, pack_params, unpack_params


def embed_family(src, dst_family, seed=0):
    """Parameters for dst_family that replicate the src observer."""
    src_fam = src.family
    if dst_family.num_classes != src_fam.num_classes:
        raise UnsupportedEmbeddingError(
            f"class counts differ: {src_fam.num_classes} vs {dst_family.num_classes}"
        )
    rng = RandomStream(hash64("embed", seed))
    if src_fam.kind == "constant":
        if dst_family.kind == "linear_logistic":
            return _constant_to_linear(src, dst_family)
        if dst_family.kind == "mlp":
            return _linear_to_mlp(
                np.zeros((dst_family.num_classes, np.prod(dst_family.input_dims))),
                _constant_logits(src),
                dst_family,
                rng,
            )
        if dst_family.kind == "conv_stack":
            return _constant_to_conv(src, dst_family, rng)
    if src_fam.kind == "linear_logistic" and dst_family.kind == "mlp":
        _check_dims(src_fam, dst_family)
        parts = unpack_params(src_fam, src.theta)
        return _linear_to_mlp(parts["W"], parts["b"], dst_family, rng)
    if src_fam.kind == "mlp" and dst_family.kind == "mlp":
        _check_dims(src_fam, dst_family)
        return _mlp_to_wider_mlp(src, dst_family, rng)
    if src_fam.kind == "conv_stack" and dst_family.kind == "conv_stack":
        _check_dims(src_fam, dst_family)
        return _conv_append_module(src, dst_family, rng)
    raise UnsupportedEmbeddingError(
        f"no embedding from {src_fam.kind} to {dst_family.kind}"
    )


def _check_dims(src_fam, dst_family):
    if tuple(src_fam.input_dims) != tuple(dst_family.input_dims):
        raise UnsupportedEmbeddingError(
            f"input dims differ: {src_fam.input_dims} vs {dst_family.input_dims}"
        )


def _constant_logits(src):
    return unpack_params(src.family, src.theta)["logits"]


def _constant_to_linear(src, dst_family):
    L = dst_family.num_classes
    d = int(np.prod(dst_family.input_dims))
    return pack_params(dst_family, {"W": np.zeros((L, d)), "b": _constant_logits(src).copy()})


def _constant_to_conv(src, dst_family, rng):
    """Random features behind an all-zero head; the bias carries the
    constant logits, so every input maps to exactly src's output."""
    from .families import init_params

    theta = init_params(dst_family, rng)
    parts = unpack_params(dst_family, theta)
    parts = {k: v.copy() for k, v in parts.items()}
    parts["head.W"][:] = 0.0
    parts["head.b"] = _constant_logits(src).copy()
    return pack_params(dst_family, parts)


def _linear_to_mlp(W, b, dst_family, rng):
    """Pass the L source logits through every hidden layer unchanged.

    The first hidden layer computes relu(Wx) and relu(-Wx) on 2L units;
    their difference, taken by the output layer, is exactly Wx.  Deeper
    layers forward those 2L nonnegative activations through an identity
    block.  Remaining units are fillers: random inputs, zero outputs.
    """
    L = dst_family.num_classes
    d = int(np.prod(dst_family.input_dims))
    hidden = list(dst_family.hidden_sizes)
    if any(h < 2 * L for h in hidden):
        raise UnsupportedEmbeddingError(
            f"every hidden layer needs >= {2 * L} units to carry the logits"
        )
    W = np.asarray(W, dtype=np.float64).reshape(L, d)
    b = np.asarray(b, dtype=np.float64).reshape(L)
    parts = {}
    W1 = np.zeros((hidden[0], d))
    W1[:L] = W
    W1[L : 2 * L] = -W
    if hidden[0] > 2 * L:
        W1[2 * L :] = glorot_uniform((hidden[0] - 2 * L, d), rng)
    parts["layer0.W"] = W1
    parts["layer0.b"] = np.zeros(hidden[0])
    for i in range(1, len(hidden)):
        Wi = np.zeros((hidden[i], hidden[i - 1]))
        Wi[: 2 * L, : 2 * L] = np.eye(2 * L)
        if hidden[i] > 2 * L:
            Wi[2 * L :] = glorot_uniform((hidden[i] - 2 * L, hidden[i - 1]), rng)
        parts[f"layer{i}.W"] = Wi
        parts[f"layer{i}.b"] = np.zeros(hidden[i])
    W_out = np.zeros((L, hidden[-1]))
    W_out[:, :L] = np.eye(L)
    W_out[:, L : 2 * L] = -np.eye(L)
    parts[f"layer{len(hidden)}.W"] = W_out
    parts[f"layer{len(hidden)}.b"] = b.copy()
    return pack_params(dst_family, parts)


def _mlp_to_wider_mlp(src, dst_family, rng):
    src_fam = src.family
    src_hidden = list(src_fam.hidden_sizes)
    dst_hidden = list(dst_family.hidden_sizes)
    if len(src_hidden) != len(dst_hidden):
        raise UnsupportedEmbeddingError("mlp depths differ")
    if any(d < s for s, d in zip(src_hidden, dst_hidden)):
        raise UnsupportedEmbeddingError("destination mlp is narrower somewhere")
    src_parts = unpack_params(src_fam, src.theta)
    L = src_fam.num_classes
    d = int(np.prod(src_fam.input_dims))
    src_sizes = [d] + src_hidden + [L]
    dst_sizes = [d] + dst_hidden + [L]
    parts = {}
    for i in range(len(dst_sizes) - 1):
        out_s, in_s = src_sizes[i + 1], src_sizes[i]
        out_d, in_d = dst_sizes[i + 1], dst_sizes[i]
        Wi = np.zeros((out_d, in_d))
        Wi[:out_s, :in_s] = src_parts[f"layer{i}.W"]
        if out_d > out_s:
            # filler units: random inputs across the whole previous layer
            Wi[out_s:, :] = glorot_uniform((out_d - out_s, in_d), rng)
        bi = np.zeros(out_d)
        bi[:out_s] = src_parts[f"layer{i}.b"]
        parts[f"layer{i}.W"] = Wi
        parts[f"layer{i}.b"] = bi
    return pack_params(dst_family, parts)


def _conv_append_module(src, dst_family, rng):
    src_fam = src.family
    if dst_family.base_channels != src_fam.base_channels:
        raise UnsupportedEmbeddingError("base_channels differ")
    if dst_family.num_modules != src_fam.num_modules + 1:
        raise UnsupportedEmbeddingError(
            "conv_stack embedding adds exactly one module"
        )
    src_parts = unpack_params(src_fam, src.theta)
    parts = {}
    new_mod = f"mod{src_fam.num_modules}"
    for name, shape in dst_family.param_spec():
        if name.startswith(new_mod + "."):
            if name.endswith(".W"):
                parts[name] = glorot_uniform(shape, rng)
            elif name.endswith(".gamma"):
                parts[name] = np.ones(shape)
            else:  # beta and the gate start at zero; zero gate mutes the module
                parts[name] = np.zeros(shape)
        else:
            parts[name] = src_parts[name].copy()
    return pack_params(dst_family, parts)
