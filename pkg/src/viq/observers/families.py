"""Observer families: capacity-limited maps from images to label
probabilities.

Five kinds are supported:

* ``constant``: input-independent logits; the label-marginal family.
* ``tabular``: a per-cell probability table over a finite quantization
  of the input space (fit in closed form, see the tabular module).
* ``linear_logistic``: one affine layer on the flattened image.
* ``mlp``: fully connected ReLU network with given hidden sizes.
* ``conv_stack``: a fixed convolutional stem (3x3 conv, instance norm,
  ReLU, 2x average pooling per stage, channels doubling from
  base_channels, pooling until the spatial extent reaches 8), followed
  by ``num_modules`` shape-preserving residual modules
  ``y = x + s * relu(IN(conv3x3(x)))`` with a per-channel gate ``s``,
  then flatten and a linear head.  The residual form is what makes an
  exact identity embedding from k to k+1 modules possible: a new module
  with gate zero is bitwise inert while its gate still receives
  gradient.

Parameters of every family live in one flat float64 vector; the layout
is given by ``param_spec`` and fixed by the family descriptor alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError
from ..rng import RandomStream
from . import layers

KINDS = ("constant", "tabular", "linear_logistic", "mlp", "conv_stack")


@dataclass(frozen=True)
class ObserverFamily:
    kind: str
    input_dims: tuple
    num_classes: int
    hidden_sizes: tuple = ()
    num_modules: int = 0
    base_channels: int = 0
    num_cells: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown family kind {self.kind!r}")
        if self.num_classes < 2:
            raise InvalidInputError("num_classes must be >= 2")
        if self.kind not in ("constant", "tabular"):
            h, w = self.input_dims
            if h <= 0 or w <= 0:
                raise InvalidInputError(f"bad input dims {self.input_dims}")
        if self.kind == "mlp":
            if not self.hidden_sizes or any(s < 1 for s in self.hidden_sizes):
                raise InvalidInputError("mlp hidden sizes must all be >= 1")
        if self.kind == "conv_stack":
            if not 1 <= self.num_modules <= 8:
                raise InvalidInputError("num_modules must be in [1, 8]")
            if self.base_channels < 1:
                raise InvalidInputError("base_channels must be >= 1")
        if self.kind == "tabular" and self.num_cells < 1:
            raise InvalidInputError("tabular family needs num_cells >= 1")

    def param_spec(self):
        """Ordered (name, shape) layout of the flat parameter vector."""
        L = self.num_classes
        if self.kind == "constant":
            return [("logits", (L,))]
        if self.kind == "tabular":
            return [("table", (self.num_cells, L))]
        h, w = self.input_dims
        d = h * w
        if self.kind == "linear_logistic":
            return [("W", (L, d)), ("b", (L,))]
        if self.kind == "mlp":
            spec = []
            sizes = [d] + list(self.hidden_sizes) + [L]
            for i in range(len(sizes) - 1):
                spec.append((f"layer{i}.W", (sizes[i + 1], sizes[i])))
                spec.append((f"layer{i}.b", (sizes[i + 1],)))
            return spec
        stages, c_final, fh, fw = conv_plan(self)
        spec = []
        for i, (c_in, c_out, _pool) in enumerate(stages):
            spec.append((f"stem{i}.W", (c_out, c_in, 3, 3)))
            spec.append((f"stem{i}.gamma", (c_out,)))
            spec.append((f"stem{i}.beta", (c_out,)))
        for j in range(self.num_modules):
            spec.append((f"mod{j}.W", (c_final, c_final, 3, 3)))
            spec.append((f"mod{j}.gamma", (c_final,)))
            spec.append((f"mod{j}.beta", (c_final,)))
            spec.append((f"mod{j}.gate", (c_final,)))
        spec.append(("head.W", (L, c_final * fh * fw)))
        spec.append(("head.b", (L,)))
        return spec

    def param_count(self):
        return sum(int(np.prod(shape)) for _, shape in self.param_spec())


def conv_plan(family):
    """Stem layout for a conv_stack family on its input dims.

    Returns (stages, final_channels, final_h, final_w) where stages is a
    list of (c_in, c_out, pooled).  Pooling repeats while both spatial
    dims are even and the smaller one exceeds 8, at most three times; a
    too-small input gets a single non-pooling stage so there is always
    at least one convolution lifting the single input channel.
    """
    h, w = family.input_dims
    stages = []
    c_in = 1
    n = 0
    while min(h, w) > 8 and h % 2 == 0 and w % 2 == 0 and n < 3:
        c_out = family.base_channels * (2**n)
        stages.append((c_in, c_out, True))
        c_in = c_out
        h //= 2
        w //= 2
        n += 1
    if not stages:
        stages.append((1, family.base_channels, False))
        c_in = family.base_channels
    return stages, c_in, h, w


def constant_family(num_classes):
    return ObserverFamily("constant", (0, 0), num_classes)


def tabular_family(num_classes, num_cells, input_dims=(0, 0)):
    return ObserverFamily("tabular", input_dims, num_classes, num_cells=num_cells)


def linear_family(h, w, num_classes):
    return ObserverFamily("linear_logistic", (h, w), num_classes)


def mlp_family(h, w, num_classes, hidden_sizes):
    return ObserverFamily("mlp", (h, w), num_classes, hidden_sizes=tuple(hidden_sizes))


def conv_family(h, w, num_classes, num_modules, base_channels):
    return ObserverFamily(
        "conv_stack", (h, w), num_classes,
        num_modules=num_modules, base_channels=base_channels,
    )


def family_descriptor(family):
    """Compact string form used in configs, CSV rows, and checkpoints."""
    if family.kind == "constant":
        return "constant"
    if family.kind == "linear_logistic":
        return "linear_logistic"
    if family.kind == "tabular":
        return f"tabular({family.num_cells})"
    if family.kind == "mlp":
        return "mlp(" + ",".join(str(s) for s in family.hidden_sizes) + ")"
    return f"conv_stack({family.num_modules},{family.base_channels})"


def family_from_descriptor(desc, input_dims, num_classes):
    """Parse a descriptor like ``mlp(16,8)`` or ``conv_stack(2,4)``."""
    desc = desc.strip()
    name, _, rest = desc.partition("(")
    name = name.strip()
    args = []
    if rest:
        if not rest.endswith(")"):
            raise InvalidInputError(f"malformed family descriptor {desc!r}")
        body = rest[:-1].strip()
        if body:
            args = [int(tok) for tok in body.split(",")]
    if name == "constant":
        return constant_family(num_classes)
    if name == "linear_logistic":
        return linear_family(*input_dims, num_classes)
    if name == "tabular":
        if len(args) != 1:
            raise InvalidInputError("tabular descriptor needs (num_cells)")
        return tabular_family(num_classes, args[0], input_dims)
    if name == "mlp":
        if not args:
            raise InvalidInputError("mlp descriptor needs hidden sizes")
        return mlp_family(*input_dims, num_classes, args)
    if name == "conv_stack":
        if len(args) != 2:
            raise InvalidInputError("conv_stack descriptor needs (num_modules, base_channels)")
        return conv_family(*input_dims, num_classes, args[0], args[1])
    raise InvalidInputError(f"unknown family descriptor {desc!r}")


def unpack_params(family, theta):
    """View the flat vector as a dict of named, shaped arrays."""
    theta = np.asarray(theta, dtype=np.float64)
    spec = family.param_spec()
    total = sum(int(np.prod(s)) for _, s in spec)
    if theta.shape != (total,):
        raise InvalidInputError(f"expected {total} parameters, got {theta.shape}")
    out = {}
    offset = 0
    for name, shape in spec:
        size = int(np.prod(shape))
        out[name] = theta[offset : offset + size].reshape(shape)
        offset += size
    return out


def pack_params(family, parts):
    """Inverse of unpack_params; parts is a name -> array dict."""
    spec = family.param_spec()
    chunks = []
    for name, shape in spec:
        arr = np.asarray(parts[name], dtype=np.float64)
        if arr.shape != shape:
            raise InvalidInputError(f"{name}: expected shape {shape}, got {arr.shape}")
        chunks.append(arr.ravel())
    return np.concatenate(chunks)


def init_params(family, rng):
    """Fresh parameters: Glorot-uniform weights, zero biases, unit norm
    scales, unit gates, zero logits."""
    parts = {}
    for name, shape in family.param_spec():
        if name.endswith(".gamma"):
            parts[name] = np.ones(shape)
        elif name.endswith(".gate"):
            parts[name] = np.ones(shape)
        elif name.endswith((".b", ".beta")) or name in ("b", "logits", "table"):
            parts[name] = np.zeros(shape)
        else:
            parts[name] = glorot_uniform(shape, rng)
    return pack_params(family, parts)


def glorot_uniform(shape, rng):
    """Uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    if len(shape) == 2:
        fan_out, fan_in = shape
    elif len(shape) == 4:
        fan_out = shape[0] * shape[2] * shape[3]
        fan_in = shape[1] * shape[2] * shape[3]
    else:
        fan_in = fan_out = int(np.prod(shape))
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return (rng.uniform(shape) * 2.0 - 1.0) * a


def _forward_dense(family, parts, X, record):
    caches = []
    if family.kind == "constant":
        logits = np.broadcast_to(parts["logits"], (X.shape[0], family.num_classes)).copy()
        return logits, caches
    if family.kind == "linear_logistic":
        logits, cache = layers.linear_forward(X, parts["W"], parts["b"])
        if record:
            caches.append(cache)
        return logits, caches
    act = X
    n_layers = len(family.hidden_sizes) + 1
    for i in range(n_layers):
        act, lin_cache = layers.linear_forward(act, parts[f"layer{i}.W"], parts[f"layer{i}.b"])
        if i < n_layers - 1:
            act, relu_cache = layers.relu_forward(act)
        else:
            relu_cache = None
        if record:
            caches.append((lin_cache, relu_cache))
    return act, caches


def _backward_dense(family, parts, caches, dlogits, grads):
    if family.kind == "constant":
        grads["logits"] += dlogits.sum(axis=0)
        return
    if family.kind == "linear_logistic":
        _, dW, db = layers.linear_backward(caches[0], dlogits)
        grads["W"] += dW
        grads["b"] += db
        return
    n_layers = len(family.hidden_sizes) + 1
    dact = dlogits
    for i in reversed(range(n_layers)):
        lin_cache, relu_cache = caches[i]
        if relu_cache is not None:
            dact = layers.relu_backward(relu_cache, dact)
        dact, dW, db = layers.linear_backward(lin_cache, dact)
        grads[f"layer{i}.W"] += dW
        grads[f"layer{i}.b"] += db


def _forward_conv(family, parts, X, record):
    caches = []
    act = X
    stages, c_final, fh, fw = conv_plan(family)
    for i, (_c_in, _c_out, pooled) in enumerate(stages):
        act, conv_cache = layers.conv3x3_forward(act, parts[f"stem{i}.W"])
        act, in_cache = layers.instance_norm_forward(
            act, parts[f"stem{i}.gamma"], parts[f"stem{i}.beta"]
        )
        act, relu_cache = layers.relu_forward(act)
        pool_cache = None
        if pooled:
            act, pool_cache = layers.avgpool2_forward(act)
        if record:
            caches.append(("stem", conv_cache, in_cache, relu_cache, pool_cache))
    for j in range(family.num_modules):
        branch, conv_cache = layers.conv3x3_forward(act, parts[f"mod{j}.W"])
        branch, in_cache = layers.instance_norm_forward(
            branch, parts[f"mod{j}.gamma"], parts[f"mod{j}.beta"]
        )
        branch, relu_cache = layers.relu_forward(branch)
        gate = parts[f"mod{j}.gate"]
        act = act + gate[None, :, None, None] * branch
        if record:
            caches.append(("mod", conv_cache, in_cache, relu_cache, branch, gate))
    n = act.shape[0]
    flat = act.reshape(n, -1)
    logits, head_cache = layers.linear_forward(flat, parts["head.W"], parts["head.b"])
    if record:
        caches.append(("head", head_cache, act.shape))
    return logits, caches


def _backward_conv(family, parts, caches, dlogits, grads):
    stages, _, _, _ = conv_plan(family)
    n_stages = len(stages)
    _kind, head_cache, act_shape = caches[-1]
    dflat, dW, db = layers.linear_backward(head_cache, dlogits)
    grads["head.W"] += dW
    grads["head.b"] += db
    dact = dflat.reshape(act_shape)
    for j in reversed(range(family.num_modules)):
        _tag, conv_cache, in_cache, relu_cache, branch, gate = caches[n_stages + j]
        grads[f"mod{j}.gate"] += np.sum(dact * branch, axis=(0, 2, 3))
        dbranch = dact * gate[None, :, None, None]
        dbranch = layers.relu_backward(relu_cache, dbranch)
        dbranch, dgamma, dbeta = layers.instance_norm_backward(in_cache, dbranch)
        grads[f"mod{j}.gamma"] += dgamma
        grads[f"mod{j}.beta"] += dbeta
        dx, dWc = layers.conv3x3_backward(conv_cache, dbranch)
        grads[f"mod{j}.W"] += dWc
        dact = dact + dx
    for i in reversed(range(n_stages)):
        _tag, conv_cache, in_cache, relu_cache, pool_cache = caches[i]
        if pool_cache is not None:
            dact = layers.avgpool2_backward(pool_cache, dact)
        dact = layers.relu_backward(relu_cache, dact)
        dact, dgamma, dbeta = layers.instance_norm_backward(in_cache, dact)
        grads[f"stem{i}.gamma"] += dgamma
        grads[f"stem{i}.beta"] += dbeta
        dact, dWc = layers.conv3x3_backward(conv_cache, dact)
        grads[f"stem{i}.W"] += dWc


def prepare_inputs(family, images):
    """Shape raw (N, H, W) images for the family's forward pass."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 2:
        images = images[None]
    if family.kind not in ("constant", "tabular"):
        if images.shape[1:] != tuple(family.input_dims):
            raise InvalidInputError(
                f"input dims {images.shape[1:]} do not match family {family.input_dims}"
            )
    if family.kind == "conv_stack":
        return images[:, None, :, :]
    n = images.shape[0]
    return images.reshape(n, -1)


def forward_logits(family, theta, X, record=False):
    """Logits for prepared inputs X; with record=True also the caches.

    For tabular families X is an integer array of cell indices.
    """
    parts = unpack_params(family, theta)
    if family.kind == "tabular":
        cells = np.asarray(X, dtype=np.int64)
        if np.any(cells < 0) or np.any(cells >= family.num_cells):
            raise InvalidInputError("cell index out of range")
        logits = parts["table"][cells]
        return (logits, (parts, cells)) if record else (logits, None)
    if family.kind == "conv_stack":
        logits, caches = _forward_conv(family, parts, X, record)
    else:
        logits, caches = _forward_dense(family, parts, X, record)
    return (logits, (parts, caches)) if record else (logits, None)


def backward_logits(family, theta, cache, dlogits):
    """Parameter gradient given upstream dlogits; flat vector out."""
    if family.kind == "tabular":
        parts, cells = cache
        dtable = np.zeros_like(parts["table"])
        np.add.at(dtable, cells, dlogits)
        return dtable.ravel()
    parts, caches = cache
    grads = {name: np.zeros(shape) for name, shape in family.param_spec()}
    if family.kind == "conv_stack":
        _backward_conv(family, parts, caches, dlogits, grads)
    else:
        _backward_dense(family, parts, caches, dlogits, grads)
    return pack_params(family, grads)


@dataclass
class TrainedObserver:
    """A family member selected by training (or closed-form fitting).

    theta is the flat parameter vector; train_loss_curve holds
    (epoch, mean train NLL) pairs including epoch 0; selected_epoch is
    the checkpoint the returned theta corresponds to.  Tabular
    observers also carry their quantizer.
    """

    family: ObserverFamily
    theta: np.ndarray
    train_loss_curve: list = field(default_factory=list)
    selected_epoch: int = 0
    quantizer: object = None

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        expected = self.family.param_count()
        if self.theta.shape != (expected,):
            raise InvalidInputError(
                f"theta has {self.theta.shape} entries, family needs {expected}"
            )
        if self.family.kind == "tabular" and self.quantizer is None:
            raise InvalidInputError("tabular observer needs a quantizer")


def predict_proba_batch(obs, images):
    """Class probabilities for a stack of images; rows sum to 1."""
    if obs.family.kind == "tabular":
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 2:
            images = images[None]
        cells = np.array([obs.quantizer(img) for img in images], dtype=np.int64)
        logits, _ = forward_logits(obs.family, obs.theta, cells)
    else:
        X = prepare_inputs(obs.family, images)
        logits, _ = forward_logits(obs.family, obs.theta, X)
    return layers.softmax(logits)


def predict_proba(obs, image):
    """Probability vector for a single image."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise InvalidInputError(f"expected a 2-D image, got shape {image.shape}")
    return predict_proba_batch(obs, image[None])[0]
