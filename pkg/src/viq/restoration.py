"""Image restoration: a small residual encoder-decoder trained with MSE,
plus a closed-form Wiener baseline.

The network predicts a correction that is added to its input, so the
all-zero parameter vector is exactly the identity map and training can
only improve on it.  Internal skip connections add encoder features
into the decoder at matching resolution (toggled by the architecture
flag); the global input skip is always present.

Training reuses the observers module's layer primitives and optimizers.
Pairs are split 8:1:1 into train/val/test deterministically from the
config seed and the returned parameters are those of the epoch with the
lowest validation MSE, epoch 0 included.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, TensorFormatError, TrainingDivergedError
from .rng import RandomStream
from .tensors import center_mask, dft2, idft2, tensor_bytes, tensor_from_bytes
from .observers import layers
from .observers.families import glorot_uniform
from .observers.training import _Adam, _SGD

RESTORE_CHUNK = 32


@dataclass
class RestorationModel:
    """Encoder-decoder weights plus the architecture they instantiate."""

    levels: int
    base_channels: int
    skip_connections: bool
    theta: np.ndarray
    train_loss_curve: list = field(default_factory=list)
    selected_epoch: int = 0

    def __post_init__(self):
        if self.levels < 1:
            raise InvalidInputError("levels must be >= 1")
        if self.base_channels < 1:
            raise InvalidInputError("base_channels must be >= 1")
        self.theta = np.asarray(self.theta, dtype=np.float64)
        expected = param_count(self.levels, self.base_channels)
        if self.theta.shape != (expected,):
            raise InvalidInputError(
                f"theta has {self.theta.shape} entries, architecture needs {expected}"
            )


def param_spec(levels, base):
    """Convolution shapes in forward order."""
    spec = [("enc0.W", (base, 1, 3, 3))]
    for i in range(1, levels):
        spec.append((f"enc{i}.W", (base * 2**i, base * 2 ** (i - 1), 3, 3)))
    top = base * 2 ** (levels - 1)
    spec.append(("mid.W", (top, top, 3, 3)))
    for i in range(levels - 1, 0, -1):
        spec.append((f"dec{i}.W", (base * 2 ** (i - 1), base * 2**i, 3, 3)))
    spec.append(("out.W", (1, base, 3, 3)))
    return spec


def param_count(levels, base):
    return sum(int(np.prod(shape)) for _, shape in param_spec(levels, base))


def _unpack(levels, base, theta):
    parts = {}
    offset = 0
    for name, shape in param_spec(levels, base):
        size = int(np.prod(shape))
        parts[name] = theta[offset : offset + size].reshape(shape)
        offset += size
    return parts


def _pack(levels, base, parts):
    return np.concatenate(
        [np.asarray(parts[name]).ravel() for name, _ in param_spec(levels, base)]
    )


def init_restorer(levels, base_channels, skip_connections, rng):
    parts = {
        name: glorot_uniform(shape, rng) for name, shape in param_spec(levels, base_channels)
    }
    theta = _pack(levels, base_channels, parts)
    return RestorationModel(levels, base_channels, skip_connections, theta)


def _forward(model, X, record=False):
    """X is (N, H, W); returns (N, H, W) restored and optionally caches."""
    parts = _unpack(model.levels, model.base_channels, model.theta)
    x = X[:, None, :, :]
    inputs = x
    caches = []
    skips = []
    for i in range(model.levels):
        out, conv_cache = layers.conv3x3_forward(x, parts[f"enc{i}.W"])
        act, relu_cache = layers.relu_forward(out)
        skips.append(act)
        pooled, pool_cache = layers.avgpool2_forward(act)
        caches.append(("enc", conv_cache, relu_cache, pool_cache))
        x = pooled
    out, conv_cache = layers.conv3x3_forward(x, parts["mid.W"])
    x, relu_cache = layers.relu_forward(out)
    caches.append(("mid", conv_cache, relu_cache))
    for i in range(model.levels - 1, -1, -1):
        up, up_cache = layers.upsample2_forward(x)
        if model.skip_connections:
            up = up + skips[i]
        if i > 0:
            out, conv_cache = layers.conv3x3_forward(up, parts[f"dec{i}.W"])
            x, relu_cache = layers.relu_forward(out)
            caches.append(("dec", up_cache, conv_cache, relu_cache))
        else:
            out, conv_cache = layers.conv3x3_forward(up, parts["out.W"])
            x = out
            caches.append(("out", up_cache, conv_cache))
    restored = x + inputs
    result = restored[:, 0, :, :]
    return (result, caches) if record else (result, None)


def _backward(model, caches, dout):
    """dout is (N, H, W) upstream of the restored image."""
    grads = {}
    dx = dout[:, None, :, :]
    step = len(caches) - 1
    for i in range(model.levels):
        tag = caches[step]
        if i == 0:
            _, up_cache, conv_cache = tag
            dup, dw = layers.conv3x3_backward(conv_cache, dx)
            grads["out.W"] = dw
        else:
            _, up_cache, conv_cache, relu_cache = tag
            drelu = layers.relu_backward(relu_cache, dx)
            dup, dw = layers.conv3x3_backward(conv_cache, drelu)
            grads[f"dec{i}.W"] = dw
        if model.skip_connections:
            # the add is a fan-out: same gradient reaches the encoder act
            grads[f"_skip{i}"] = dup
        dx = layers.upsample2_backward(up_cache, dup)
        step -= 1
    _, conv_cache, relu_cache = caches[step]
    drelu = layers.relu_backward(relu_cache, dx)
    dx, dw = layers.conv3x3_backward(conv_cache, drelu)
    grads["mid.W"] = dw
    step -= 1
    for i in range(model.levels - 1, -1, -1):
        _, conv_cache, relu_cache, pool_cache = caches[step]
        dact = layers.avgpool2_backward(pool_cache, dx)
        if model.skip_connections:
            dact = dact + grads.pop(f"_skip{i}")
        drelu = layers.relu_backward(relu_cache, dact)
        dx, dw = layers.conv3x3_backward(conv_cache, drelu)
        grads[f"enc{i}.W"] = dw
        step -= 1
    return _pack(model.levels, model.base_channels, grads)


def _check_images(model, images):
    images = np.asarray(images, dtype=np.float64)
    single = images.ndim == 2
    if single:
        images = images[None]
    if images.ndim != 3:
        raise InvalidInputError(f"expected (N, H, W) images, got shape {images.shape}")
    h, w = images.shape[1:]
    div = 2**model.levels
    if h % div or w % div:
        raise InvalidInputError(
            f"{h}x{w} images are not divisible by 2^levels = {div}"
        )
    return images, single


def restore(model, low):
    """Deterministic forward pass; dims preserved."""
    images, single = _check_images(model, low)
    out, _ = _forward(model, images)
    return out[0] if single else out


def _mse_and_grad(model, X, Y):
    out, caches = _forward(model, X, record=True)
    diff = out - Y
    mse = float(np.mean(diff**2))
    dout = 2.0 * diff / diff.size
    return mse, _backward(model, caches, dout)


def _chunked_mse_and_grad(model, X, Y):
    n = X.shape[0]
    total_loss = 0.0
    total_grad = np.zeros_like(model.theta)
    for start in range(0, n, RESTORE_CHUNK):
        xs, ys = X[start : start + RESTORE_CHUNK], Y[start : start + RESTORE_CHUNK]
        loss, grad = _mse_and_grad(model, xs, ys)
        w = xs.shape[0] / n
        total_loss += loss * w
        total_grad += grad * w
    return total_loss, total_grad


def restoration_mse(model, X, Y):
    """Mean per-pixel squared error over a paired set, chunked."""
    n = X.shape[0]
    total = 0.0
    for start in range(0, n, RESTORE_CHUNK):
        out, _ = _forward(model, X[start : start + RESTORE_CHUNK])
        diff = out - Y[start : start + RESTORE_CHUNK]
        total += float(np.sum(diff**2))
    return total / (n * X.shape[1] * X.shape[2])


def train_restorer(pairs, cfg, levels=2, base_channels=8, skip_connections=True):
    """Fit the encoder-decoder to (low, high) pairs by MSE.

    The pair list is split 8:1:1 deterministically from cfg.seed; the
    validation part selects the checkpoint, the held-out tenth plays no
    role in training.  Needs at least 5 pairs so every part is nonempty.
    """
    if len(pairs) < 5:
        raise InvalidInputError("need at least 5 pairs")
    lows = np.stack([np.asarray(lo, dtype=np.float64) for lo, _ in pairs])
    highs = np.stack([np.asarray(hi, dtype=np.float64) for _, hi in pairs])
    if lows.shape != highs.shape:
        raise InvalidInputError("low and high images must share dims")

    model = init_restorer(
        levels, base_channels, skip_connections, RandomStream(cfg.seed).child("restorer-init")
    )
    _check_images(model, lows)

    n = len(pairs)
    order = RandomStream(cfg.seed).child("restorer-split").permutation(n)
    n_val = max(1, n // 10)
    n_test = max(1, n // 10)
    n_train = n - n_val - n_test
    train_idx = order[:n_train]
    val_idx = order[n_train : n_train + n_val]
    X, Y = lows[train_idx], highs[train_idx]
    Xv, Yv = lows[val_idx], highs[val_idx]

    opt_cls = _Adam if cfg.optimizer == "adam" else _SGD
    opt = opt_cls(cfg, model.theta.size)
    full_batch = n_train <= 1024
    shuffler = RandomStream(cfg.seed).child("restorer-shuffle")

    train0 = restoration_mse(model, X, Y)
    if not np.isfinite(train0):
        raise TrainingDivergedError("non-finite loss at initialization", 0, 0)
    curve = [(0, train0)]
    best_score = restoration_mse(model, Xv, Yv)
    best_theta = model.theta.copy()
    best_epoch = 0

    for epoch in range(1, cfg.epochs + 1):
        if full_batch:
            loss, grad = _chunked_mse_and_grad(model, X, Y)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingDivergedError("non-finite loss or gradient", epoch, 0)
            model.theta = opt.step(model.theta, grad)
        else:
            order = shuffler.permutation(n_train)
            for b, start in enumerate(range(0, n_train, cfg.batch_size)):
                idx = order[start : start + cfg.batch_size]
                loss, grad = _mse_and_grad(model, X[idx], Y[idx])
                if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                    raise TrainingDivergedError("non-finite loss or gradient", epoch, b)
                model.theta = opt.step(model.theta, grad)
        train_loss = restoration_mse(model, X, Y)
        if not np.isfinite(train_loss):
            raise TrainingDivergedError("non-finite loss after epoch", epoch, 0)
        curve.append((epoch, train_loss))
        score = restoration_mse(model, Xv, Yv)
        if score < best_score:
            best_score = score
            best_theta = model.theta.copy()
            best_epoch = epoch
        if cfg.early_stop_patience and epoch - best_epoch >= cfg.early_stop_patience:
            break

    return RestorationModel(
        levels, base_channels, skip_connections, best_theta, curve, best_epoch
    )


def estimate_power_spectrum(images):
    """Mean squared spectral magnitude over a stack of clean images."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 2:
        images = images[None]
    power = np.zeros(images.shape[1:])
    for img in images:
        power += np.abs(dft2(img)) ** 2
    return power / images.shape[0]


def wiener_restore(low, cfg, signal_power_spectrum):
    """Closed-form linear restoration: per-frequency gain S/(S + sigma^2)
    inside the retained band, zero outside.

    Frequencies with S + sigma^2 = 0 keep gain 1, which makes the
    noise-free case a pure low-pass.
    """
    low = np.asarray(low, dtype=np.float64)
    S = np.asarray(signal_power_spectrum, dtype=np.float64)
    if S.shape != low.shape:
        raise InvalidInputError(f"power spectrum {S.shape} does not match image {low.shape}")
    if np.any(S < 0):
        raise InvalidInputError("power spectrum must be nonnegative")
    denom = S + cfg.noise_sigma**2
    gain = np.where(denom > 0, S / np.where(denom > 0, denom, 1.0), 1.0)
    spec = dft2(low) * gain
    spec = center_mask(spec, cfg.mask_height, cfg.mask_width)
    out = idft2(spec)
    return np.abs(out) if cfg.reconstruction == "magnitude" else out.real


_FORMAT_LINE = "viq-restorer v1"


def save_restorer(path, model):
    """Write a restorer checkpoint: text header plus VIQT weights.

    Weights round-trip at float32 precision, same as observer files.
    """
    lines = [
        _FORMAT_LINE,
        f"levels={model.levels}",
        f"base_channels={model.base_channels}",
        f"skip_connections={'true' if model.skip_connections else 'false'}",
        f"selected_epoch={model.selected_epoch}",
    ]
    header = ("\n".join(lines) + "\n\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + tensor_bytes(model.theta[None, :]))


def load_restorer(path):
    with open(path, "rb") as fh:
        data = fh.read()
    sep = data.find(b"\n\n")
    if sep < 0:
        raise TensorFormatError(f"{path}: missing header terminator")
    header_lines = data[:sep].decode("ascii", errors="replace").splitlines()
    if not header_lines or header_lines[0] != _FORMAT_LINE:
        raise TensorFormatError(f"{path}: not a restorer checkpoint")
    fields = {}
    for line in header_lines[1:]:
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    try:
        levels = int(fields["levels"])
        base = int(fields["base_channels"])
        skips = fields["skip_connections"] == "true"
        selected = int(fields["selected_epoch"])
    except KeyError as missing:
        raise TensorFormatError(f"{path}: header missing {missing}") from None
    theta = tensor_from_bytes(data[sep + 2 :], where=str(path))
    if np.iscomplexobj(theta):
        raise TensorFormatError(f"{path}: weights must be real")
    return RestorationModel(levels, base, skips, theta.ravel(), [], selected)
