"""Restorer: identity contract, gradients, MSE training, Wiener baseline."""

import numpy as np
import pytest

from viq.errors import InvalidInputError
from viq.rng import RandomStream
from viq.phantoms import (
    BackgroundConfig,
    DegradationConfig,
    SignalConfig,
    build_dataset,
)
from viq.observers import TrainConfig
from viq.restoration import (
    RestorationModel,
    _mse_and_grad,
    estimate_power_spectrum,
    init_restorer,
    param_count,
    restoration_mse,
    restore,
    train_restorer,
    wiener_restore,
)
from viq.tensors import center_mask, dft2, idft2


@pytest.mark.parametrize("levels,skips", [(1, True), (2, True), (2, False), (3, True)])
def test_zero_model_is_identity(levels, skips):
    model = RestorationModel(levels, 4, skips, np.zeros(param_count(levels, 4)))
    img = RandomStream(7).normal((16, 16))
    np.testing.assert_array_equal(restore(model, img), img)


@pytest.mark.parametrize("skips", [True, False])
def test_restorer_gradient_matches_finite_differences(skips):
    model = init_restorer(2, 2, skips, RandomStream(101).child("init", skips))
    model.theta = model.theta + RandomStream(777).normal(model.theta.size, sigma=0.05)
    X = RandomStream(55).normal((3, 8, 8))
    Y = RandomStream(56).normal((3, 8, 8))
    _, grad = _mse_and_grad(model, X, Y)
    eps = 1e-5
    fd = np.zeros_like(grad)
    for i in range(model.theta.size):
        keep = model.theta[i]
        model.theta[i] = keep + eps
        up = restoration_mse(model, X, Y)
        model.theta[i] = keep - eps
        down = restoration_mse(model, X, Y)
        model.theta[i] = keep
        fd[i] = (up - down) / (2 * eps)
    denom = np.maximum(np.maximum(np.abs(grad), np.abs(fd)), 1e-8)
    assert (np.abs(grad - fd) / denom).max() < 1e-4


def test_identity_task_trains_to_near_zero_error():
    stream = RandomStream(202)
    images = [stream.normal((16, 16)) for _ in range(24)]
    pairs = [(img, img) for img in images]
    cfg = TrainConfig(learning_rate=0.01, epochs=200, seed=5)
    model = train_restorer(pairs, cfg, levels=2, base_channels=4)
    variance = np.var(np.stack(images))
    best = min(loss for _, loss in model.train_loss_curve)
    assert best < 1e-3 * variance


def test_training_is_deterministic():
    stream = RandomStream(203)
    pairs = [(stream.normal((8, 8)), stream.normal((8, 8))) for _ in range(10)]
    cfg = TrainConfig(learning_rate=1e-3, epochs=5, seed=3)
    a = train_restorer(pairs, cfg, levels=1, base_channels=2)
    b = train_restorer(pairs, cfg, levels=1, base_channels=2)
    np.testing.assert_array_equal(a.theta, b.theta)
    assert a.train_loss_curve == b.train_loss_curve
    assert a.selected_epoch == b.selected_epoch


def test_restore_is_deterministic_and_dim_preserving():
    model = init_restorer(2, 4, True, RandomStream(17))
    img = RandomStream(18).normal((16, 24))
    out1 = restore(model, img)
    out2 = restore(model, img)
    np.testing.assert_array_equal(out1, out2)
    assert out1.shape == img.shape
    assert np.all(np.isfinite(out1))


def test_restore_batch_matches_single():
    model = init_restorer(1, 3, True, RandomStream(19))
    batch = RandomStream(20).normal((4, 8, 8))
    outs = restore(model, batch)
    for i in range(4):
        np.testing.assert_array_equal(outs[i], restore(model, batch[i]))


def test_checkpoint_no_worse_than_initialization():
    stream = RandomStream(204)
    pairs = [(stream.normal((8, 8)), stream.normal((8, 8)) * 0.1) for _ in range(12)]
    model = train_restorer(
        pairs, TrainConfig(learning_rate=1e-3, epochs=15, seed=2), levels=1, base_channels=2
    )
    losses = dict(model.train_loss_curve)
    assert losses[model.selected_epoch] <= losses[0] + 1e-12


def test_restorer_input_validation():
    stream = RandomStream(205)
    cfg = TrainConfig(epochs=1)
    with pytest.raises(InvalidInputError):
        train_restorer([], cfg)
    with pytest.raises(InvalidInputError):
        train_restorer([(stream.normal((8, 8)), stream.normal((8, 8)))] * 3, cfg)
    bad_dims = [(stream.normal((8, 8)), stream.normal((8, 6)))] * 6
    with pytest.raises(InvalidInputError):
        train_restorer(bad_dims, cfg)
    model = init_restorer(2, 2, True, stream)
    with pytest.raises(InvalidInputError):
        restore(model, stream.normal((10, 10)))  # not divisible by 4
    with pytest.raises(InvalidInputError):
        RestorationModel(0, 4, True, np.zeros(1))
    with pytest.raises(InvalidInputError):
        RestorationModel(1, 4, True, np.zeros(3))


def test_restoration_beats_degradation_on_held_out_pairs():
    bg = BackgroundConfig(32, 32)
    sig = SignalConfig(amplitude=0.4, sigma=2.0)
    deg = DegradationConfig(mask_height=16, mask_width=16, noise_sigma=0.08)
    low_tr, high_tr = build_dataset("binary", [30, 30], bg, sig, deg, RandomStream(11))
    low_te, high_te = build_dataset(
        "binary", [15, 15], bg, sig, deg, RandomStream(12), split="test"
    )
    pairs = list(zip(low_tr.images(), high_tr.images()))
    model = train_restorer(
        pairs, TrainConfig(learning_rate=2e-3, epochs=60, seed=9), levels=2, base_channels=4
    )
    Xte, Yte = low_te.images(), high_te.images()
    assert restoration_mse(model, Xte, Yte) < np.mean((Xte - Yte) ** 2)


# ----------------------------------------------------------------- Wiener

def test_wiener_noise_free_full_mask_recovers_input():
    img = RandomStream(31).uniform((12, 12))
    cfg = DegradationConfig(mask_height=12, mask_width=12, noise_sigma=0.0, reconstruction="real")
    S = np.ones((12, 12))
    np.testing.assert_allclose(wiener_restore(img, cfg, S), img, atol=1e-12)


def test_wiener_constant_spectrum_halves_the_passband():
    img = RandomStream(33).uniform((12, 12))
    cfg = DegradationConfig(mask_height=6, mask_width=6, noise_sigma=1.0, reconstruction="real")
    S = np.ones((12, 12))
    got = wiener_restore(img, cfg, S)
    want = idft2(center_mask(0.5 * dft2(img), 6, 6)).real
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_wiener_zero_noise_is_pure_low_pass():
    img = RandomStream(35).uniform((12, 12))
    cfg = DegradationConfig(mask_height=6, mask_width=6, noise_sigma=0.0, reconstruction="real")
    S = RandomStream(36).uniform((12, 12))  # strictly positive
    got = wiener_restore(img, cfg, S + 0.1)
    want = idft2(center_mask(dft2(img), 6, 6)).real
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_wiener_validation():
    img = np.zeros((8, 8))
    cfg = DegradationConfig(mask_height=4, mask_width=4, noise_sigma=0.1)
    with pytest.raises(InvalidInputError):
        wiener_restore(img, cfg, np.ones((8, 6)))
    with pytest.raises(InvalidInputError):
        wiener_restore(img, cfg, -np.ones((8, 8)))


def test_wiener_reduces_mse_on_matched_prior():
    """Linear-MMSE direction: shrinking noisy coefficients toward zero
    with the true signal power beats keeping them, on average."""
    h = w = 16
    stream = RandomStream(37)
    # smooth random fields with a known power spectrum
    yy, xx = np.meshgrid(np.arange(h) - h // 2, np.arange(w) - w // 2, indexing="ij")
    S = 4.0 / (1.0 + 0.3 * (xx**2 + yy**2))
    sigma = 0.5
    cfg = DegradationConfig(mask_height=12, mask_width=12, noise_sigma=sigma, reconstruction="real")
    wiener_err = 0.0
    plain_err = 0.0
    for trial in range(100):
        white = stream.normal((h, w))
        truth = idft2(np.sqrt(S) * dft2(white)).real
        spec = center_mask(dft2(truth), 12, 12)
        noise = center_mask(stream.complex_normal((h, w), sigma=sigma), 12, 12)
        low = np.real(idft2(spec + noise))
        restored = wiener_restore(low, cfg, S)
        wiener_err += np.mean((restored - truth) ** 2)
        plain_err += np.mean((low - truth) ** 2)
    assert wiener_err < plain_err


def test_power_spectrum_estimate_matches_parseval():
    stream = RandomStream(39)
    images = stream.normal((50, 8, 8))
    S = estimate_power_spectrum(images)
    assert S.shape == (8, 8)
    # unitary transform: total spectral power equals total pixel power
    total_pixel = np.mean([np.sum(img**2) for img in images])
    assert abs(S.sum() - total_pixel) < 1e-9
