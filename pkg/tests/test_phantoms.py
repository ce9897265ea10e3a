"""Tests for backgrounds, signals, degradation, and dataset assembly."""

import numpy as np
import numpy.testing as npt
import pytest

import viq.phantoms as phantoms
from viq.errors import InvalidInputError
from viq.phantoms import (
    BackgroundConfig,
    DegradationConfig,
    LabeledDataset,
    SignalConfig,
    SignalSpec,
    build_dataset,
    expected_background_mean,
    generate_background,
    insert_signals,
    load_dataset,
    make_signal,
    save_dataset,
    simulate_low_field,
)
from viq.rng import RandomStream
from viq.tensors import center_mask, dft2


class TestBackgrounds:
    def test_zero_blob_rate_gives_constant(self):
        cfg = BackgroundConfig(8, 8, blob_count_mean=0.0, base_level=0.3)
        npt.assert_array_equal(generate_background(cfg, RandomStream(1)), np.full((8, 8), 0.3))

    def test_fixed_seed_repeats(self):
        cfg = BackgroundConfig(16, 16)
        a = generate_background(cfg, RandomStream(7))
        b = generate_background(cfg, RandomStream(7))
        npt.assert_array_equal(a, b)

    def test_mean_matches_closed_form(self):
        """Empirical mean over 10^4 backgrounds agrees with the blob-mass
        expectation within three standard errors."""
        cfg = BackgroundConfig(
            32, 32,
            blob_count_mean=4.0,
            blob_amplitude_range=(0.5, 1.0),
            blob_sigma_range=(1.5, 3.0),
            base_level=0.1,
        )
        parent = RandomStream(2024)
        means = np.array([
            generate_background(cfg, parent.child(i)).mean() for i in range(10_000)
        ])
        se = means.std(ddof=1) / np.sqrt(len(means))
        assert abs(means.mean() - expected_background_mean(cfg)) < 3 * se

    def test_wraparound_keeps_blob_mass(self):
        """A blob near the border contributes the same total mass as one
        at the center, because placement is on the torus."""
        cfg_on = BackgroundConfig(32, 32, blob_count_mean=0.0)
        base = generate_background(cfg_on, RandomStream(1))
        rows = np.arange(32, dtype=float)

        def blob_sum(cy, cx, sig):
            dy = phantoms._wrapped_delta(rows, cy, 32)
            dx = phantoms._wrapped_delta(rows, cx, 32)
            return np.sum(np.exp(-(dy[:, None] ** 2 + dx[None, :] ** 2) / (2 * sig * sig)))

        npt.assert_allclose(blob_sum(0.5, 0.5, 2.0), blob_sum(16.0, 16.0, 2.0), rtol=1e-9)
        assert base.shape == (32, 32)

    def test_bad_config_rejected(self):
        with pytest.raises(InvalidInputError):
            BackgroundConfig(0, 8)
        with pytest.raises(InvalidInputError):
            BackgroundConfig(8, 8, blob_count_mean=-1.0)
        with pytest.raises(InvalidInputError):
            BackgroundConfig(8, 8, blob_amplitude_range=(2.0, 1.0))
        with pytest.raises(InvalidInputError):
            BackgroundConfig(8, 8, blob_sigma_range=(0.0, 1.0))


class TestSignals:
    def test_peak_value_is_amplitude(self):
        spec = SignalSpec(0.2, (10.0, 12.0), 3.0)
        img = make_signal(spec, 24, 24)
        npt.assert_allclose(img[12, 10], 0.2, rtol=1e-12)

    def test_support_is_three_sigma(self):
        """sigma = 3 gives a hard support disk of radius 9 pixels."""
        spec = SignalSpec(1.0, (16.0, 16.0), 3.0)
        assert spec.support_radius == 9.0
        img = make_signal(spec, 33, 33)
        assert img[16, 16 + 9] > 0  # distance 9.0 is inside (<=)
        d = np.hypot(np.arange(33)[:, None] - 16, np.arange(33)[None, :] - 16)
        # everything past the support radius, e.g. distance 9.5, is exactly zero
        assert np.all(img[d > 9.0] == 0.0)
        assert np.any(d[img == 0.0] > 9.4)

    def test_value_at_one_sigma(self):
        spec = SignalSpec(0.5, (8.0, 8.0), 2.0)
        img = make_signal(spec, 17, 17)
        npt.assert_allclose(img[8, 10], 0.5 * np.exp(-0.5), rtol=1e-12)

    def test_center_outside_rejected(self):
        with pytest.raises(InvalidInputError):
            make_signal(SignalSpec(1.0, (40.0, 5.0), 2.0), 16, 16)

    def test_support_radius_locked(self):
        with pytest.raises(InvalidInputError):
            SignalSpec(1.0, (5.0, 5.0), 2.0, support_radius=7.0)
        assert SignalSpec(1.0, (5.0, 5.0), 2.0, support_radius=6.0).support_radius == 6.0


class TestInsertSignals:
    def test_empty_list_is_identity(self):
        bg = RandomStream(1).normal((8, 8))
        npt.assert_array_equal(insert_signals(bg, []), bg)

    def test_single_signal_additivity(self):
        bg = RandomStream(2).normal((20, 20))
        spec = SignalSpec(0.3, (10.0, 9.0), 2.0)
        out = insert_signals(bg, [spec])
        npt.assert_allclose(out - bg, make_signal(spec, 20, 20), atol=1e-15)

    def test_two_disjoint_signals_total_mass(self):
        """Total added mass equals twice the single-signal mass."""
        bg = np.zeros((40, 40))
        a = SignalSpec(0.25, (10.0, 10.0), 1.5)
        b = SignalSpec(0.25, (30.0, 30.0), 1.5)
        single_mass = np.sum(make_signal(a, 40, 40))
        out = insert_signals(bg, [a, b])
        npt.assert_allclose(np.sum(out), 2.0 * single_mass, rtol=1e-12)

    def test_overlapping_supports_rejected(self):
        bg = np.zeros((32, 32))
        a = SignalSpec(0.25, (10.0, 10.0), 2.0)
        b = SignalSpec(0.25, (15.0, 10.0), 2.0)  # 5 px apart, need 12
        with pytest.raises(InvalidInputError):
            insert_signals(bg, [a, b])


class TestDegradation:
    def test_lossless_when_full_mask_no_noise(self):
        img = np.abs(RandomStream(3).normal((16, 16))) + 0.1
        cfg = DegradationConfig(16, 16, 0.0)
        out = simulate_low_field(img, cfg, RandomStream(0))
        npt.assert_allclose(out, img, atol=1e-6)

    def test_half_mask_matches_explicit_lowpass(self):
        """Noiseless masking equals a direct mask-multiply in frequency
        space computed with numpy's fft directly."""
        img = RandomStream(4).normal((16, 16)) + 2.0
        cfg = DegradationConfig(8, 8, 0.0)
        out = simulate_low_field(img, cfg, RandomStream(0))

        spec = np.fft.fftshift(np.fft.fft2(img, norm="ortho"))
        keep = np.zeros((16, 16), dtype=bool)
        keep[8 - 4 : 8 + 4, 8 - 4 : 8 + 4] = True
        rec = np.fft.ifft2(np.fft.ifftshift(spec * keep), norm="ortho")
        npt.assert_allclose(out, np.abs(rec), atol=1e-10)

    def test_fixed_seed_bit_identical(self):
        img = RandomStream(5).normal((16, 16))
        cfg = DegradationConfig(8, 8, 0.5)
        a = simulate_low_field(img, cfg, RandomStream(42))
        b = simulate_low_field(img, cfg, RandomStream(42))
        npt.assert_array_equal(a, b)

    def test_real_mode(self):
        img = RandomStream(6).normal((8, 8))
        cfg = DegradationConfig(8, 8, 0.0, reconstruction="real")
        npt.assert_allclose(simulate_low_field(img, cfg, RandomStream(0)), img, atol=1e-9)

    def test_nested_masks_monotone_energy(self):
        """Shrinking the mask never increases retained spectral energy."""
        img = RandomStream(7).normal((16, 16))
        spec = dft2(img)
        energies = [
            np.sum(np.abs(center_mask(spec, m, m)) ** 2) for m in (16, 12, 8, 4, 2)
        ]
        assert all(e1 >= e2 - 1e-12 for e1, e2 in zip(energies, energies[1:]))

    def test_oversize_mask_rejected(self):
        cfg = DegradationConfig(32, 32, 0.0)
        with pytest.raises(InvalidInputError):
            simulate_low_field(np.zeros((16, 16)), cfg, RandomStream(0))


def _small_cfgs(task_sigma=1.0):
    bg = BackgroundConfig(24, 24, blob_count_mean=3.0, blob_sigma_range=(1.0, 2.0))
    sig = SignalConfig(amplitude=0.4, sigma=task_sigma)
    deg = DegradationConfig(12, 12, 0.05)
    return bg, sig, deg


class TestBuildDataset:
    def test_binary_counts(self):
        bg, sig, deg = _small_cfgs()
        low, high = build_dataset("binary", 10, bg, sig, deg, RandomStream(1))
        assert len(low) == len(high) == 20
        assert low.class_counts == [10, 10] == high.class_counts

    def test_imbalanced_three_class_priors(self):
        bg, sig, deg = _small_cfgs()
        low, _ = build_dataset("three_class", [100, 10, 10], bg, sig, deg, RandomStream(2))
        npt.assert_allclose(low.priors(), [100 / 120, 10 / 120, 10 / 120], rtol=1e-12)

    def test_identical_seeds_identical_datasets(self):
        bg, sig, deg = _small_cfgs()
        low1, high1 = build_dataset("binary", 3, bg, sig, deg, RandomStream(9))
        low2, high2 = build_dataset("binary", 3, bg, sig, deg, RandomStream(9))
        for (a, la), (b, lb) in zip(low1.samples, low2.samples):
            npt.assert_array_equal(a, b)
            assert la == lb
        for (a, _), (b, _) in zip(high1.samples, high2.samples):
            npt.assert_array_equal(a, b)

    def test_pairing_shares_labels_and_objects(self):
        """The degraded sample regenerates from the paired clean object."""
        bg, sig, deg = _small_cfgs()
        low, high = build_dataset("binary", 4, bg, sig, deg, RandomStream(3))
        npt.assert_array_equal(low.labels(), high.labels())
        for i, ((lo_img, _), (hi_img, _)) in enumerate(zip(low.samples, high.samples)):
            stream = RandomStream(3).child("sample", i).child("noise")
            npt.assert_array_equal(simulate_low_field(hi_img, deg, stream), lo_img)

    def test_signal_adds_to_normalized_background(self):
        """Label-1 high-field sample minus its background is exactly the
        rendered signal for the drawn center."""
        bg_cfg, sig, deg = _small_cfgs()
        low, high = build_dataset("binary", 2, bg_cfg, sig, deg, RandomStream(11))
        idx = int(np.argmax(high.labels() == 1))
        stream = RandomStream(11).child("sample", idx)
        background = generate_background(bg_cfg, stream.child("bg"))
        background = (background - background.min()) / (background.max() - background.min())
        (center,) = phantoms._draw_centers(1, sig, 24, 24, stream.child("sig"))
        expected = make_signal(SignalSpec(sig.amplitude, center, sig.sigma), 24, 24)
        npt.assert_allclose(high.samples[idx][0] - background, expected, atol=1e-12)

    def test_zero_count_rejected(self):
        bg, sig, deg = _small_cfgs()
        with pytest.raises(InvalidInputError):
            build_dataset("binary", [5, 0], bg, sig, deg, RandomStream(1))

    def test_unknown_task_rejected(self):
        bg, sig, deg = _small_cfgs()
        with pytest.raises(InvalidInputError):
            build_dataset("five_class", 3, bg, sig, deg, RandomStream(1))

    def test_two_signal_class_supports_disjoint(self):
        bg_cfg = BackgroundConfig(48, 48, blob_count_mean=2.0)
        sig = SignalConfig(amplitude=0.4, sigma=1.5)
        deg = DegradationConfig(24, 24, 0.0)
        low, high = build_dataset("three_class", [1, 1, 6], bg_cfg, sig, deg, RandomStream(4))
        assert high.class_counts == [1, 1, 6]


class TestLabeledDataset:
    def test_counts_inferred(self):
        samples = [(np.zeros((2, 2)), 0), (np.zeros((2, 2)), 1), (np.zeros((2, 2)), 1)]
        ds = LabeledDataset(samples, 2, "train")
        assert ds.class_counts == [1, 2]
        npt.assert_array_equal(ds.labels(), [0, 1, 1])
        assert ds.images().shape == (3, 2, 2)

    def test_label_out_of_range(self):
        with pytest.raises(InvalidInputError):
            LabeledDataset([(np.zeros((2, 2)), 5)], 2, "train")

    def test_inconsistent_counts_rejected(self):
        with pytest.raises(InvalidInputError):
            LabeledDataset([(np.zeros((2, 2)), 0)], 2, "train", class_counts=[0, 1])

    def test_bad_split_rejected(self):
        with pytest.raises(InvalidInputError):
            LabeledDataset([(np.zeros((2, 2)), 0), (np.zeros((2, 2)), 1)], 2, "dev")


class TestDatasetIO:
    def test_round_trip(self, tmp_path):
        bg, sig, deg = _small_cfgs()
        low, _ = build_dataset("binary", 3, bg, sig, deg, RandomStream(6))
        save_dataset(low, tmp_path / "ds", seed=6, extra={"noise_sigma": 0.05})
        loaded, manifest = load_dataset(tmp_path / "ds")
        assert len(loaded) == len(low)
        assert loaded.num_classes == 2 and loaded.split == "train"
        assert loaded.class_counts == low.class_counts
        assert manifest["seed"] == "6"
        assert manifest["noise_sigma"] == "0.05"
        for (a, la), (b, lb) in zip(loaded.samples, low.samples):
            assert la == lb
            npt.assert_array_equal(a, b.astype(np.float32).astype(np.float64))
