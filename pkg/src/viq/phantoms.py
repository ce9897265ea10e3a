"""Synthetic objects, signals, and the stylized low-field degradation.

Backgrounds are lumpy: a constant base level plus a Poisson number of
isotropic Gaussian blobs with uniformly drawn centers, amplitudes, and
widths.  Blobs are placed on the torus (nearest-image wrapped distance),
which removes edge truncation so the expected mean pixel value has the
closed form ``base_level + rate * E[amp] * 2*pi*E[sigma^2] / (H*W)``.

A signal is a small Gaussian bump of amplitude ``A`` and spread
``sigma``, hard-clipped to zero outside a disk of radius ``3*sigma``.
Signal-present images add one or two such bumps to a background.

The degradation emulates a low-field acquisition: unitary DFT, keep only
the central block of frequencies, add complex Gaussian noise to the
retained components, zero pad back to full size, inverse DFT, magnitude.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .tensors import (
    complex_gaussian_tensor,
    crop_center,
    dft2,
    idft2,
    read_tensor,
    write_tensor,
    zero_pad_center,
)


@dataclass
class SignalSpec:
    """One Gaussian signal: amplitude, center (x0, y0), spread sigma.

    The support radius is always 3*sigma; passing anything else fails.
    """

    amplitude: float
    center: tuple
    sigma: float
    support_radius: float = None

    def __post_init__(self):
        if self.amplitude <= 0:
            raise InvalidInputError(f"amplitude must be > 0, got {self.amplitude}")
        if self.sigma <= 0:
            raise InvalidInputError(f"sigma must be > 0, got {self.sigma}")
        if self.support_radius is None:
            self.support_radius = 3.0 * self.sigma
        elif abs(self.support_radius - 3.0 * self.sigma) > 1e-12:
            raise InvalidInputError("support_radius is fixed at 3*sigma")


@dataclass
class BackgroundConfig:
    height: int
    width: int
    blob_count_mean: float = 5.0
    blob_amplitude_range: tuple = (0.5, 1.0)
    blob_sigma_range: tuple = (1.5, 3.0)
    base_level: float = 0.0

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise InvalidInputError(f"bad image dims {self.height}x{self.width}")
        if self.blob_count_mean < 0:
            raise InvalidInputError("blob_count_mean must be >= 0")
        for name in ("blob_amplitude_range", "blob_sigma_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise InvalidInputError(f"{name} has low > high")
        if self.blob_sigma_range[0] <= 0:
            raise InvalidInputError("blob sigmas must be positive")


@dataclass
class DegradationConfig:
    """Frequency mask extent, k-space noise level, reconstruction mode.

    noise_sigma is the per-component standard deviation of the complex
    noise.  reconstruction is "magnitude" (default) or "real".
    """

    mask_height: int
    mask_width: int
    noise_sigma: float
    reconstruction: str = "magnitude"

    def __post_init__(self):
        if self.mask_height <= 0 or self.mask_width <= 0:
            raise InvalidInputError("mask dims must be positive")
        if self.noise_sigma < 0:
            raise InvalidInputError("noise_sigma must be >= 0")
        if self.reconstruction not in ("magnitude", "real"):
            raise InvalidInputError(f"unknown reconstruction {self.reconstruction!r}")


@dataclass
class SignalConfig:
    """How signals are drawn when building datasets.

    Centers are uniform over ``region`` = (x_lo, x_hi, y_lo, y_hi); when
    region is None it defaults to the image inset by the support radius,
    so signals never cross the border.  In the two-signal class, centers
    are redrawn until the supports are disjoint.
    """

    amplitude: float
    sigma: float = 3.0
    region: tuple = None
    max_tries: int = 1000

    def __post_init__(self):
        if self.amplitude <= 0 or self.sigma <= 0:
            raise InvalidInputError("amplitude and sigma must be > 0")

    def resolved_region(self, h, w):
        if self.region is not None:
            x_lo, x_hi, y_lo, y_hi = self.region
        else:
            r = 3.0 * self.sigma
            x_lo, x_hi, y_lo, y_hi = r, w - r, r, h - r
        if not (0 <= x_lo < x_hi <= w and 0 <= y_lo < y_hi <= h):
            raise InvalidInputError(f"signal region {self.region} does not fit {h}x{w}")
        return x_lo, x_hi, y_lo, y_hi


@dataclass
class LabeledDataset:
    """Images with integer labels in [0, num_classes)."""

    samples: list
    num_classes: int
    split: str
    class_counts: list = field(default=None)

    def __post_init__(self):
        if self.num_classes < 2:
            raise InvalidInputError("need at least two classes")
        if self.split not in ("train", "val", "test"):
            raise InvalidInputError(f"unknown split {self.split!r}")
        counts = [0] * self.num_classes
        for _, label in self.samples:
            if not 0 <= label < self.num_classes:
                raise InvalidInputError(f"label {label} out of range")
            counts[label] += 1
        if self.class_counts is None:
            self.class_counts = counts
        elif list(self.class_counts) != counts:
            raise InvalidInputError("class_counts disagree with samples")

    def __len__(self):
        return len(self.samples)

    def images(self):
        """All images stacked to an (N, H, W) float64 array."""
        return np.stack([img for img, _ in self.samples]).astype(np.float64)

    def labels(self):
        return np.array([label for _, label in self.samples], dtype=np.int64)

    def priors(self):
        total = sum(self.class_counts)
        return np.array(self.class_counts, dtype=np.float64) / total


def _wrapped_delta(coords, center, period):
    """Signed nearest-image offsets on a circle of the given period."""
    return (coords - center + period / 2.0) % period - period / 2.0


def generate_background(cfg, rng):
    """One lumpy background; deterministic given (cfg, stream state).

    Draw order per image: blob count, then (cy, cx, amplitude, sigma)
    for each blob.  Blobs wrap around the image edges.
    """
    h, w = cfg.height, cfg.width
    img = np.full((h, w), float(cfg.base_level))
    count = rng.poisson(cfg.blob_count_mean)
    rows = np.arange(h, dtype=np.float64)
    cols = np.arange(w, dtype=np.float64)
    a_lo, a_hi = cfg.blob_amplitude_range
    s_lo, s_hi = cfg.blob_sigma_range
    for _ in range(count):
        cy = rng.uniform() * h
        cx = rng.uniform() * w
        amp = a_lo + rng.uniform() * (a_hi - a_lo)
        sig = s_lo + rng.uniform() * (s_hi - s_lo)
        dy = _wrapped_delta(rows, cy, h)
        dx = _wrapped_delta(cols, cx, w)
        img += amp * np.exp(-(dy[:, None] ** 2 + dx[None, :] ** 2) / (2.0 * sig * sig))
    return img


def expected_background_mean(cfg):
    """Closed-form expected mean pixel value of generate_background.

    A blob of amplitude a and width s integrates to a*2*pi*s^2; on the
    torus the discrete sum matches the integral to ~1e-6 relative for
    the supported width range.  Uniform draws give E[a] = midpoint and
    E[s^2] = (s_lo^2 + s_lo*s_hi + s_hi^2) / 3.
    """
    a_lo, a_hi = cfg.blob_amplitude_range
    s_lo, s_hi = cfg.blob_sigma_range
    mean_amp = 0.5 * (a_lo + a_hi)
    mean_sig2 = (s_lo**2 + s_lo * s_hi + s_hi**2) / 3.0
    per_blob = mean_amp * 2.0 * np.pi * mean_sig2
    return cfg.base_level + cfg.blob_count_mean * per_blob / (cfg.height * cfg.width)


def make_signal(spec, h, w):
    """Render a signal to an h x w image, exactly zero outside 3*sigma."""
    x0, y0 = spec.center
    if not (0 <= x0 < w and 0 <= y0 < h):
        raise InvalidInputError(f"center ({x0}, {y0}) outside {h}x{w} image")
    rows = np.arange(h, dtype=np.float64)
    cols = np.arange(w, dtype=np.float64)
    d2 = (rows[:, None] - y0) ** 2 + (cols[None, :] - x0) ** 2
    bump = spec.amplitude * np.exp(-d2 / (2.0 * spec.sigma**2))
    return np.where(d2 <= spec.support_radius**2, bump, 0.0)


def insert_signals(bg, specs):
    """Add signals to a background; supports must be pairwise disjoint."""
    bg = np.asarray(bg, dtype=np.float64)
    h, w = bg.shape
    for i in range(len(specs)):
        for j in range(i + 1, len(specs)):
            dx = specs[i].center[0] - specs[j].center[0]
            dy = specs[i].center[1] - specs[j].center[1]
            dist = np.hypot(dx, dy)
            if dist < specs[i].support_radius + specs[j].support_radius:
                raise InvalidInputError(
                    f"signal supports overlap (centers {dist:.2f} px apart)"
                )
    out = bg.copy()
    for spec in specs:
        out += make_signal(spec, h, w)
    return out


def simulate_low_field(img, cfg, rng):
    """Degrade an image through the masked, noisy k-space pipeline."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if cfg.mask_height > h or cfg.mask_width > w:
        raise InvalidInputError(f"mask {cfg.mask_height}x{cfg.mask_width} exceeds image {h}x{w}")
    spec = dft2(img)
    block = crop_center(spec, cfg.mask_height, cfg.mask_width)
    block = block + complex_gaussian_tensor(cfg.mask_height, cfg.mask_width, cfg.noise_sigma, rng)
    rec = idft2(zero_pad_center(block, h, w))
    return np.abs(rec) if cfg.reconstruction == "magnitude" else rec.real


def _normalize_unit(img):
    """Min-max scale to [0, 1]; a constant image maps to all zeros."""
    lo, hi = img.min(), img.max()
    if hi - lo < 1e-12:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def _draw_centers(n, sig_cfg, h, w, rng):
    x_lo, x_hi, y_lo, y_hi = sig_cfg.resolved_region(h, w)
    min_dist = 2.0 * 3.0 * sig_cfg.sigma
    centers = []
    for _ in range(sig_cfg.max_tries):
        x = x_lo + rng.uniform() * (x_hi - x_lo)
        y = y_lo + rng.uniform() * (y_hi - y_lo)
        if all(np.hypot(x - cx, y - cy) >= min_dist for cx, cy in centers):
            centers.append((x, y))
            if len(centers) == n:
                return centers
    raise InvalidInputError(
        f"could not place {n} disjoint signals in region after {sig_cfg.max_tries} tries"
    )


def build_dataset(task, class_counts, bg_cfg, sig_cfg, deg_cfg, rng, split="train"):
    """Paired (low_field, high_field) datasets over the same objects.

    Labels: 0 = signal absent, 1 = one signal, 2 = two signals.  Each
    sample gets its own derived stream, so generation order does not
    matter.  Backgrounds are min-max scaled to [0, 1] before signal
    insertion; the high-field dataset holds the clean objects and the
    low-field dataset their degraded counterparts.
    """
    if task == "binary":
        num_classes = 2
    elif task == "three_class":
        num_classes = 3
    else:
        raise InvalidInputError(f"unknown task {task!r}")
    if np.isscalar(class_counts):
        class_counts = [int(class_counts)] * num_classes
    class_counts = [int(c) for c in class_counts]
    if len(class_counts) != num_classes:
        raise InvalidInputError(f"need {num_classes} class counts, got {len(class_counts)}")
    if any(c < 1 for c in class_counts):
        raise InvalidInputError("every class needs at least one sample")

    labels = [c for c, n in enumerate(class_counts) for _ in range(n)]
    low_samples, high_samples = [], []
    h, w = bg_cfg.height, bg_cfg.width
    for idx, label in enumerate(labels):
        stream = rng.child("sample", idx)
        bg = _normalize_unit(generate_background(bg_cfg, stream.child("bg")))
        if label > 0:
            centers = _draw_centers(label, sig_cfg, h, w, stream.child("sig"))
            specs = [SignalSpec(sig_cfg.amplitude, c, sig_cfg.sigma) for c in centers]
            obj = insert_signals(bg, specs)
        else:
            obj = bg
        degraded = simulate_low_field(obj, deg_cfg, stream.child("noise"))
        high_samples.append((obj, label))
        low_samples.append((degraded, label))

    low = LabeledDataset(low_samples, num_classes, split, list(class_counts))
    high = LabeledDataset(high_samples, num_classes, split, list(class_counts))
    return low, high


def save_dataset(ds, directory, seed=None, extra=None):
    """Persist a dataset: one VIQT file per sample plus manifest.txt."""
    os.makedirs(directory, exist_ok=True)
    for i, (img, _) in enumerate(ds.samples):
        write_tensor(os.path.join(directory, f"sample_{i:05d}.viqt"), img)
    lines = [
        f"num_classes={ds.num_classes}",
        f"class_counts={','.join(str(c) for c in ds.class_counts)}",
        f"split={ds.split}",
        f"seed={'' if seed is None else seed}",
        f"labels={','.join(str(label) for _, label in ds.samples)}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"{key}={value}")
    with open(os.path.join(directory, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(directory):
    """Read a dataset directory; returns (LabeledDataset, manifest dict)."""
    manifest = {}
    with open(os.path.join(directory, "manifest.txt")) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            manifest[key.strip()] = value.strip()
    labels = [int(tok) for tok in manifest["labels"].split(",") if tok != ""]
    samples = []
    for i, label in enumerate(labels):
        img = read_tensor(os.path.join(directory, f"sample_{i:05d}.viqt"))
        samples.append((img, label))
    ds = LabeledDataset(
        samples,
        int(manifest["num_classes"]),
        manifest["split"],
        [int(c) for c in manifest["class_counts"].split(",")],
    )
    return ds, manifest
