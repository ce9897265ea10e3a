"""Image and spectrum tensors, the unitary DFT, and tensor file IO.

Conventions used across the package:

* An image is a 2-D float64 array; a spectrum is a 2-D complex128 array.
* Spectra are always stored with DC at the grid center (fftshift
  layout).  ``dft2`` applies the shift, ``idft2`` undoes it.
* The DFT is unitary: both directions carry a 1/sqrt(H*W) factor, so
  energy is preserved and frequency masking arguments need no extra
  normalization.
* For an even dimension, the "centered" block of extent m starts at
  index H//2 - m//2.  All centered-block operations share this rule.

On-disk tensors use the VIQT format: 8-byte magic ``VIQT0001``, a u8
dtype code (1 = float32, 2 = complex64 as re/im float32 pairs), two u32
little-endian dims (rows, cols), then the little-endian payload in row
major order.  Memory stays float64/complex128; files are float32
precision.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import (
    BadMagicError,
    InvalidInputError,
    TruncatedFileError,
    UnknownDtypeError,
)

MAGIC = b"VIQT0001"
DTYPE_REAL = 1
DTYPE_COMPLEX = 2


def _check_2d_nonempty(arr, name):
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise InvalidInputError(f"{name} must be 2-D and nonempty, got shape {arr.shape}")


def dft2(img):
    """Unitary 2-D DFT of an image, returned DC-centered.

    Energy is preserved: sum|spectrum|^2 equals sum(img^2).
    """
    img = np.asarray(img, dtype=np.float64)
    _check_2d_nonempty(img, "img")
    if not np.all(np.isfinite(img)):
        raise InvalidInputError("img contains non-finite values")
    return np.fft.fftshift(np.fft.fft2(img, norm="ortho"))


def idft2(spec):
    """Inverse of :func:`dft2`; returns the complex spatial-domain array.

    Callers take the real part or magnitude as appropriate; a spectrum
    with conjugate symmetry comes back with negligible imaginary part.
    """
    spec = np.asarray(spec, dtype=np.complex128)
    _check_2d_nonempty(spec, "spec")
    if not np.all(np.isfinite(spec)):
        raise InvalidInputError("spec contains non-finite values")
    return np.fft.ifft2(np.fft.ifftshift(spec), norm="ortho")


def _centered_slices(H, W, mh, mw):
    r0 = H // 2 - mh // 2
    c0 = W // 2 - mw // 2
    return slice(r0, r0 + mh), slice(c0, c0 + mw)


def center_mask(spec, mh, mw):
    """Zero every entry outside the centered mh x mw block.

    The input must already be in the DC-centered layout.  The output has
    the same shape; discarded entries are exactly 0.
    """
    spec = np.asarray(spec)
    _check_2d_nonempty(spec, "spec")
    H, W = spec.shape
    if not (0 < mh <= H and 0 < mw <= W):
        raise InvalidInputError(f"mask {mh}x{mw} does not fit spectrum {H}x{W}")
    rows, cols = _centered_slices(H, W, mh, mw)
    out = np.zeros_like(spec)
    out[rows, cols] = spec[rows, cols]
    return out


def crop_center(spec, mh, mw):
    """Extract the centered mh x mw block (same rule as center_mask)."""
    spec = np.asarray(spec)
    _check_2d_nonempty(spec, "spec")
    H, W = spec.shape
    if not (0 < mh <= H and 0 < mw <= W):
        raise InvalidInputError(f"crop {mh}x{mw} does not fit spectrum {H}x{W}")
    rows, cols = _centered_slices(H, W, mh, mw)
    return spec[rows, cols].copy()


def zero_pad_center(spec, H, W):
    """Embed a spectrum at the centered block of an H x W zero spectrum."""
    spec = np.asarray(spec)
    _check_2d_nonempty(spec, "spec")
    mh, mw = spec.shape
    if H < mh or W < mw:
        raise InvalidInputError(f"target {H}x{W} smaller than input {mh}x{mw}")
    rows, cols = _centered_slices(H, W, mh, mw)
    out = np.zeros((H, W), dtype=spec.dtype)
    out[rows, cols] = spec
    return out


def gaussian_tensor(h, w, sigma, rng):
    """h x w array of i.i.d. N(0, sigma^2) draws from rng."""
    if h <= 0 or w <= 0:
        raise InvalidInputError(f"shape must be positive, got {h}x{w}")
    return rng.normal((h, w), sigma=sigma)


def complex_gaussian_tensor(h, w, sigma, rng):
    """h x w complex array; real and imaginary parts i.i.d. N(0, sigma^2).

    sigma is the per-component standard deviation, so E|z|^2 = 2 sigma^2.
    """
    if h <= 0 or w <= 0:
        raise InvalidInputError(f"shape must be positive, got {h}x{w}")
    return rng.complex_normal((h, w), sigma=sigma)


def tensor_bytes(tensor):
    """Serialize a 2-D tensor to VIQT bytes (float32 precision)."""
    tensor = np.asarray(tensor)
    _check_2d_nonempty(tensor, "tensor")
    if not np.all(np.isfinite(tensor)):
        raise InvalidInputError("tensor contains non-finite values")
    if np.iscomplexobj(tensor):
        code = DTYPE_COMPLEX
        payload = tensor.astype("<c8").tobytes(order="C")
    else:
        code = DTYPE_REAL
        payload = tensor.astype("<f4").tobytes(order="C")
    h, w = tensor.shape
    return MAGIC + struct.pack("<BII", code, h, w) + payload


def tensor_from_bytes(data, where="<bytes>"):
    """Parse VIQT bytes; returns float64 or complex128 per the code."""
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{where}: not a VIQT blob")
    if len(data) < len(MAGIC) + 9:
        raise TruncatedFileError(f"{where}: header cut short")
    code, h, w = struct.unpack_from("<BII", data, len(MAGIC))
    if code == DTYPE_REAL:
        itemsize, disk_dtype, mem_dtype = 4, "<f4", np.float64
    elif code == DTYPE_COMPLEX:
        itemsize, disk_dtype, mem_dtype = 8, "<c8", np.complex128
    else:
        raise UnknownDtypeError(f"{where}: dtype code {code}")
    if h == 0 or w == 0:
        raise TruncatedFileError(f"{where}: zero dimension {h}x{w}")
    expected = len(MAGIC) + 9 + h * w * itemsize
    if len(data) < expected:
        raise TruncatedFileError(f"{where}: {len(data)} bytes, expected {expected}")
    flat = np.frombuffer(data, dtype=disk_dtype, count=h * w, offset=len(MAGIC) + 9)
    return flat.astype(mem_dtype).reshape(h, w)


def write_tensor(path, tensor):
    """Write a 2-D tensor to a VIQT file (float32 precision on disk)."""
    with open(path, "wb") as fh:
        fh.write(tensor_bytes(tensor))


def read_tensor(path):
    """Read a VIQT file; returns float64 or complex128 per the dtype code."""
    with open(path, "rb") as fh:
        data = fh.read()
    return tensor_from_bytes(data, where=str(path))


def write_pgm(path, image):
    """Export an image as binary 8-bit PGM, min-max normalized.

    For human inspection only; PGM is never read back.
    """
    image = np.asarray(image, dtype=np.float64)
    _check_2d_nonempty(image, "image")
    lo, hi = image.min(), image.max()
    if hi > lo:
        scaled = (image - lo) / (hi - lo)
    else:
        scaled = np.zeros_like(image)
    pixels = np.round(scaled * 255.0).astype(np.uint8)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes(order="C"))
