"""Frequency-domain Gaussian smoothing blended with the source image.

An image is transformed per channel with an unnormalized 2-D DFT, every
bin is scaled by a Gaussian gain evaluated at its normalized frequency,
and the inverse transform is mixed back into the original:

    out = alpha * img + (1 - alpha) * inverse(gain * forward(img))

The gain at normalized frequency (x, y) is

    g(x, y) = 1 / (2 pi sigma^2) * exp(-(x^2 + y^2) / (2 sigma^2))

With `normalize_peak` (the default) the gain is divided by its own peak
so the DC gain is exactly 1 and every gain lies in (0, 1]; the raw form
is kept behind the flag because the 1/(2 pi sigma^2) amplitude is part
of the written formula even though it scales a sigma=0.05 filter by ~64.

Frequency coordinates are the centered normalized bin frequencies in
[-0.5, 0.5), laid out in standard unshifted DFT order so the gain grid
multiplies spectra elementwise. The whole pipeline is linear in the image
and touches no pixels nonlinearly (no clamping).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, NumericError, UsageError


@dataclass(frozen=True)
class AdapterConfig:
    sigma: float = 0.05
    alpha: float = 0.9
    normalize_peak: bool = True

    def __post_init__(self):
        if not (self.sigma > 0):
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")


def _check_extent(n: int, what: str):
    if n < 1 or (n & (n - 1)) != 0:
        raise UsageError(f"{what} must be a power of two, got {n}")


def _check_image_shape(img):
    if img.ndim == 2:
        h, w = img.shape
    elif img.ndim == 3:
        h, w, c = img.shape
        if c not in (1, 3):
            raise DimensionError(f"images must have 1 or 3 channels, got {c}")
    else:
        raise DimensionError(f"images must be (H, W) or (H, W, C), got shape {img.shape}")
    _check_extent(h, "image height")
    _check_extent(w, "image width")


def fft2(img) -> np.ndarray:
    """Per-channel unnormalized 2-D DFT over the two spatial axes."""
    arr = np.asarray(img)
    _check_image_shape(arr)
    return np.fft.fft2(arr.astype(np.float64), axes=(0, 1))


def ifft2(spec) -> np.ndarray:
    """Inverse of `fft2` (carries the 1/(H*W) factor); complex output."""
    arr = np.asarray(spec, dtype=np.complex128)
    _check_image_shape(arr)
    return np.fft.ifft2(arr, axes=(0, 1))


def gaussian_gain(x: float, y: float, cfg: AdapterConfig) -> float:
    """Gain at a centered normalized frequency coordinate pair.

    Coordinates live in [-0.5, 0.5); `gain_grid` maps integer bin indices
    there. (0, 0) is the DC bin, whose gain is the peak.
    """
    s2 = cfg.sigma * cfg.sigma
    value = math.exp(-(x * x + y * y) / (2.0 * s2))
    if cfg.normalize_peak:
        return value
    return value / (2.0 * math.pi * s2)


def gain_grid(h: int, w: int, cfg: AdapterConfig) -> np.ndarray:
    """Gaussian gains for every bin of an h-by-w spectrum, DFT bin order."""
    _check_extent(h, "spectrum height")
    _check_extent(w, "spectrum width")
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    s2 = cfg.sigma * cfg.sigma
    g = np.exp(-(fx * fx + fy * fy) / (2.0 * s2))
    if not cfg.normalize_peak:
        g = g / (2.0 * math.pi * s2)
    return g


def apply_filter(spec, cfg: AdapterConfig) -> np.ndarray:
    """Scale every spectrum bin by the Gaussian gain at its frequency."""
    arr = np.asarray(spec, dtype=np.complex128)
    _check_image_shape(arr)
    g = gain_grid(arr.shape[0], arr.shape[1], cfg)
    if arr.ndim == 3:
        g = g[:, :, None]
    return arr * g


def fuse(orig, filtered, alpha: float) -> np.ndarray:
    """Pixel-wise convex blend `alpha * orig + (1 - alpha) * filtered`."""
    a = np.asarray(orig)
    b = np.asarray(filtered)
    if a.shape != b.shape:
        raise DimensionError(f"fuse shape mismatch: {a.shape} vs {b.shape}")
    if not (0.0 <= alpha <= 1.0):
        raise UsageError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 1.0:
        return a.copy()
    if alpha == 0.0:
        return b.copy()
    return (alpha * a.astype(np.float64) + (1.0 - alpha) * b.astype(np.float64)).astype(a.dtype)


def adapt(img, cfg: AdapterConfig = AdapterConfig()) -> np.ndarray:
    """Full smoothing pipeline; float32 in, float32 out, same shape."""
    arr = np.asarray(img, dtype=np.float32)
    _check_image_shape(arr)
    if not np.all(np.isfinite(arr)):
        raise NumericError("image contains non-finite pixels")
    low = ifft2(apply_filter(fft2(arr), cfg))
    residue = float(np.max(np.abs(low.imag))) if low.size else 0.0
    if residue > 1e-6:
        raise NumericError(f"imaginary residue {residue:.3e} after inverse transform")
    blended = cfg.alpha * arr.astype(np.float64) + (1.0 - cfg.alpha) * low.real
    return blended.astype(np.float32)


# ---------------------------------------------------------------------------
# image I/O: raw float32 grid + JSON sidecar, and PGM/PPM import
# ---------------------------------------------------------------------------

def _sidecar(path) -> str:
    return os.fspath(path) + ".json"


def save_image(path, img) -> None:
    """Write a raw little-endian float32 grid and a `<path>.json` sidecar
    holding {height, width, channels}."""
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise DimensionError(f"images must be (H, W) or (H, W, C), got shape {arr.shape}")
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(arr.astype("<f4").tobytes(order="C"))
    with open(_sidecar(path), "w") as fh:
        json.dump({"height": h, "width": w, "channels": c}, fh)
        fh.write("\n")


def load_image(path) -> np.ndarray:
    """Read a grid written by `save_image`; returns float32 (H, W, C)."""
    try:
        with open(_sidecar(path)) as fh:
            meta = json.load(fh)
        h, w, c = int(meta["height"]), int(meta["width"]), int(meta["channels"])
    except (OSError, ValueError, KeyError) as e:
        raise UsageError(f"unreadable image sidecar for {path}: {e}") from e
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != h * w * c:
        raise DimensionError(
            f"image payload holds {raw.size} values, sidecar promises {h}x{w}x{c}"
        )
    return raw.reshape(h, w, c).astype(np.float32)


def load_pnm(path) -> np.ndarray:
    """Import a binary PGM (P5) or PPM (P6) file as float32 in [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()

    def tokens():
        i = 0
        while i < len(blob):
            if blob[i : i + 1] == b"#":
                while i < len(blob) and blob[i] not in b"\r\n":
                    i += 1
            elif blob[i : i + 1].isspace():
                i += 1
            else:
                j = i
                while j < len(blob) and not blob[j : j + 1].isspace():
                    j += 1
                yield i, blob[i:j]
                i = j

    it = tokens()
    try:
        _, magic = next(it)
        if magic not in (b"P5", b"P6"):
            raise UsageError(f"unsupported PNM magic {magic!r} in {path}")
        _, wtok = next(it)
        _, htok = next(it)
        off, mtok = next(it)
        w, h, maxval = int(wtok), int(htok), int(mtok)
    except StopIteration:
        raise UsageError(f"truncated PNM header in {path}") from None
    if not (0 < maxval < 65536):
        raise UsageError(f"PNM maxval {maxval} out of range in {path}")
    channels = 1 if magic == b"P5" else 3
    start = off + len(mtok) + 1  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = w * h * channels
    raw = np.frombuffer(blob, dtype=dtype, count=n, offset=start)
    if raw.size != n:
        raise UsageError(f"PNM payload truncated in {path}")
    img = (raw.astype(np.float32) / float(maxval)).reshape(h, w, channels)
    return img
