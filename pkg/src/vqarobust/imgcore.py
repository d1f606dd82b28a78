"""Pixel-level primitives shared by the corruption functions.

Images are ``numpy`` arrays of shape ``(H, W, 3)``.  Stored images are
``uint8`` in RGB order; corruptions work on ``float64`` arrays scaled to
``[0, 1]`` and quantize exactly once at the end (see :func:`to_uint8`).
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import ndimage, signal


def check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must be at least 1x1")
    return img


def to_float(img: np.ndarray) -> np.ndarray:
    """uint8 [0, 255] -> float64 [0, 1]."""
    img = check_image(img)
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    return img.astype(np.float64, copy=True)


def to_uint8(x: np.ndarray) -> np.ndarray:
    """Clamp a [0, 1] float image and quantize, rounding half away from zero."""
    x = np.clip(np.nan_to_num(np.asarray(x, dtype=np.float64), nan=0.0), 0.0, 1.0)
    return np.floor(x * 255.0 + 0.5).astype(np.uint8)


# --------------------------------------------------------------------------
# HSV (hexcone model); hue in degrees [0, 360), s and v in [0, 1]
# --------------------------------------------------------------------------

def rgb_to_hsv(img: np.ndarray) -> np.ndarray:
    """Convert an RGB image (uint8, or float in [0, 1]) to HSV.

    Achromatic pixels get hue 0.
    """
    rgb = to_float(img)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    delta = v - mn
    s = np.where(v > 0, delta / np.where(v > 0, v, 1.0), 0.0)

    safe = np.where(delta > 0, delta, 1.0)
    h = np.zeros_like(v)
    rmax = (v == r) & (delta > 0)
    gmax = (v == g) & (delta > 0) & ~rmax
    bmax = (delta > 0) & ~rmax & ~gmax
    h = np.where(rmax, np.mod((g - b) / safe, 6.0), h)
    h = np.where(gmax, (b - r) / safe + 2.0, h)
    h = np.where(bmax, (r - g) / safe + 4.0, h)
    h = h * 60.0
    h = np.where(h >= 360.0, h - 360.0, h)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb_float(hsv: np.ndarray) -> np.ndarray:
    """HSV -> RGB float in [0, 1] (saturation and value are clamped first)."""
    hsv = np.asarray(hsv, dtype=np.float64)
    h = np.mod(hsv[..., 0], 360.0) / 60.0
    s = np.clip(hsv[..., 1], 0.0, 1.0)
    v = np.clip(hsv[..., 2], 0.0, 1.0)
    c = v * s
    x = c * (1.0 - np.abs(np.mod(h, 2.0) - 1.0))
    m = v - c
    sector = np.floor(h).astype(np.int64) % 6
    zeros = np.zeros_like(c)
    # (r, g, b) per hexcone sector
    table = [
        (c, x, zeros),
        (x, c, zeros),
        (zeros, c, x),
        (zeros, x, c),
        (x, zeros, c),
        (c, zeros, x),
    ]
    out = np.empty(hsv.shape[:-1] + (3,), dtype=np.float64)
    for ch in range(3):
        out[..., ch] = np.choose(sector, [t[ch] for t in table]) + m
    return np.clip(out, 0.0, 1.0)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    """HSV -> 8-bit RGB."""
    return to_uint8(hsv_to_rgb_float(hsv))


# --------------------------------------------------------------------------
# Kernels and convolution
# --------------------------------------------------------------------------

# kernels up to this many taps are convolved directly, larger ones via FFT
_DIRECT_MAX = 49


def convolve(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Channel-wise 2-D convolution with edge replication at the borders.

    Accepts ``(H, W)`` or ``(H, W, C)`` float arrays and uint8 images.  uint8
    input gives clamped uint8 output; float input gives float output.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
        raise ValueError(f"kernel must be 2-D with odd size, got {kernel.shape}")
    arr = np.asarray(img)
    quantize = arr.dtype == np.uint8
    x = arr.astype(np.float64) / 255.0 if quantize else arr.astype(np.float64)
    if kernel.size <= _DIRECT_MAX:
        if x.ndim == 2:
            out = ndimage.convolve(x, kernel, mode="nearest")
        else:
            out = np.stack(
                [ndimage.convolve(x[..., ch], kernel, mode="nearest") for ch in range(x.shape[2])],
                axis=-1,
            )
    else:
        ph, pw = kernel.shape[0] // 2, kernel.shape[1] // 2
        pad = ((ph, ph), (pw, pw)) + ((0, 0),) * (x.ndim - 2)
        k = kernel if x.ndim == 2 else kernel[..., None]
        out = signal.fftconvolve(np.pad(x, pad, mode="edge"), k, mode="valid", axes=(0, 1))
    return to_uint8(out) if quantize else out


def gaussian_kernel(sigma: float, radius: int | None = None) -> np.ndarray:
    if sigma <= 0:
        return np.ones((1, 1))
    if radius is None:
        radius = max(1, int(math.ceil(3.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(t**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def disk_kernel(radius: float, alias_blur: float = 0.0) -> np.ndarray:
    """Normalized indicator of a centered disk, optionally Gaussian-smoothed."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    pad = int(math.ceil(3.0 * alias_blur)) if alias_blur > 0 else 0
    half = int(math.floor(radius)) + pad
    t = np.arange(-half, half + 1, dtype=np.float64)
    yy, xx = np.meshgrid(t, t, indexing="ij")
    disk = (xx**2 + yy**2 <= radius**2).astype(np.float64)
    if alias_blur > 0:
        disk = ndimage.gaussian_filter(disk, alias_blur, mode="constant")
    return disk / disk.sum()


def motion_kernel(radius: int, sigma: float, angle: float) -> np.ndarray:
    """One-sided line kernel pointing along ``angle`` (degrees), Gaussian weighted."""
    radius = int(radius)
    size = 2 * radius + 1
    k = np.zeros((size, size))
    if radius == 0:
        k[0, 0] = 1.0
        return k
    theta = math.radians(angle)
    dx, dy = math.cos(theta), -math.sin(theta)
    for step in range(radius + 1):
        w = math.exp(-(step**2) / (2.0 * sigma**2)) if sigma > 0 else 1.0
        x = radius + step * dx
        y = radius + step * dy
        # bilinear splat
        x0, y0 = int(math.floor(x)), int(math.floor(y))
        fx, fy = x - x0, y - y0
        for yy, wy in ((y0, 1 - fy), (y0 + 1, fy)):
            for xx, wx in ((x0, 1 - fx), (x0 + 1, fx)):
                if 0 <= yy < size and 0 <= xx < size:
                    k[yy, xx] += w * wy * wx
    return k / k.sum()


# --------------------------------------------------------------------------
# Resampling
# --------------------------------------------------------------------------

def sample_bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Bilinear lookup of ``img`` at fractional coordinates; edges replicated."""
    h, w = img.shape[:2]
    ys = np.clip(ys, 0.0, h - 1)
    xs = np.clip(xs, 0.0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    if img.ndim == 3:
        fy = fy[..., None]
        fx = fx[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _aligned_coords(n_out: int, n_in: int) -> np.ndarray:
    if n_out == 1:
        # no corners to align; sample the center
        return np.array([(n_in - 1) / 2.0])
    return np.arange(n_out, dtype=np.float64) * ((n_in - 1) / (n_out - 1))


def resample_separable(x: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Bilinear resampling on the grid ``ys x xs`` (1-D coordinate vectors).

    Same result as :func:`sample_bilinear` on the meshgrid, computed as two
    1-D passes.
    """
    h, w = x.shape[:2]
    ys = np.clip(np.asarray(ys, dtype=np.float64), 0.0, h - 1)
    xs = np.clip(np.asarray(xs, dtype=np.float64), 0.0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    extra = (1,) * (x.ndim - 2)
    fy = (ys - y0).reshape((-1, 1) + extra)
    fx = (xs - x0).reshape((1, -1) + extra)
    rows = x[y0] * (1 - fy) + x[y1] * fy
    return rows[:, x0] * (1 - fx) + rows[:, x1] * fx


def resize_bilinear(img: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """Corner-aligned bilinear resize.

    uint8 input is returned as uint8; float input stays float.
    """
    if new_w < 1 or new_h < 1:
        raise ValueError("target size must be at least 1x1")
    arr = np.asarray(img)
    quantize = arr.dtype == np.uint8
    x = arr.astype(np.float64) / 255.0 if quantize else arr.astype(np.float64)
    h, w = x.shape[:2]
    if (new_h, new_w) == (h, w):
        return arr.copy()
    out = resample_separable(x, _aligned_coords(new_h, h), _aligned_coords(new_w, w))
    return to_uint8(out) if quantize else out


# --------------------------------------------------------------------------
# Seeded randomness
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Normal:
    mean: float = 0.0
    std: float = 1.0


@dataclass(frozen=True)
class Poisson:
    lam: float


@dataclass(frozen=True)
class Uniform:
    low: float = 0.0
    high: float = 1.0


Distribution = Union[Normal, Poisson, Uniform]


def _key_words(part: object) -> list[int]:
    if isinstance(part, (int, np.integer)) and part >= 0:
        return [int(part) & 0xFFFFFFFF, int(part) >> 32 & 0xFFFFFFFF]
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


class SeededRng:
    """Counter-based random stream keyed by ``(image id, corruption, level)``.

    The stream depends only on the root seed and the key, never on the order
    in which streams are created, so parallel generation is reproducible.
    """

    def __init__(self, root_seed: int, image_id: object = "", corruption: str = "", level: int = 0):
        self.root_seed = int(root_seed)
        self.key = (image_id, corruption, int(level))
        words = _key_words(self.root_seed)
        for part in self.key:
            words += _key_words(part)
        self.generator = np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))

    def __repr__(self) -> str:
        return f"SeededRng(root_seed={self.root_seed}, key={self.key!r})"


def sample(rng: SeededRng | np.random.Generator, dist: Distribution, n) -> np.ndarray:
    """Draw ``n`` values (an int or a shape) from ``dist``."""
    gen = rng.generator if isinstance(rng, SeededRng) else rng
    if isinstance(dist, Normal):
        if not dist.std >= 0:
            raise ValueError(f"normal std must be >= 0, got {dist.std}")
        return gen.normal(dist.mean, dist.std, size=n)
    if isinstance(dist, Poisson):
        if not dist.lam >= 0:
            raise ValueError(f"poisson rate must be >= 0, got {dist.lam}")
        return gen.poisson(dist.lam, size=n).astype(np.float64)
    if isinstance(dist, Uniform):
        if dist.high < dist.low:
            raise ValueError("uniform high must be >= low")
        return gen.uniform(dist.low, dist.high, size=n)
    raise TypeError(f"unknown distribution {dist!r}")
