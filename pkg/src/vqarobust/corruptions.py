"""Corruption functions and the severity-level dispatcher.

Every function accepts a uint8 image (returned as uint8) or a float image
in [0, 1] (returned as float, clamped).  Stochastic functions take an
``rng`` that is either a :class:`~vqarobust.imgcore.SeededRng` or a numpy
``Generator``.
"""
from __future__ import annotations

import functools
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from PIL import Image
from scipy import ndimage

from . import imgcore
from .imgcore import Normal, Poisson, SeededRng, Uniform, sample
from .severity import NUM_LEVELS, SeverityTable

MAX_LEVEL = NUM_LEVELS

# The 14 corruptions used for benchmark results, in table order.
BENCHMARK_CORRUPTIONS = (
    "shot_noise",
    "gaussian_noise",
    "impulse_noise",
    "speckle_noise",
    "defocus_blur",
    "zoom_blur",
    "snow",
    "brightness",
    "contrast",
    "saturation",
    "elastic",
    "splatter",
    "pixelate",
    "jpeg_compression",
)


def _pixel_op(fn):
    """Run ``fn`` on the float working copy and return the input's dtype."""

    @functools.wraps(fn)
    def wrapper(img, *args, **kwargs):
        arr = imgcore.check_image(img)
        out = np.clip(fn(imgcore.to_float(arr), *args, **kwargs), 0.0, 1.0)
        return imgcore.to_uint8(out) if arr.dtype == np.uint8 else out

    return wrapper


def _gen(rng) -> np.random.Generator:
    return rng.generator if isinstance(rng, SeededRng) else rng


def _gray(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=-1, keepdims=True)


# --------------------------------------------------------------------------
# Arithmetic noise
# --------------------------------------------------------------------------

@_pixel_op
def additive_noise(x, dist, rng, scale: float = 1 / 255):
    """``r + Y`` with ``Y`` drawn from ``dist`` per pixel and channel.

    Poisson counts are converted to intensity units by ``scale``.
    """
    draws = sample(rng, dist, x.shape)
    if isinstance(dist, Poisson):
        draws = draws * scale
    elif not isinstance(dist, Normal):
        raise TypeError(f"additive noise needs Normal or Poisson, got {dist!r}")
    return x + draws


def gaussian_noise(img, sigma: float, rng):
    return additive_noise(img, Normal(0.0, sigma), rng)


def shot_noise(img, lam: float, rng, scale: float = 1 / 255, mode: str = "additive", rate: float = 60.0):
    """Poisson noise.

    ``additive`` adds ``scale * Poisson(lam)`` to every intensity, which also
    raises the mean brightness by ``scale * lam``.  ``signal_dependent``
    resamples each intensity as ``Poisson(r * rate) / rate``.
    """
    if mode == "additive":
        return additive_noise(img, Poisson(lam), rng, scale=scale)
    if mode == "signal_dependent":
        if rate <= 0:
            raise ValueError(f"rate must be > 0, got {rate}")
        return _signal_poisson(img, rate, rng)
    raise ValueError(f"unknown shot noise mode {mode!r}")


@_pixel_op
def _signal_poisson(x, rate, rng):
    return _gen(rng).poisson(x * rate).astype(np.float64) / rate


@_pixel_op
def speckle_noise(x, sigma: float, rng):
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    return x + x * sample(rng, Normal(0.0, sigma), x.shape)


@_pixel_op
def impulse_noise(x, p: float, rng, variant: str = "salt_pepper"):
    """Replace a fraction ``p`` of pixels (all channels at once).

    ``salt_pepper`` writes white or black with equal odds; ``random_valued``
    writes a level drawn uniformly from [0, 1].
    """
    if not 0 <= p <= 1:
        raise ValueError(f"p must be in [0, 1], got {p}")
    h, w = x.shape[:2]
    hit = sample(rng, Uniform(), (h, w)) < p
    if variant == "salt_pepper":
        values = (sample(rng, Uniform(), (h, w)) < 0.5).astype(np.float64)
    elif variant == "random_valued":
        values = sample(rng, Uniform(), (h, w))
    else:
        raise ValueError(f"unknown impulse variant {variant!r}")
    out = x.copy()
    out[hit] = values[hit][:, None]
    return out


@_pixel_op
def color_invert(x):
    return 1.0 - x


def binary_threshold(img, threshold: float):
    """Per channel: ``255`` where the 8-bit value exceeds ``threshold``, else ``0``."""
    arr = imgcore.check_image(img)
    u8 = arr if arr.dtype == np.uint8 else imgcore.to_uint8(arr)
    out = np.where(u8 > threshold, 255, 0).astype(np.uint8)
    return out if arr.dtype == np.uint8 else out / 255.0


# --------------------------------------------------------------------------
# Image attributes
# --------------------------------------------------------------------------

@_pixel_op
def brightness(x, c: float):
    hsv = imgcore.rgb_to_hsv(x)
    hsv[..., 2] = np.clip(hsv[..., 2] + c, 0.0, 1.0)
    return imgcore.hsv_to_rgb_float(hsv)


@_pixel_op
def saturation(x, c1: float, c2: float = 0.0):
    hsv = imgcore.rgb_to_hsv(x)
    hsv[..., 1] = np.clip(hsv[..., 1] * c1 + c2, 0.0, 1.0)
    return imgcore.hsv_to_rgb_float(hsv)


@_pixel_op
def contrast(x, c: float):
    # mean over all pixels and channels jointly
    mu = x.mean()
    return (x - mu) * c + mu


@_pixel_op
def grayscale(x, invert: bool = False):
    g = np.repeat(_gray(x), 3, axis=-1)
    return 1.0 - g if invert else g


# --------------------------------------------------------------------------
# Blur
# --------------------------------------------------------------------------

@_pixel_op
def defocus_blur(x, radius: float, alias_blur: float = 0.0):
    return imgcore.convolve(x, imgcore.disk_kernel(radius, alias_blur))


def _center_zoom(x: np.ndarray, zoom: float) -> np.ndarray:
    """Crop the central 1/zoom of ``x`` and rescale it to full size."""
    h, w = x.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys = cy + (np.arange(h) - cy) / zoom
    xs = cx + (np.arange(w) - cx) / zoom
    return imgcore.resample_separable(x, ys, xs)


def zoom_factors(max_zoom: float, zoom_step: float) -> np.ndarray:
    if max_zoom < 1:
        raise ValueError(f"max_zoom must be >= 1, got {max_zoom}")
    if zoom_step <= 0:
        return np.array([1.0])
    n = int(math.floor((max_zoom - 1.0) / zoom_step + 1e-9)) + 1
    return 1.0 + zoom_step * np.arange(n)


@_pixel_op
def zoom_blur(x, max_zoom: float, zoom_step: float):
    factors = zoom_factors(max_zoom, zoom_step)
    acc = x.copy()
    for z in factors:
        acc += x if z == 1.0 else _center_zoom(x, z)
    return acc / (len(factors) + 1)


def glass_shuffle(x: np.ndarray, iterations: int, neighborhood: int, rng) -> np.ndarray:
    """Swap every pixel with a random neighbour, ``iterations`` times.

    Returns a permutation of the input's pixels.
    """
    h, w = x.shape[:2]
    d = int(neighborhood)
    if iterations <= 0 or d <= 0 or h <= 2 * d or w <= 2 * d:
        return x.copy()
    gen = _gen(rng)
    perm = list(range(h * w))
    for _ in range(int(iterations)):
        offsets = gen.integers(-d, d + 1, size=(h - 2 * d, w - 2 * d, 2)).tolist()
        for y in range(h - d - 1, d - 1, -1):
            row = offsets[y - d]
            for xx in range(w - d - 1, d - 1, -1):
                dy, dx = row[xx - d]
                a = y * w + xx
                b = (y + dy) * w + (xx + dx)
                perm[a], perm[b] = perm[b], perm[a]
    flat = x.reshape(h * w, -1)
    return flat[np.asarray(perm)].reshape(x.shape)


@_pixel_op
def glass_blur(x, sigma: float, iterations: int, neighborhood: int, rng):
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    out = glass_shuffle(x, iterations, neighborhood, rng)
    if sigma > 0:
        out = imgcore.convolve(out, imgcore.gaussian_kernel(sigma))
    return out


# --------------------------------------------------------------------------
# Weather, physical and digital effects
# --------------------------------------------------------------------------

def snow_layer(shape, mean, std, zoom, threshold, blur_radius, blur_sigma, rng) -> np.ndarray:
    h, w = shape
    gen = _gen(rng)
    layer = gen.normal(mean, std, size=(h, w))
    if zoom > 0 and zoom != 1:
        layer = _center_zoom(layer, zoom)
    layer = np.clip(layer, 0.0, 1.0)
    layer[layer <= threshold] = 0.0
    angle = gen.uniform(-135.0, -45.0)
    if blur_radius > 0 and layer.any():
        layer = imgcore.convolve(layer, imgcore.motion_kernel(int(blur_radius), blur_sigma, angle))
    return np.clip(layer, 0.0, 1.0)


@_pixel_op
def snow(x, rng, mean=0.1, std=0.3, zoom=3.0, threshold=0.5, blur_radius=10, blur_sigma=4.0, blend=0.8):
    layer = snow_layer(x.shape[:2], mean, std, zoom, threshold, blur_radius, blur_sigma, rng)[..., None]
    x = blend * x + (1.0 - blend) * np.maximum(x, _gray(x) * 1.5 + 0.5)
    return x + layer + np.rot90(layer, 2)


def splatter_mask(shape, density: float, smoothing: float, rng) -> np.ndarray:
    """Boolean droplet mask covering ``density`` of the image."""
    h, w = shape
    if density <= 0:
        return np.zeros((h, w), dtype=bool)
    field_ = _gen(rng).normal(size=(h, w))
    if smoothing > 0:
        field_ = ndimage.gaussian_filter(field_, smoothing, mode="wrap")
    if density >= 1:
        return np.ones((h, w), dtype=bool)
    k = int(round(density * h * w))
    order = np.argsort(field_, axis=None, kind="stable")
    mask = np.zeros(h * w, dtype=bool)
    if k > 0:
        mask[order[-k:]] = True
    return mask.reshape(h, w)


@_pixel_op
def splatter(x, rng, density=0.1, smoothing=4.0, opacity=0.6, color=(0.62, 0.66, 0.72)):
    mask = splatter_mask(x.shape[:2], density, smoothing, rng)
    alpha = opacity * mask[..., None]
    return (1.0 - alpha) * x + alpha * np.asarray(color, dtype=np.float64)


def elastic_field(shape, alpha: float, sigma: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Smooth displacement field whose largest vector has length ``alpha`` pixels."""
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    h, w = shape
    gen = _gen(rng)
    dy = gen.uniform(-1.0, 1.0, size=(h, w))
    dx = gen.uniform(-1.0, 1.0, size=(h, w))
    if sigma > 0:
        dy = ndimage.gaussian_filter(dy, sigma, mode="reflect")
        dx = ndimage.gaussian_filter(dx, sigma, mode="reflect")
    peak = np.sqrt(dx**2 + dy**2).max()
    if peak == 0 or alpha == 0:
        return np.zeros((h, w)), np.zeros((h, w))
    return dy * (alpha / peak), dx * (alpha / peak)


@_pixel_op
def elastic(x, alpha: float, sigma: float, rng):
    """Warp by a smooth random field; ``alpha`` and ``sigma`` are in pixels."""
    if alpha == 0:
        return x
    h, w = x.shape[:2]
    dy, dx = elastic_field((h, w), alpha, sigma, rng)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return imgcore.sample_bilinear(x, yy + dy, xx + dx)


@_pixel_op
def pixelate(x, factor: float):
    if not 0 < factor <= 1:
        raise ValueError(f"factor must be in (0, 1], got {factor}")
    h, w = x.shape[:2]
    small = imgcore.resize_bilinear(x, math.ceil(w * factor), math.ceil(h * factor))
    return imgcore.resize_bilinear(small, w, h)


def jpeg_compress(img, quality: int):
    """Baseline JPEG round trip at ``quality`` (1-100)."""
    if not 1 <= int(quality) <= 100:
        raise ValueError(f"quality must be in [1, 100], got {quality}")
    arr = imgcore.check_image(img)
    u8 = arr if arr.dtype == np.uint8 else imgcore.to_uint8(arr)
    buf = io.BytesIO()
    try:
        Image.fromarray(u8, mode="RGB").save(buf, format="JPEG", quality=int(quality))
        buf.seek(0)
        with Image.open(buf) as decoded:
            out = np.asarray(decoded.convert("RGB"), dtype=np.uint8).copy()
    except OSError as exc:
        raise RuntimeError(f"JPEG round trip failed: {exc}") from exc
    return out if arr.dtype == np.uint8 else out / 255.0


# --------------------------------------------------------------------------
# Registry and dispatch
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Corruption:
    name: str
    fn: Callable  # (uint8 image, params, rng, options) -> uint8 image
    stochastic: bool
    benchmark: bool


def _shot(img, p, rng, opts):
    return shot_noise(img, p["lam"], rng, scale=p.get("scale", 1 / 255),
                      mode=opts.get("mode", "additive"), rate=p.get("rate", 60.0))


def _elastic(img, p, rng, opts):
    side = min(img.shape[:2])
    return elastic(img, p["alpha"] * side, p["sigma"] * side, rng)


REGISTRY: dict[str, Corruption] = {}


def register(name: str, fn: Callable, stochastic: bool) -> None:
    REGISTRY[name] = Corruption(name, fn, stochastic, name in BENCHMARK_CORRUPTIONS)


register("gaussian_noise", lambda img, p, rng, o: gaussian_noise(img, p["sigma"], rng), True)
register("shot_noise", _shot, True)
register("impulse_noise", lambda img, p, rng, o: impulse_noise(img, p["p"], rng, "salt_pepper"), True)
register("random_impulse_noise",
         lambda img, p, rng, o: impulse_noise(img, p["p"], rng, "random_valued"), True)
register("speckle_noise", lambda img, p, rng, o: speckle_noise(img, p["sigma"], rng), True)
register("color_invert", lambda img, p, rng, o: color_invert(img), False)
register("binary_threshold", lambda img, p, rng, o: binary_threshold(img, p["threshold"]), False)
register("brightness", lambda img, p, rng, o: brightness(img, p["c"]), False)
register("contrast", lambda img, p, rng, o: contrast(img, p["c"]), False)
register("saturation", lambda img, p, rng, o: saturation(img, p["c1"], p.get("c2", 0.0)), False)
register("grayscale", lambda img, p, rng, o: grayscale(img), False)
register("grayscale_invert", lambda img, p, rng, o: grayscale(img, invert=True), False)
register("defocus_blur", lambda img, p, rng, o: defocus_blur(img, p["radius"], p.get("alias_blur", 0.0)), False)
register("zoom_blur", lambda img, p, rng, o: zoom_blur(img, p["max_zoom"], p["zoom_step"]), False)
register("glass_blur",
         lambda img, p, rng, o: glass_blur(img, p["sigma"], p["iterations"], p["neighborhood"], rng), True)
register("snow", lambda img, p, rng, o: snow(img, rng, **p), True)
register("splatter", lambda img, p, rng, o: splatter(img, rng, **p), True)
register("elastic", _elastic, True)
register("pixelate", lambda img, p, rng, o: pixelate(img, p["factor"]), False)
register("jpeg_compression", lambda img, p, rng, o: jpeg_compress(img, p["quality"]), False)


@dataclass(frozen=True)
class CorruptionSpec:
    corruption: str
    level: int
    params: dict = field(default_factory=dict, compare=False, hash=False)
    seed: int = 0
    options: dict = field(default_factory=dict, compare=False, hash=False)


def resolve(corruption: str, level: int, table: SeverityTable | None = None, seed: int = 0) -> CorruptionSpec:
    """Look up the parameter record for ``(corruption, level)``."""
    if corruption not in REGISTRY:
        raise KeyError(f"unknown corruption {corruption!r}")
    if not 0 <= level <= MAX_LEVEL:
        raise ValueError(f"level must be in 0..{MAX_LEVEL}, got {level}")
    if level == 0:
        return CorruptionSpec(corruption, 0, {}, seed)
    table = table or SeverityTable.default()
    return CorruptionSpec(corruption, level, table.params(corruption, level), seed,
                          dict(table.options.get(corruption, {})))


def apply(spec: CorruptionSpec, img: np.ndarray, image_id: object = "") -> np.ndarray:
    """Apply ``spec`` to a uint8 image; level 0 returns an exact copy."""
    if spec.corruption not in REGISTRY:
        raise KeyError(f"unknown corruption {spec.corruption!r}")
    if not 0 <= spec.level <= MAX_LEVEL:
        raise ValueError(f"level must be in 0..{MAX_LEVEL}, got {spec.level}")
    img = imgcore.check_image(img)
    if img.dtype != np.uint8:
        img = imgcore.to_uint8(img)
    if spec.level == 0:
        return img.copy()
    entry = REGISTRY[spec.corruption]
    rng = SeededRng(spec.seed, image_id, spec.corruption, spec.level) if entry.stochastic else None
    return entry.fn(img, spec.params, rng, spec.options)


def corrupt(img: np.ndarray, corruption: str, level: int, seed: int = 0, image_id: object = "",
            table: SeverityTable | None = None) -> np.ndarray:
    return apply(resolve(corruption, level, table, seed), img, image_id)
