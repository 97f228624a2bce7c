"""Square padding, bilinear resizing and metadata encoding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from .io import SEXES, SITES

TARGET_SIZES = (32, 64, 128, 256)


def pad_to_square(image):
    """Centre the image on a black square canvas of side ``max(H, W)``.

    Odd padding puts the extra row/column after the image.
    """
    c, h, w = image.shape
    side = max(h, w)
    if h == w:
        return image
    out = np.zeros((c, side, side), dtype=image.dtype)
    top, left = (side - h) // 2, (side - w) // 2
    out[:, top:top + h, left:left + w] = image
    return out


def _interp_matrix(n_in, n_out):
    """Row i holds the bilinear weights of output pixel i (half-pixel centres)."""
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def resize_bilinear(image, target):
    """Resize a square ``(C, S, S)`` image to ``(C, target, target)``."""
    c, h, w = image.shape
    if h != w:
        raise ConfigError(f"resize expects a square image, got {h}x{w}")
    if target == h:
        return image.copy()
    m = _interp_matrix(h, target)
    out = np.einsum("ij,cjk,lk->cil", m, image.astype(np.float64), m)
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def prepare_image(image, size):
    return resize_bilinear(pad_to_square(image), size)


def stack_images(samples, size):
    """Pad, resize and stack sample images into an ``(n, 3, size, size)`` array."""
    out = np.empty((len(samples), 3, size, size), dtype=np.float32)
    for i, s in enumerate(samples):
        out[i] = prepare_image(s.image, size)
    return out


@dataclass(frozen=True)
class MetaStats:
    age_mean: float
    sex_mode: int
    site_mode: int


def _mode(codes, n_levels):
    if not codes:
        return 0
    counts = np.bincount(codes, minlength=n_levels)
    return int(np.argmax(counts))  # ties -> smallest code


def fit_metadata(samples, fit_on) -> MetaStats:
    fit_on = list(fit_on)
    if not fit_on:
        raise ConfigError("metadata statistics need a non-empty fit set")
    ages = [samples[i].age for i in fit_on if samples[i].age is not None]
    if not ages:
        raise ConfigError("all ages are missing in the fit set")
    sexes = [SEXES.index(samples[i].sex) for i in fit_on if samples[i].sex is not None]
    sites = [SITES.index(samples[i].site) for i in fit_on if samples[i].site is not None]
    return MetaStats(float(np.mean(ages)), _mode(sexes, len(SEXES)),
                     _mode(sites, len(SITES)))


def apply_metadata(samples, stats: MetaStats):
    """Encode ``[age, sex_code, site_code]`` per sample with imputation."""
    out = np.empty((len(samples), 3), dtype=np.float64)
    for i, s in enumerate(samples):
        out[i, 0] = stats.age_mean if s.age is None else s.age
        out[i, 1] = stats.sex_mode if s.sex is None else SEXES.index(s.sex)
        out[i, 2] = stats.site_mode if s.site is None else SITES.index(s.site)
    return out


def encode_metadata(samples, fit_on):
    """Fit imputation statistics on ``fit_on`` only and encode every sample."""
    stats = fit_metadata(samples, fit_on)
    return apply_metadata(samples, stats), stats
