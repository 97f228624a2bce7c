"""Procedural stand-in for a dermoscopy dataset.

Each image is a soft-edged blob ("lesion") on a shaded skin-tone background.
Malignant samples get, on average, a more irregular border and a more
heterogeneous colour texture; ``cue_strength`` scales that difference.
Metadata nudges which samples are drawn as positive through a weak risk
score. ``aux=True`` produces a balanced set from a shifted source domain.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError
from .io import SEXES, SITES, Sample
from .preprocess import _interp_matrix

# shares roughly following the metadata summary of the ISIC 2020 release
SEX_PROBS = (0.482, 0.516, 0.002)
SITE_PROBS = (0.06, 0.15, 0.26, 0.51, 0.01, 0.01)
VEIL_RGB = np.array([0.40, 0.50, 0.75])
NEG_VEIL_RATE = 0.05


@dataclass
class SynthConfig:
    n_samples: int = 2000
    n_patients: int = 125
    patient_concentration: float = 2.0  # Dirichlet concentration of images per patient
    positive_rate: float = 0.0176
    resolution: int = 64
    seed: int = 0
    aux: bool = False
    cue_strength: float = 1.0
    meta_strength: float = 1.0
    age_missing: float = 0.01
    sex_missing: float = 0.005
    site_missing: float = 0.015

    def __post_init__(self):
        if self.aux:
            self.positive_rate = 0.5
        if not 0 < self.positive_rate < 1:
            raise ConfigError("positive_rate must lie in (0, 1)")
        if self.n_patients < 1 or self.n_samples < self.n_patients:
            raise ConfigError("need 1 <= n_patients <= n_samples")
        if self.resolution < 8:
            raise ConfigError("resolution must be at least 8")

    def to_dict(self):
        return asdict(self)


def _smooth_field(rng, size, coarse=6, channels=1):
    m = _interp_matrix(coarse, size)
    g = rng.standard_normal((channels, coarse, coarse))
    return np.einsum("ij,cjk,lk->cil", m, g, m)


def _patient_counts(cfg, rng):
    w = rng.dirichlet(np.full(cfg.n_patients, cfg.patient_concentration))
    extra = rng.multinomial(cfg.n_samples - cfg.n_patients, w)
    return extra + 1


def _lesion_image(rng, label, skin, cfg):
    r = cfg.resolution
    cue = cfg.cue_strength * label
    shift = 1.0 if cfg.aux else 0.0
    yy, xx = np.mgrid[0:r, 0:r] + 0.5
    # background: skin tone with shading and fine grain
    shade = 1.0 + 0.06 * _smooth_field(rng, r, 3)[0]
    bg = skin[:, None, None] * shade[None]
    bg = bg + 0.015 * rng.standard_normal((3, r, r))
    # lesion geometry
    cy, cx = r / 2 + rng.normal(0, 0.05 * r, 2)
    r0 = rng.uniform(0.18, 0.30) * r
    irregular = abs(rng.normal(0.05 + 0.12 * cue + 0.03 * shift, 0.03))
    theta = np.arctan2(yy - cy, xx - cx)
    dist = np.hypot(yy - cy, xx - cx)
    ks = np.arange(2, 7)
    amp = rng.standard_normal(ks.size) / ks
    amp /= np.sqrt(np.sum(amp ** 2)) + 1e-12
    phase = rng.uniform(0, 2 * np.pi, ks.size)
    edge = r0 * (1 + irregular * np.sum(
        amp[:, None, None] * np.sin(ks[:, None, None] * theta + phase[:, None, None]), axis=0))
    alpha = 1.0 / (1.0 + np.exp(-(edge - dist) / (0.03 * r)))
    # lesion colour: brown base plus a heterogeneous texture
    base = np.array([0.42, 0.26, 0.17]) * rng.uniform(0.8, 1.15)
    if cfg.aux:
        base = base * np.array([1.1, 0.95, 1.0])
    hetero = abs(rng.normal(0.04 + 0.09 * cue, 0.02))
    tex = hetero * _smooth_field(rng, r, 8, 3)
    lesion = base[:, None, None] * (1 + 0.1 * _smooth_field(rng, r, 4)[0]) + tex
    # blue-grey veil over part of the lesion; overlapping intensity per class
    # a clearly visible veil on most positives and a minority of negatives
    p_strong = min(NEG_VEIL_RATE + 0.65 * cue, 0.95)
    if rng.random() < p_strong:
        veil = rng.uniform(0.6, 0.9) - 0.1 * shift
    else:
        veil = rng.uniform(0.0, 0.15)
    veil_mask = np.clip(0.8 + 0.5 * _smooth_field(rng, r, 4)[0], 0.0, 1.0) * veil
    lesion = lesion * (1 - veil_mask) + VEIL_RGB[:, None, None] * veil_mask
    img = bg * (1 - alpha) + lesion * alpha
    # quantise to 8 bits so in-memory samples equal their PPM round trip
    q = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.float32)
    return q / np.float32(255.0)


def synth_generate(cfg: SynthConfig) -> list[Sample]:
    """Generate the samples for ``cfg``; identical configs give identical data.

    Exactly ``round(positive_rate * n_samples)`` samples are positive.
    """
    rng = np.random.default_rng([cfg.seed, 0])
    counts = _patient_counts(cfg, rng)
    n = cfg.n_samples
    prefix = "aux" if cfg.aux else "pt"
    patient = np.repeat(np.arange(cfg.n_patients), counts)

    # patient-level metadata
    p_age = np.clip(np.rint(rng.normal(50, 15, cfg.n_patients)), 10, 90)
    p_sex = rng.choice(len(SEXES), size=cfg.n_patients, p=SEX_PROBS)
    tone = rng.uniform(0, 1, cfg.n_patients)
    light, dark = np.array([0.92, 0.76, 0.66]), np.array([0.62, 0.44, 0.34])
    if cfg.aux:
        light, dark = np.array([0.95, 0.72, 0.70]), np.array([0.70, 0.45, 0.42])
    skins = light[None] * (1 - tone[:, None]) + dark[None] * tone[:, None]

    site = rng.choice(len(SITES), size=n, p=SITE_PROBS)
    age = p_age[patient]
    sex = p_sex[patient]
    risk = (age - 50) / 15 + 0.6 * (sex == 1) + 0.5 * (site == 3)
    w = np.exp(cfg.meta_strength * risk)
    k = int(round(cfg.positive_rate * n))
    labels = np.zeros(n, dtype=int)
    labels[rng.choice(n, size=k, replace=False, p=w / w.sum())] = 1

    miss = rng.random((n, 3)) < [cfg.age_missing, cfg.sex_missing, cfg.site_missing]
    samples = []
    for i in range(n):
        srng = np.random.default_rng([cfg.seed, 1, i])
        img = _lesion_image(srng, labels[i], skins[patient[i]], cfg)
        samples.append(Sample(
            patient_id=f"{prefix}{cfg.seed}_{patient[i]:05d}",
            image=img,
            age=None if miss[i, 0] else float(age[i]),
            sex=None if miss[i, 1] else SEXES[sex[i]],
            site=None if miss[i, 2] else SITES[site[i]],
            label=int(labels[i]),
            image_path=f"images/{i:06d}.ppm",
        ))
    return samples
