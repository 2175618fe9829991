"""Synthetic wound photographs with exact segmentation masks.

Each patient gets a persistent skin tone, wound tint and limb shape
tendency. Each image is a textured, partly cluttered background, a skin
region (one or two overlapping rotated ellipses) and one or more textured
wound ellipses placed strictly inside the skin. The mask is exactly the set
of pixels painted with wound texture.

Three distribution profiles exist. ``in_distribution`` is the training
domain; ``ood_small_wounds`` has small limbs and tiny wounds;
``ood_cluttered_background`` has little skin and a busy, partly
wound-coloured background.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..core import InvalidInputError, save_image, save_mask
from .manifest import DatasetRecord, component_boxes, write_manifest

SHIFTS = ("in_distribution", "ood_small_wounds", "ood_cluttered_background")


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 64
    n_patients: int = 30
    images_per_patient_range: tuple = (6, 14)
    wounds_per_image_range: tuple = (1, 2)
    coverage_range: tuple = (0.01, 0.12)
    distribution_shift: str = "in_distribution"
    patient_prefix: str = "p"

    def __post_init__(self):
        if self.image_size < 32:
            raise InvalidInputError("image_size must be >= 32")
        lo, hi = self.coverage_range
        if not 0 < lo <= hi < 1:
            raise InvalidInputError(f"coverage_range {self.coverage_range} must lie in (0, 1)")
        if self.distribution_shift not in SHIFTS:
            raise InvalidInputError(f"unknown distribution_shift {self.distribution_shift!r}")
        if self.n_patients < 1:
            raise InvalidInputError("n_patients must be >= 1")
        a, b = self.images_per_patient_range
        c, d = self.wounds_per_image_range
        if not (1 <= a <= b and 1 <= c <= d):
            raise InvalidInputError("count ranges must satisfy 1 <= min <= max")
        # tuples survive JSON round trips as lists
        object.__setattr__(self, "images_per_patient_range", tuple(self.images_per_patient_range))
        object.__setattr__(self, "wounds_per_image_range", tuple(self.wounds_per_image_range))
        object.__setattr__(self, "coverage_range", tuple(self.coverage_range))

    @classmethod
    def preset(cls, shift="in_distribution", **overrides):
        """Defaults for one distribution profile; keyword overrides win."""
        base = {
            "in_distribution": {},
            "ood_small_wounds": {"coverage_range": (0.004, 0.02), "wounds_per_image_range": (1, 1),
                                 "patient_prefix": "s"},
            "ood_cluttered_background": {"coverage_range": (0.005, 0.05), "patient_prefix": "c"},
        }[shift]
        return cls(**{**base, "distribution_shift": shift, **overrides})

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class _Profile:
    skin_frac: tuple
    aspect: tuple
    clutter: tuple
    wound_like_clutter: float
    second_lobe: float


_PROFILES = {
    "in_distribution": _Profile((0.30, 0.55), (1.0, 1.8), (2, 5), 0.25, 0.5),
    "ood_small_wounds": _Profile((0.10, 0.22), (1.8, 3.0), (2, 5), 0.25, 0.2),
    "ood_cluttered_background": _Profile((0.12, 0.25), (1.0, 2.2), (6, 12), 0.6, 0.3),
}

_SKIN_TONES = np.array([
    [0.93, 0.76, 0.65], [0.87, 0.68, 0.55], [0.80, 0.60, 0.47],
    [0.70, 0.50, 0.38], [0.58, 0.41, 0.30], [0.47, 0.32, 0.24],
])
_BACKGROUNDS = np.array([
    [0.85, 0.87, 0.90], [0.35, 0.45, 0.65], [0.40, 0.55, 0.45], [0.55, 0.42, 0.30],
    [0.30, 0.30, 0.32], [0.75, 0.75, 0.70], [0.20, 0.30, 0.45],
])
_WOUND_RED = np.array([0.62, 0.14, 0.12])
_WOUND_DARK = np.array([0.30, 0.06, 0.06])
_SLOUGH = np.array([0.80, 0.70, 0.35])


def _smooth_noise(rng, shape, sigma):
    n = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return n / (np.abs(n).max() + 1e-12)


def _ellipse(yy, xx, cy, cx, a, b, theta):
    c, s = math.cos(theta), math.sin(theta)
    dx, dy = xx - cx, yy - cy
    u = (dx * c + dy * s) / a
    v = (-dx * s + dy * c) / b
    return u * u + v * v <= 1.0


def _fit_ellipse_to_count(yy, xx, cy, cx, aspect, theta, target):
    """Ellipse of the given shape whose pixel count is closest to ``target``."""
    lo, hi = 0.3, math.sqrt(target / math.pi) * 3 + 2
    best = None
    for _ in range(40):
        mid = (lo + hi) / 2
        m = _ellipse(yy, xx, cy, cx, mid * aspect, mid, theta)
        cnt = int(m.sum())
        if best is None or abs(cnt - target) < abs(best[1] - target):
            best = (m, cnt)
        if cnt == target:
            break
        if cnt < target:
            lo = mid
        else:
            hi = mid
    return best


class _Patient:
    def __init__(self, rng, profile):
        self.skin = np.clip(_SKIN_TONES[rng.integers(len(_SKIN_TONES))] + rng.normal(0, 0.03, 3), 0, 1)
        self.wound = np.clip(_WOUND_RED + rng.normal(0, 0.05, 3), 0, 1)
        self.aspect = rng.uniform(*profile.aspect)
        self.skin_frac = rng.uniform(*profile.skin_frac)
        self.slough = rng.uniform(0.0, 0.35)


def _background(rng, size, profile, yy, xx):
    base = _BACKGROUNDS[rng.integers(len(_BACKGROUNDS))] + rng.normal(0, 0.05, 3)
    img = base[None, None, :] + 0.08 * _smooth_noise(rng, (size, size), size / 8)[..., None]
    img = img + 0.04 * _smooth_noise(rng, (size, size, 3), 1.0)
    for _ in range(rng.integers(profile.clutter[0], profile.clutter[1] + 1)):
        if rng.random() < profile.wound_like_clutter:
            color = np.clip(_WOUND_RED * rng.uniform(0.6, 1.2) + rng.normal(0, 0.05, 3), 0, 1)
        else:
            color = rng.uniform(0.05, 0.95, 3)
        cy, cx = rng.uniform(0, size, 2)
        r1, r2 = rng.uniform(0.04, 0.16, 2) * size
        if rng.random() < 0.5:
            shape = _ellipse(yy, xx, cy, cx, r1, r2, rng.uniform(0, math.pi))
        else:
            shape = (np.abs(yy - cy) < r1) & (np.abs(xx - cx) < r2)
        tex = 0.06 * _smooth_noise(rng, (size, size), 1.5)[..., None]
        img = np.where(shape[..., None], color + tex, img)
    return img


def _skin_region(rng, size, patient, profile, yy, xx):
    area = patient.skin_frac * size * size
    b = math.sqrt(area / (math.pi * patient.aspect))
    a = b * patient.aspect
    theta = rng.uniform(0, math.pi)
    cy, cx = size / 2 + rng.uniform(-0.12, 0.12, 2) * size
    skin = _ellipse(yy, xx, cy, cx, a, b, theta)
    if rng.random() < profile.second_lobe:
        t2 = theta + rng.uniform(-0.8, 0.8)
        off = rng.uniform(0.3, 0.7) * a
        skin |= _ellipse(yy, xx, cy + off * math.sin(t2), cx + off * math.cos(t2),
                         a * rng.uniform(0.4, 0.7), b * rng.uniform(0.6, 1.0), t2)
    return skin


def _place_wounds(rng, size, skin, n_wounds, total_px, yy, xx):
    interior = ndimage.binary_erosion(skin, iterations=2)
    ys, xs = np.nonzero(interior)
    if len(ys) == 0:
        return None
    shares = rng.uniform(0.5, 1.5, n_wounds)
    targets = np.maximum(4, np.round(total_px * shares / shares.sum())).astype(int)
    wounds = []
    taken = np.zeros_like(skin)
    for t in targets:
        placed = False
        for _ in range(30):
            k = rng.integers(len(ys))
            m, cnt = _fit_ellipse_to_count(yy, xx, ys[k] + rng.uniform(-0.5, 0.5),
                                           xs[k] + rng.uniform(-0.5, 0.5),
                                           rng.uniform(1.0, 1.8), rng.uniform(0, math.pi), int(t))
            if cnt == 0 or (m & ~interior).any() or (m & taken).any():
                continue
            if ndimage.label(m)[1] != 1:
                continue
            wounds.append(m)
            taken |= ndimage.binary_dilation(m, iterations=2)
            placed = True
            break
        if not placed:
            return None
    return wounds


def _paint_wounds(rng, img, skin_color, patient, wounds, size):
    mask = np.zeros((size, size), dtype=bool)
    for m in wounds:
        mask |= m
    # erythema ring outside the mask, not labelled
    ring = ndimage.binary_dilation(mask, iterations=2) & ~mask
    redness = rng.uniform(0.0, 0.35)
    img = np.where(ring[..., None], img * (1 - redness) + redness * np.array([0.75, 0.30, 0.28]), img)
    tint = np.clip(patient.wound + rng.normal(0, 0.03, 3), 0, 1)
    depth = 0.5 + 0.5 * _smooth_noise(rng, (size, size), 1.2)
    wound_tex = tint * (1 - 0.5 * depth[..., None]) + _WOUND_DARK * 0.5 * depth[..., None]
    slough = _smooth_noise(rng, (size, size), 1.0) > (1 - patient.slough)
    wound_tex = np.where(slough[..., None], _SLOUGH + 0.05 * rng.standard_normal((size, size, 3)), wound_tex)
    wound_tex = wound_tex + 0.04 * rng.standard_normal((size, size, 3))
    return np.where(mask[..., None], wound_tex, img), mask


def _render_image(rng, config, patient, profile):
    size = config.image_size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    lo, hi = config.coverage_range
    n_px = size * size
    for _ in range(50):
        img = _background(rng, size, profile, yy, xx)
        skin = _skin_region(rng, size, patient, profile, yy, xx)
        shade = 1 + 0.1 * _smooth_noise(rng, (size, size), size / 6)
        skin_col = patient.skin[None, None, :] * shade[..., None]
        skin_col = skin_col + 0.03 * _smooth_noise(rng, (size, size, 3), 0.8)
        img = np.where(skin[..., None], skin_col, img)
        n_wounds = int(rng.integers(config.wounds_per_image_range[0], config.wounds_per_image_range[1] + 1))
        cov = rng.uniform(lo, hi)
        wounds = _place_wounds(rng, size, skin, n_wounds, cov * n_px, yy, xx)
        if wounds is None:
            continue
        img, mask = _paint_wounds(rng, img, skin_col, patient, wounds, size)
        got = mask.sum()
        if not (lo * n_px - 1 <= got <= hi * n_px + 1):
            continue
        # global exposure and a linear light gradient
        gain = rng.uniform(0.8, 1.15)
        gy, gx = rng.uniform(-0.1, 0.1, 2)
        light = gain * (1 + gy * (yy / size - 0.5) + gx * (xx / size - 0.5))
        img = img * light[..., None] + rng.normal(0, 0.015, img.shape)
        img = np.rint(np.clip(img, 0, 1) * 255) / 255
        return img, mask.astype(np.uint8)
    raise GenerationError(
        f"could not place wounds with coverage in {config.coverage_range} at size {size}")


def check_attainable(config):
    n_px = config.image_size ** 2
    lo, hi = config.coverage_range
    min_wounds = config.wounds_per_image_range[0]
    if hi * n_px < 4 * min_wounds:
        raise GenerationError(
            f"coverage_range {config.coverage_range} gives fewer than 4 pixels per wound "
            f"at image_size {config.image_size}")
    max_skin = _PROFILES[config.distribution_shift].skin_frac[1]
    if lo > 0.5 * max_skin:
        raise GenerationError(
            f"coverage {lo} cannot fit inside skin covering at most {max_skin:.0%} of the image")


def generate_synthetic(config, seed, out_dir=None):
    """Generate a dataset; with ``out_dir``, also write PNGs and ``manifest.json``.

    Fully determined by ``(config, seed)``. Returns the records with image
    and mask arrays already attached.
    """
    check_attainable(config)
    profile = _PROFILES[config.distribution_shift]
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
    records = []
    for p in range(config.n_patients):
        rng = np.random.default_rng([seed, p])
        patient = _Patient(rng, profile)
        pid = f"{config.patient_prefix}{p:03d}"
        n_images = int(rng.integers(config.images_per_patient_range[0], config.images_per_patient_range[1] + 1))
        for k in range(n_images):
            img, mask = _render_image(rng, config, patient, profile)
            name = f"{pid}_{k:03d}.png"
            root = out if out is not None else Path(".")
            img_path, mask_path = root / "images" / name, root / "masks" / name
            if out is not None:
                save_image(img_path, img)
                save_mask(mask_path, mask)
            records.append(DatasetRecord(img_path, mask_path, pid, component_boxes(mask), img, mask))
    if out is not None:
        write_manifest(records, out / "manifest.json")
    return records

