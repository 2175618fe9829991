"""Training-time augmentation: flips, brightness shift, scale-and-crop."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..core import InvalidInputError, resize_nearest


@dataclass(frozen=True)
class AugmentParams:
    p_hflip: float = 0.5
    p_vflip: float = 0.5
    brightness_delta_max: float = 0.1
    scale_min: float = 0.1
    scale_max: float = 2.0

    def __post_init__(self):
        for name in ("p_hflip", "p_vflip"):
            if not 0 <= getattr(self, name) <= 1:
                raise InvalidInputError(f"{name} must be a probability")
        if not 0 < self.scale_min <= self.scale_max:
            raise InvalidInputError("need 0 < scale_min <= scale_max")
        if self.brightness_delta_max < 0:
            raise InvalidInputError("brightness_delta_max must be >= 0")

    def to_dict(self):
        return asdict(self)


NO_AUGMENT = AugmentParams(0.0, 0.0, 0.0, 1.0, 1.0)


def _fit_axis(arr, axis, size):
    """Center-crop or zero-pad ``arr`` along ``axis`` to ``size``."""
    cur = arr.shape[axis]
    if cur == size:
        return arr
    if cur > size:
        start = (cur - size) // 2
        return np.take(arr, np.arange(start, start + size), axis=axis)
    before = (size - cur) // 2
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (before, size - cur - before)
    return np.pad(arr, pad)


def rescale(arr, s):
    """Nearest-neighbour scale by ``s`` then crop/pad back to the original size."""
    h, w = arr.shape[:2]
    nh, nw = max(1, int(round(h * s))), max(1, int(round(w * s)))
    out = resize_nearest(arr, nh, nw)
    out = _fit_axis(out, 0, h)
    return _fit_axis(out, 1, w)


def augment(image, mask, params, rng):
    """Randomly flip, brighten and rescale an image/mask pair.

    All four random draws happen on every call so the generator stream does
    not depend on which transforms fired. The mask never sees the
    brightness shift.
    """
    if image.shape[:2] != mask.shape[:2]:
        raise InvalidInputError("image and mask dimensions differ")
    u_h, u_v = rng.random(), rng.random()
    delta = rng.uniform(-params.brightness_delta_max, params.brightness_delta_max)
    s = rng.uniform(params.scale_min, params.scale_max)
    if u_h < params.p_hflip:
        image, mask = image[:, ::-1], mask[:, ::-1]
    if u_v < params.p_vflip:
        image, mask = image[::-1], mask[::-1]
    if delta != 0:
        image = np.clip(image + delta, 0.0, 1.0).astype(image.dtype, copy=False)
    if s != 1:
        image, mask = rescale(image, s), rescale(mask, s)
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)
