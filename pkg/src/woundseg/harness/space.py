"""Hyperparameter search spaces and uniform sampling."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class HyperSpace:
    """Continuous ranges ``{name: (lo, hi)}`` and discrete choices ``{name: [..]}``.

    ``mapping`` renames sampled keys onto TrainConfig fields.
    """

    name: str
    continuous: dict = field(default_factory=dict)
    discrete: dict = field(default_factory=dict)
    mapping: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, (lo, hi) in self.continuous.items():
            if not lo < hi:
                raise ValueError(f"{self.name}.{k}: empty range ({lo}, {hi})")
        for k, choices in self.discrete.items():
            if not choices:
                raise ValueError(f"{self.name}.{k}: no choices")

    def contains(self, sample):
        for k, (lo, hi) in self.continuous.items():
            if not lo < sample[k] < hi:
                return False
        return all(sample[k] in choices for k, choices in self.discrete.items())

    def to_train_fields(self, sample):
        return {self.mapping.get(k, k): v for k, v in sample.items()}


DETECTION_SPACE = HyperSpace(
    "detection",
    continuous={"l2": (1e-6, 1e-3), "initial_lr": (3e-6, 3e-3)},
    discrete={"batch_size": [8, 16, 32, 64], "momentum": [0.99, 0.97, 0.95, 0.90],
              "lr_decay": [0.97, 0.95, 0.93, 0.85]},
    # momentum is Adam's first-moment decay; l2 is applied as weight decay
    mapping={"l2": "weight_decay", "momentum": "adam_beta1"},
)

SEGMENTATION_SPACE = HyperSpace(
    "segmentation",
    continuous={"initial_lr": (3e-5, 3e-2)},
    discrete={"batch_size": [4, 8, 16, 32], "weight_decay": [1e-4, 1e-5, 0.0],
              "lr_decay": [0.99, 0.97, 0.95, 0.93, 0.89]},
)

SPACES = {"detection": DETECTION_SPACE, "segmentation": SEGMENTATION_SPACE}


def sample_hyperparams(space, rng):
    """Draw one configuration: continuous keys uniform on the linear scale,
    discrete keys with equal probability. Keys are visited in sorted order so
    the draw depends only on ``rng``.
    """
    out = {}
    for k in sorted(space.continuous):
        lo, hi = space.continuous[k]
        v = float(rng.uniform(lo, hi))
        while not lo < v < hi:  # uniform() is half-open; keep the open interval
            v = float(rng.uniform(lo, hi))
        out[k] = v
    for k in sorted(space.discrete):
        choices = space.discrete[k]
        c = choices[int(rng.integers(len(choices)))]
        out[k] = c.item() if isinstance(c, np.generic) else c
    return out
