"""Toy segmenters (UNet-lite, ConvNet-lite) and a single-scale anchor-free detector."""
from __future__ import annotations

import math

import numpy as np

from ..core import Box, Detection, resize_nearest
from . import autograd as ag
from .autograd import Tensor

VARIANTS = ("unet_lite", "convnet_lite")
MAX_LOG_OFFSET = 8.0


class Module:
    """Holds named parameter tensors in insertion order."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params = {}

    def _conv(self, name, cin, cout, k, rng, bias_init=0.0):
        fan_in = cin * k * k
        w = rng.standard_normal((cout, cin, k, k)) * math.sqrt(2.0 / fan_in)
        self.params[f"{name}.w"] = Tensor(w.astype(self.dtype), requires_grad=True, name=f"{name}.w")
        b = np.full(cout, bias_init, dtype=self.dtype)
        self.params[f"{name}.b"] = Tensor(b, requires_grad=True, name=f"{name}.b")

    def conv(self, name, x):
        return ag.conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"])

    def state_dict(self):
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state_dict(self, state):
        missing = set(self.params) ^ set(state)
        if missing:
            raise KeyError(f"parameter names differ: {sorted(missing)}")
        for k, t in self.params.items():
            arr = np.asarray(state[k])
            if arr.shape != t.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {t.shape}")
            t.data = arr.astype(self.dtype, copy=True)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def to_batch(self, images):
        """(N, H, W, 3) images -> NCHW tensor of the model dtype."""
        return Tensor(np.ascontiguousarray(np.asarray(images, dtype=self.dtype).transpose(0, 3, 1, 2)))


class SegmenterModel(Module):
    """Encoder-decoder with one 3x3 conv per level and a 1x1 logit head.

    ``unet_lite`` concatenates encoder features into the decoder (skip
    connections); ``convnet_lite`` is the same network without them.
    """

    def __init__(self, variant="unet_lite", depth=3, base_channels=8, input_size=64, seed=0,
                 dtype=np.float32):
        super().__init__(dtype)
        if variant not in VARIANTS:
            raise ValueError(f"unknown segmenter variant {variant!r}")
        if input_size % (2 ** depth):
            raise ValueError(f"input_size {input_size} not divisible by 2**depth")
        self.variant, self.depth, self.base_channels, self.input_size = variant, depth, base_channels, input_size
        rng = np.random.default_rng(seed)
        ch = [base_channels * 2 ** lvl for lvl in range(depth + 1)]
        cin = 3
        for lvl in range(depth):
            self._conv(f"enc{lvl}", cin, ch[lvl], 3, rng)
            cin = ch[lvl]
        self._conv("mid", cin, ch[depth], 3, rng)
        for lvl in reversed(range(depth)):
            dec_in = ch[lvl + 1] + (ch[lvl] if variant == "unet_lite" else 0)
            self._conv(f"dec{lvl}", dec_in, ch[lvl], 3, rng)
        self._conv("out", ch[0], 1, 1, rng)

    def config(self):
        return {"variant": self.variant, "depth": self.depth, "base_channels": self.base_channels,
                "input_size": self.input_size}

    def forward(self, x):
        skips = []
        for lvl in range(self.depth):
            x = ag.relu(self.conv(f"enc{lvl}", x))
            skips.append(x)
            x = ag.maxpool2d(x)
        x = ag.relu(self.conv("mid", x))
        for lvl in reversed(range(self.depth)):
            x = ag.upsample2d(x)
            if self.variant == "unet_lite":
                x = ag.concat([x, skips[lvl]])
            x = ag.relu(self.conv(f"dec{lvl}", x))
        return self.conv("out", x)

    def predict(self, images, chunk=32):
        """Foreground probabilities for (N, S, S, 3) images -> (N, S, S)."""
        images = np.asarray(images)
        out = []
        for i in range(0, len(images), chunk):
            logits = self.forward(self.to_batch(images[i:i + chunk])).data[:, 0]
            out.append(ag._stable_sigmoid(logits))
        return np.concatenate(out) if out else np.zeros((0,) + images.shape[1:3], dtype=self.dtype)


class DetectorModel(Module):
    """Conv/pool backbone down to ``stride``, two context convs, 5-channel head.

    Head channels: objectness logit, then log-distances (left, top, right,
    bottom) from the cell centre to the box sides in stride units.
    """

    def __init__(self, stride=8, base_channels=8, input_size=64, seed=0, dtype=np.float32):
        super().__init__(dtype)
        n_pool = int(round(math.log2(stride)))
        if 2 ** n_pool != stride or n_pool < 1:
            raise ValueError(f"stride must be a power of two >= 2, got {stride}")
        if input_size % stride:
            raise ValueError(f"input_size {input_size} not divisible by stride {stride}")
        self.stride, self.base_channels, self.input_size = stride, base_channels, input_size
        self.n_pool = n_pool
        rng = np.random.default_rng(seed)
        cin = 3
        for lvl in range(n_pool):
            cout = base_channels * 2 ** min(lvl, 2)
            self._conv(f"down{lvl}", cin, cout, 3, rng)
            cin = cout
        self._conv("ctx0", cin, cin, 3, rng)
        self._conv("ctx1", cin, cin, 3, rng)
        # objectness prior of 1% (RetinaNet-style initialisation)
        self._conv("head", cin, 5, 1, rng)
        self.params["head.b"].data[0] = -math.log(99.0)
        self.params["head.w"].data *= 0.1

    def config(self):
        return {"stride": self.stride, "base_channels": self.base_channels, "input_size": self.input_size}

    def forward(self, x):
        for lvl in range(self.n_pool):
            x = ag.maxpool2d(ag.relu(self.conv(f"down{lvl}", x)))
        x = ag.relu(self.conv("ctx0", x))
        x = ag.relu(self.conv("ctx1", x))
        return self.conv("head", x)

    def raw_outputs(self, images, chunk=32):
        images = np.asarray(images)
        return np.concatenate([self.forward(self.to_batch(images[i:i + chunk])).data
                               for i in range(0, len(images), chunk)])

    def detect(self, image):
        """All per-cell detections for a full-size image, in image coordinates."""
        h, w = image.shape[:2]
        s = self.input_size
        small = resize_nearest(image, s, s) if (h, w) != (s, s) else image
        raw = self.raw_outputs(small[None])[0]
        dets = detector_decode(raw, self.stride, s, s)
        if (h, w) == (s, s):
            return dets
        fx, fy = w / s, h / s
        return [Detection(Box(d.box.x_min * fx, d.box.y_min * fy, d.box.x_max * fx, d.box.y_max * fy),
                          d.confidence) for d in dets]


def cell_centers(grid_h, grid_w, stride):
    cy = (np.arange(grid_h) + 0.5) * stride
    cx = (np.arange(grid_w) + 0.5) * stride
    return cy, cx


def detector_decode(raw, stride, img_h, img_w):
    """Turn a (5, gh, gw) head output into one Detection per cell."""
    raw = np.asarray(raw, dtype=np.float64)
    _, gh, gw = raw.shape
    cy, cx = cell_centers(gh, gw, stride)
    conf = ag._stable_sigmoid(raw[0])
    dist = np.exp(np.clip(raw[1:], -MAX_LOG_OFFSET, MAX_LOG_OFFSET)) * stride
    x0 = np.clip(cx[None, :] - dist[0], 0, img_w)
    y0 = np.clip(cy[:, None] - dist[1], 0, img_h)
    x1 = np.clip(cx[None, :] + dist[2], 0, img_w)
    y1 = np.clip(cy[:, None] + dist[3], 0, img_h)
    dets = []
    for i in range(gh):
        for j in range(gw):
            if x1[i, j] > x0[i, j] and y1[i, j] > y0[i, j]:
                dets.append(Detection(Box(float(x0[i, j]), float(y0[i, j]), float(x1[i, j]), float(y1[i, j])),
                                      float(conf[i, j])))
    return dets


def encode_targets(boxes, grid_h, grid_w, stride, min_dist=1e-3):
    """Objectness and log-offset targets for one image.

    A cell is positive iff its centre lies inside a box (half-open); where
    boxes overlap, the smallest box wins. A box too small to contain any
    cell centre is given the cell holding its own centre instead, so every
    box gets at least one positive. Returns ``(obj, offsets, positive)``
    with shapes (gh, gw), (4, gh, gw), (gh, gw).
    """
    cy, cx = cell_centers(grid_h, grid_w, stride)
    gx = np.broadcast_to(cx[None, :], (grid_h, grid_w))
    gy = np.broadcast_to(cy[:, None], (grid_h, grid_w))
    obj = np.zeros((grid_h, grid_w))
    offsets = np.zeros((4, grid_h, grid_w))
    best_area = np.full((grid_h, grid_w), np.inf)
    for b in boxes:
        inside = (gx >= b.x_min) & (gx < b.x_max) & (gy >= b.y_min) & (gy < b.y_max)
        if not inside.any():
            bx, by = b.center
            i = min(max(int(by // stride), 0), grid_h - 1)
            j = min(max(int(bx // stride), 0), grid_w - 1)
            inside = np.zeros((grid_h, grid_w), dtype=bool)
            inside[i, j] = True
        take = inside & (b.area < best_area)
        if not take.any():
            continue
        best_area[take] = b.area
        obj[take] = 1
        dists = (gx - b.x_min, gy - b.y_min, b.x_max - gx, b.y_max - gy)
        for k, d in enumerate(dists):
            offsets[k][take] = np.log(np.maximum(d[take], min_dist) / stride)
    return obj, offsets, obj > 0
