"""Training loops for the segmenter and the detector."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..core import Box, resize_nearest
from ..data.augment import AugmentParams, augment
from ..detpost import PostprocessParams, build_crop, full_image_box
from . import autograd as ag
from .losses import NumericError, box_l1_loss, focal_loss, weighted_bce_loss
from .models import DetectorModel, SegmenterModel, encode_targets
from .optim import Adam

log = logging.getLogger(__name__)

CONDITIONS = ("manual", "none", "automatic")


class TrainingError(RuntimeError):
    def __init__(self, msg, epoch=None):
        super().__init__(msg if epoch is None else f"epoch {epoch}: {msg}")
        self.epoch = epoch


class InvalidFoldError(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 8
    initial_lr: float = 1e-3
    lr_decay: float = 0.95
    weight_decay: float = 0.0
    max_epochs: int = 100
    early_stop_patience: int = 12
    early_stopping: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    box_loss_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.initial_lr > 0:
            raise ValueError("initial_lr must be > 0")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")

    def lr_at(self, epoch):
        return self.initial_lr * self.lr_decay ** epoch

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False
    class_weight: float | None = None

    @property
    def epochs_run(self):
        return len(self.train_loss)

    def to_dict(self):
        return asdict(self)


@dataclass
class SampleSet:
    """Model-ready square images (N, S, S, 3) float32 and masks (N, S, S) uint8."""

    images: np.ndarray
    masks: np.ndarray

    def __len__(self):
        return len(self.images)

    def subset(self, idx):
        return SampleSet(self.images[idx], self.masks[idx])


def segmentation_samples(records, condition, params=PostprocessParams()):
    """Segmenter inputs for a condition.

    ``none`` uses the whole image; ``manual`` and ``automatic`` use one
    enlarged crop per ground-truth box (training and validation data are
    always cropped from ground truth).
    """
    if condition not in CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}")
    imgs, masks = [], []
    for r in records:
        image, mask = r.image(), r.mask()
        if condition == "none":
            boxes, enlarge = [full_image_box(image)], False
        else:
            boxes, enlarge = r.gt_boxes, True
        for b in boxes:
            sq, _ = build_crop(image, b, params, enlarge=enlarge)
            sm, _ = build_crop(mask, b, params, enlarge=enlarge)
            imgs.append(sq)
            masks.append(sm)
    s = params.output_size
    if not imgs:
        return SampleSet(np.zeros((0, s, s, 3), np.float32), np.zeros((0, s, s), np.uint8))
    return SampleSet(np.stack(imgs).astype(np.float32), np.stack(masks).astype(np.uint8))


def class_weight(masks):
    """Background-to-wound pixel ratio over a training fold.

    Accepts a SampleSet, an array of masks, or records with ``.mask()``.
    """
    if isinstance(masks, SampleSet):
        masks = masks.masks
    wound = total = 0
    for m in masks:
        m = m.mask() if hasattr(m, "mask") else np.asarray(m)
        wound += int(np.count_nonzero(m))
        total += m.size
    background = total - wound
    if wound == 0 or background == 0:
        raise InvalidFoldError(f"fold has {wound} wound and {background} background pixels")
    return background / wound


def _fit(model, n_train, batch_loss, val_loss, cfg, rng, monitor=None):
    """Shared epoch loop: shuffle, step, decay lr per epoch, early-stop on val loss."""
    # divergence is detected from the loss values, so float warnings are noise
    with np.errstate(over="ignore", invalid="ignore"):
        return _fit_loop(model, n_train, batch_loss, val_loss, cfg, rng, monitor)


def _fit_loop(model, n_train, batch_loss, val_loss, cfg, rng, monitor):
    opt = Adam(model.params, (cfg.adam_beta1, cfg.adam_beta2), cfg.adam_eps, cfg.weight_decay)
    hist = History()
    best, best_state, wait = math.inf, model.state_dict(), 0
    for epoch in range(cfg.max_epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n_train)
        total, count = 0.0, 0
        for start in range(0, n_train, cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            model.zero_grad()
            try:
                loss = batch_loss(model, idx, rng)
            except NumericError as exc:
                raise TrainingError(str(exc), epoch) from exc
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError("non-finite training loss", epoch)
            loss.backward()
            try:
                opt.step(lr)
            except NumericError as exc:
                raise TrainingError(str(exc), epoch) from exc
            total += value * len(idx)
            count += len(idx)
        try:
            v = float(monitor(model, epoch) if monitor is not None else val_loss(model))
        except NumericError as exc:
            raise TrainingError(str(exc), epoch) from exc
        if not math.isfinite(v):
            raise TrainingError("non-finite validation loss", epoch)
        hist.train_loss.append(total / max(count, 1))
        hist.val_loss.append(v)
        hist.lr.append(lr)
        log.debug("epoch %d lr %.3g train %.4f val %.4f", epoch, lr, hist.train_loss[-1], v)
        if v < best:
            best, best_state, wait = v, model.state_dict(), 0
            hist.best_epoch = epoch
        else:
            wait += 1
            if cfg.early_stopping and wait >= cfg.early_stop_patience:
                hist.stopped_early = True
                break
    model.load_state_dict(best_state)
    return hist


def _as_samples(data, condition, params):
    return data if isinstance(data, SampleSet) else segmentation_samples(data, condition, params)


def train_segmenter(train, val, model_config=None, train_config=None, augment_params=AugmentParams(),
                    condition="manual", params=PostprocessParams(), monitor=None):
    """Train a segmenter; returns ``(model, history)`` with best-epoch weights restored.

    ``train``/``val`` are records or ready :class:`SampleSet` objects.
    ``monitor(model, epoch) -> float`` replaces the validation loss if given.
    """
    cfg = train_config or TrainConfig()
    mcfg = {"variant": "unet_lite", "depth": 3, "base_channels": 8, **(model_config or {})}
    mcfg["input_size"] = params.output_size
    tr = _as_samples(train, condition, params)
    va = _as_samples(val, condition, params)
    if len(tr) == 0 or (len(va) == 0 and monitor is None):
        raise TrainingError("empty training or validation set")
    w = class_weight(tr)
    rng = np.random.default_rng([cfg.seed, 0])
    model = SegmenterModel(seed=[cfg.seed, 1], **mcfg)

    def batch_loss(m, idx, rng):
        xs, ys = [], []
        for i in idx:
            x, y = augment(tr.images[i], tr.masks[i], augment_params, rng)
            xs.append(x)
            ys.append(y)
        logits = m.forward(m.to_batch(np.stack(xs)))
        return weighted_bce_loss(logits, np.stack(ys)[:, None], w)

    def val_loss(m):
        total = 0.0
        for s in range(0, len(va), 64):
            logits = m.forward(m.to_batch(va.images[s:s + 64]))
            total += float(weighted_bce_loss(logits, va.masks[s:s + 64, None], w).data) * len(logits.data)
        return total / len(va)

    hist = _fit(model, len(tr), batch_loss, val_loss, cfg, rng, monitor)
    hist.class_weight = w
    return model, hist


def detector_samples(records, input_size):
    """Images resized to the detector input and their ground-truth boxes rescaled."""
    imgs, boxes = [], []
    for r in records:
        image = r.image()
        h, w = image.shape[:2]
        imgs.append(resize_nearest(image, input_size, input_size))
        fx, fy = input_size / w, input_size / h
        boxes.append([Box(b.x_min * fx, b.y_min * fy, b.x_max * fx, b.y_max * fy) for b in r.gt_boxes])
    return np.stack(imgs).astype(np.float32), boxes


def _flip_boxes(boxes, size, horizontal):
    if horizontal:
        return [Box(size - b.x_max, b.y_min, size - b.x_min, b.y_max) for b in boxes]
    return [Box(b.x_min, size - b.y_max, b.x_max, size - b.y_min) for b in boxes]


def _detector_targets(boxes_per_image, grid, stride):
    enc = [encode_targets(b, grid, grid, stride) for b in boxes_per_image]
    return (np.stack([e[0] for e in enc]), np.stack([e[1] for e in enc]), np.stack([e[2] for e in enc]))


def detector_loss(model, images, boxes_per_image, cfg):
    grid = model.input_size // model.stride
    obj, off, pos = _detector_targets(boxes_per_image, grid, model.stride)
    out = model.forward(model.to_batch(images))
    obj_logits = ag.channels(out, 0, 1)
    offs = ag.channels(out, 1, 5)
    fl = focal_loss(obj_logits, obj[:, None], cfg.focal_alpha, cfg.focal_gamma)
    bl = box_l1_loss(offs, off, pos, cfg.box_loss_weight)
    return ag.add(fl, bl)


def train_detector(train, val, train_config=None, model_config=None, augment_params=AugmentParams(),
                   monitor=None):
    """Train the anchor-free detector on records carrying ``gt_boxes``.

    Augmentation uses the flips and brightness shift only; geometric
    scaling is not applied to detector inputs.
    """
    cfg = train_config or TrainConfig()
    mcfg = {"stride": 8, "base_channels": 8, "input_size": 64, **(model_config or {})}
    size = mcfg["input_size"]
    tr_imgs, tr_boxes = detector_samples(train, size)
    va_imgs, va_boxes = detector_samples(val, size) if val else (None, None)
    if len(tr_imgs) == 0 or (va_imgs is None and monitor is None):
        raise TrainingError("empty training or validation set")
    rng = np.random.default_rng([cfg.seed, 0])
    model = DetectorModel(seed=[cfg.seed, 1], **mcfg)
    ap = augment_params

    def batch_loss(m, idx, rng):
        xs, bs = [], []
        for i in idx:
            x, boxes = tr_imgs[i], tr_boxes[i]
            u_h, u_v = rng.random(), rng.random()
            delta = rng.uniform(-ap.brightness_delta_max, ap.brightness_delta_max)
            if u_h < ap.p_hflip:
                x, boxes = x[:, ::-1], _flip_boxes(boxes, size, True)
            if u_v < ap.p_vflip:
                x, boxes = x[::-1], _flip_boxes(boxes, size, False)
            if delta != 0:
                x = np.clip(x + delta, 0, 1)
            xs.append(x)
            bs.append(boxes)
        return detector_loss(m, np.stack(xs), bs, cfg)

    def val_loss(m):
        total = 0.0
        for s in range(0, len(va_imgs), 64):
            chunk = va_imgs[s:s + 64]
            total += float(detector_loss(m, chunk, va_boxes[s:s + 64], cfg).data) * len(chunk)
        return total / len(va_imgs)

    hist = _fit(model, len(tr_imgs), batch_loss, val_loss, cfg, rng, monitor)
    return model, hist
