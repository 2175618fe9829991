"""Segmentation and detection losses with analytic gradients."""
import numpy as np

from .autograd import ShapeError, Tensor, _stable_sigmoid


class NumericError(FloatingPointError):
    pass


def _softplus(z):
    # log(1 + exp(z)) without overflow
    return np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))


def weighted_bce_loss(logits, target, w):
    """Pixel-wise weighted binary cross entropy on logits.

    loss = -mean(w * y * log(sigmoid(z)) + (1 - y) * log(1 - sigmoid(z))),
    evaluated as ``w*y*softplus(-z) + (1-y)*softplus(z)``.
    """
    z = logits.data
    y = np.asarray(target, dtype=z.dtype)
    if y.shape != z.shape:
        raise ShapeError("weighted_bce_loss", f"logits {z.shape} vs target {y.shape}")
    if not w > 0:
        raise ValueError(f"class weight must be positive, got {w}")
    if not np.all(np.isfinite(z)):
        raise NumericError("weighted_bce_loss: non-finite logits")
    n = z.size
    per_px = w * y * _softplus(-z) + (1 - y) * _softplus(z)
    out = Tensor(np.asarray(per_px.mean()), _parents=(logits,))

    def backward(g):
        s = _stable_sigmoid(z)
        logits._accum(g * (w * y * (s - 1) + (1 - y) * s) / n)

    out._backward = backward
    return out


def focal_loss(logits, targets, alpha=0.25, gamma=2.0):
    """Mean over cells of -alpha_t * (1 - p_t)**gamma * log(p_t)."""
    z = logits.data
    y = np.asarray(targets, dtype=z.dtype)
    if y.shape != z.shape:
        raise ShapeError("focal_loss", f"logits {z.shape} vs targets {y.shape}")
    pos = y > 0.5
    # signed logit: p_t = sigmoid(zt), for both classes
    zt = np.where(pos, z, -z)
    pt = _stable_sigmoid(zt)
    log_pt = -_softplus(-zt)
    a_t = np.where(pos, alpha, 1 - alpha)
    one_m = 1 - pt
    n = z.size
    loss = -(a_t * one_m**gamma * log_pt)
    out = Tensor(np.asarray(loss.mean(), dtype=z.dtype), _parents=(logits,))

    def backward(g):
        # d/dzt of -(1-p)^gamma log p = (1-p)^gamma * (gamma * p * log p - (1 - p))
        dzt = a_t * one_m**gamma * (gamma * pt * log_pt - one_m)
        dz = np.where(pos, dzt, -dzt)
        logits._accum(g * dz / n)

    out._backward = backward
    return out


def box_l1_loss(pred, target, positive, weight=1.0):
    """Weighted mean absolute error of the 4 box offsets over positive cells.

    ``pred`` and ``target`` are (N, 4, H, W); ``positive`` is (N, H, W).
    Returns 0 (and a zero gradient) when there is no positive cell.
    """
    p = pred.data
    t = np.asarray(target, dtype=p.dtype)
    pos = np.asarray(positive, dtype=bool)
    if t.shape != p.shape or p.ndim != 4 or p.shape[1] != 4 or pos.shape != (p.shape[0],) + p.shape[2:]:
        raise ShapeError("box_l1_loss", f"pred {p.shape}, target {t.shape}, positive {pos.shape}")
    npos = int(pos.sum())
    m = pos[:, None, :, :].astype(p.dtype)
    if npos == 0:
        out = Tensor(np.asarray(0.0, dtype=p.dtype), _parents=(pred,))
        out._backward = lambda g: pred._accum(np.zeros_like(p))
        return out
    diff = p - t
    denom = 4 * npos
    out = Tensor(np.asarray(weight * (np.abs(diff) * m).sum() / denom, dtype=p.dtype), _parents=(pred,))
    out._backward = lambda g: pred._accum(g * weight * np.sign(diff) * m / denom)
    return out
