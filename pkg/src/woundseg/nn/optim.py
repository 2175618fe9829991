"""Adam with bias correction and decoupled weight decay."""
import numpy as np

from .losses import NumericError


class AdamState:
    def __init__(self):
        self.t = 0
        self.m = {}
        self.v = {}


def adam_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
    """Update ``params`` (name -> array) in place from ``grads`` (name -> array).

    Weight decay is decoupled: ``p <- p * (1 - lr * weight_decay)`` before the
    Adam update. Parameters without a gradient are left alone.
    """
    b1, b2 = betas
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    state.t += 1
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        if weight_decay:
            p *= 1 - lr * weight_decay
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
    return params, state


class Adam:
    """Thin wrapper binding :func:`adam_step` to a model's parameter tensors."""

    def __init__(self, tensors, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.tensors = tensors
        self.betas, self.eps, self.weight_decay = betas, eps, weight_decay
        self.state = AdamState()

    def step(self, lr):
        params = {k: t.data for k, t in self.tensors.items()}
        grads = {k: t.grad for k, t in self.tensors.items()}
        adam_step(params, grads, self.state, lr, self.betas, self.eps, self.weight_decay)
