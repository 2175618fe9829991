"""A small reverse-mode autodiff engine over numpy arrays.

Only the operations needed by the toy encoder-decoders and the detector are
provided. Each op records its parents and a closure that pushes the output
gradient back; :meth:`Tensor.backward` walks the graph in reverse
topological order and *accumulates* into ``.grad``.

Arrays are NCHW. The dtype is whatever the inputs carry: float64 for
gradient checks, float32 for training.
"""
from __future__ import annotations

import numpy as np

from .. import kernels


class ShapeError(ValueError):
    """Raised when an op receives shape-incompatible inputs."""

    def __init__(self, op, msg):
        super().__init__(f"{op}: {msg}")
        self.op = op


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=()):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward", "implicit gradient only for scalar outputs")
            grad = np.ones_like(self.data)
        order, seen = [], set()

        def visit(t):
            # iterative DFS; recursion depth would follow the network depth
            stack = [(t, False)]
            while stack:
                node, done = stack.pop()
                if done:
                    order.append(node)
                    continue
                if id(node) in seen:
                    continue
                seen.add(id(node))
                stack.append((node, True))
                for p in node._parents:
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        self._accum(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __radd__ = __add__
    __rmul__ = __mul__


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    try:
        out_data = a.data + b.data
    except ValueError as exc:
        raise ShapeError("add", f"{a.shape} vs {b.shape}") from exc
    out = Tensor(out_data, _parents=(a, b))

    def backward(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(g, b.shape))

    out._backward = backward
    return out


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    try:
        out_data = a.data * b.data
    except ValueError as exc:
        raise ShapeError("mul", f"{a.shape} vs {b.shape}") from exc
    out = Tensor(out_data, _parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    out._backward = backward
    return out


def relu(x):
    mask = x.data > 0
    out = Tensor(x.data * mask, _parents=(x,))
    out._backward = lambda g: x._accum(g * mask)
    return out


def sigmoid(x):
    s = _stable_sigmoid(x.data)
    out = Tensor(s, _parents=(x,))
    out._backward = lambda g: x._accum(g * s * (1 - s))
    return out


def _stable_sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1 / (1 + e), e / (1 + e)).astype(z.dtype, copy=False)


def sum(x):  # noqa: A001 - mirrors numpy naming
    out = Tensor(np.asarray(x.data.sum()), _parents=(x,))
    out._backward = lambda g: x._accum(np.broadcast_to(g, x.shape))
    return out


def mean(x):
    n = x.data.size
    out = Tensor(np.asarray(x.data.mean()), _parents=(x,))
    out._backward = lambda g: x._accum(np.broadcast_to(g / n, x.shape))
    return out


def concat(tensors, axis=1):
    """Channel concatenation (axis 1 by default)."""
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis
        ):
            raise ShapeError("concat", f"incompatible shapes {ref} and {t.shape}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), _parents=tuple(tensors))
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t._accum(g[tuple(sl)])

    out._backward = backward
    return out


def conv2d(x, w, b=None):
    """Stride-1 convolution with a 3x3 (zero padding 1) or 1x1 kernel.

    ``x`` is (N, Cin, H, W), ``w`` is (Cout, Cin, k, k), ``b`` is (Cout,).
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError("conv2d", f"expected 4-d input and weight, got {x.shape} and {w.shape}")
    n, cin, h, wd = x.shape
    cout, wcin, kh, kw = w.shape
    if wcin != cin:
        raise ShapeError("conv2d", f"input has {cin} channels, weight expects {wcin}")
    if (kh, kw) not in ((3, 3), (1, 1)):
        raise ShapeError("conv2d", f"unsupported kernel {kh}x{kw}")
    if b is not None and b.shape != (cout,):
        raise ShapeError("conv2d", f"bias shape {b.shape} != ({cout},)")

    xd = np.ascontiguousarray(x.data)
    if kh == 3:
        cols = kernels.im2col3(xd)
    else:
        cols = xd.reshape(n, cin, h * wd)
    wmat = w.data.reshape(cout, -1)
    y = np.matmul(wmat, cols)
    if b is not None:
        y += b.data[None, :, None]
    parents = (x, w) if b is None else (x, w, b)
    out = Tensor(y.reshape(n, cout, h, wd), _parents=parents)

    def backward(g):
        g2 = g.reshape(n, cout, h * wd)
        if w.requires_grad:
            dw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
            w._accum(dw.reshape(w.shape))
        if b is not None and b.requires_grad:
            b._accum(g2.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = np.matmul(wmat.T, g2)
            if kh == 3:
                x._accum(kernels.col2im3(dcols, cin, h, wd))
            else:
                x._accum(dcols.reshape(x.shape))

    out._backward = backward
    return out


def maxpool2d(x):
    """2x2 max pooling with stride 2; ties resolve to the first window element."""
    if x.data.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError("maxpool2d", f"needs 4-d input with even spatial size, got {x.shape}")
    y, idx = kernels.maxpool2_fwd(np.ascontiguousarray(x.data))
    out = Tensor(y, _parents=(x,))
    out._backward = lambda g: x._accum(kernels.maxpool2_bwd(np.ascontiguousarray(g), idx))
    return out


def upsample2d(x):
    """Nearest-neighbour x2 upsampling."""
    if x.data.ndim != 4:
        raise ShapeError("upsample2d", f"needs 4-d input, got {x.shape}")
    out = Tensor(kernels.upsample2_fwd(np.ascontiguousarray(x.data)), _parents=(x,))
    out._backward = lambda g: x._accum(kernels.upsample2_bwd(np.ascontiguousarray(g)))
    return out


def channels(x, start, stop):
    """Slice channels ``start:stop`` of an NCHW tensor."""
    out = Tensor(x.data[:, start:stop], _parents=(x,))

    def backward(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        x._accum(full)

    out._backward = backward
    return out
