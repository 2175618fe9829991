"""Reference numpy implementations of the convolution-network hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and bit-identical results; this module is used when the extension is not
built, and as the oracle the extension is tested against.
"""
import numpy as np


def im2col3(x):
    """Unfold 3x3 neighbourhoods (zero padding 1) of an NCHW array.

    Returns an array of shape ``(N, C*9, H*W)`` whose row ``c*9 + ki*3 + kj``
    holds ``x[n, c, i+ki-1, j+kj-1]`` for every output position ``(i, j)``.
    """
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2, w + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    cols = np.empty((n, c, 3, 3, h, w), dtype=x.dtype)
    for ki in range(3):
        for kj in range(3):
            cols[:, :, ki, kj] = xp[:, :, ki:ki + h, kj:kj + w]
    return cols.reshape(n, c * 9, h * w)


def col2im3(cols, c, h, w):
    """Adjoint of :func:`im2col3`: scatter-add columns back onto the image."""
    n = cols.shape[0]
    cols = cols.reshape(n, c, 3, 3, h, w)
    xp = np.zeros((n, c, h + 2, w + 2), dtype=cols.dtype)
    for ki in range(3):
        for kj in range(3):
            xp[:, :, ki:ki + h, kj:kj + w] += cols[:, :, ki, kj]
    return np.ascontiguousarray(xp[:, :, 1:-1, 1:-1])


def maxpool2_fwd(x):
    """2x2/stride-2 max pooling; also returns the winning offset (0..3)."""
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    idx = np.argmax(win, axis=-1).astype(np.uint8)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2_bwd(dout, idx):
    n, c, ho, wo = dout.shape
    dwin = np.zeros((n, c, ho, wo, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, idx[..., None].astype(np.intp), dout[..., None], axis=-1)
    dx = dwin.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(dx.reshape(n, c, ho * 2, wo * 2))


def upsample2_fwd(x):
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def upsample2_bwd(dout):
    # explicit association so the compiled twin can match bit for bit
    a, b = dout[:, :, 0::2], dout[:, :, 1::2]
    return np.ascontiguousarray((a[..., 0::2] + a[..., 1::2]) + (b[..., 0::2] + b[..., 1::2]))
