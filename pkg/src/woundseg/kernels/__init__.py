"""Hot kernels for the autodiff engine, compiled when available.

The Cython extension ``_ckernels`` is preferred; if it is missing (not
built, or ``WOUNDSEG_KERNELS=python`` is set) the numpy twins in
``_pykernels`` are used instead. ``BACKEND`` names the active choice.
"""
import os

from . import _pykernels

_FUNCS = ("im2col3", "col2im3", "maxpool2_fwd", "maxpool2_bwd", "upsample2_fwd", "upsample2_bwd")

_ext = None
if os.environ.get("WOUNDSEG_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _ext
    except ImportError:
        _ext = None

BACKEND = "cython" if _ext is not None else "python"
_impl = _ext if _ext is not None else _pykernels

im2col3 = _impl.im2col3
col2im3 = _impl.col2im3
maxpool2_fwd = _impl.maxpool2_fwd
maxpool2_bwd = _impl.maxpool2_bwd
upsample2_fwd = _impl.upsample2_fwd
upsample2_bwd = _impl.upsample2_bwd


def backends():
    """Map of backend name -> module for every importable implementation."""
    out = {"python": _pykernels}
    if _ext is not None:
        out["cython"] = _ext
    return out


__all__ = ["BACKEND", "backends", *_FUNCS]
