"""Backend selection for the conv/pool hot loops.

The compiled extension ``selfverify._ckernels`` is used when it imports;
otherwise the numpy implementation in ``selfverify._pykernels`` is used.
Set ``SELFVERIFY_BACKEND=python`` to force the fallback.
"""

import logging
import os

from . import _pykernels

logger = logging.getLogger(__name__)

BACKENDS = {"python": _pykernels}

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None
else:
    BACKENDS["cython"] = _ckernels

_requested = os.environ.get("SELFVERIFY_BACKEND", "").lower()
if _requested and _requested not in BACKENDS:
    logger.warning("backend %r unavailable, falling back", _requested)
    _requested = ""
BACKEND = _requested or ("cython" if "cython" in BACKENDS else "python")
_impl = BACKENDS[BACKEND]


def use_backend(name):
    """Switch the active backend at runtime (mainly for tests and benchmarks)."""
    global BACKEND, _impl
    if name not in BACKENDS:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {sorted(BACKENDS)}")
    BACKEND, _impl = name, BACKENDS[name]


def conv2d_forward(x, w, b, stride, pad):
    return _impl.conv2d_forward(x, w, b, stride, pad)


def conv2d_backward_input(gout, w, h, wd, stride, pad):
    return _impl.conv2d_backward_input(gout, w, h, wd, stride, pad)


def maxpool_forward(x, size, stride):
    return _impl.maxpool_forward(x, size, stride)


def maxpool_backward(gout, idx, h, wd):
    return _impl.maxpool_backward(gout, idx, h, wd)
