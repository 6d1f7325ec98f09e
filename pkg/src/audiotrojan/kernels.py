"""Kernel selection.

The compiled extension is used when it imported cleanly; otherwise the numpy
fallback is used. Set ``AUDIOTROJAN_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("AUDIOTROJAN_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python kernels forced by environment")
    from . import _ckernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"


def pv_stretch(mag, phase, time_steps, advance):
    return _impl.pv_stretch(
        np.ascontiguousarray(mag, dtype=np.float64),
        np.ascontiguousarray(phase, dtype=np.float64),
        np.ascontiguousarray(time_steps, dtype=np.float64),
        np.ascontiguousarray(advance, dtype=np.float64),
    )


def overlap_add(frames, window, hop):
    return _impl.overlap_add(
        np.ascontiguousarray(frames, dtype=np.float64),
        np.ascontiguousarray(window, dtype=np.float64),
        int(hop),
    )


def max_window_start(magnitude, length):
    return int(_impl.max_window_start(np.ascontiguousarray(magnitude, dtype=np.float64), int(length)))
